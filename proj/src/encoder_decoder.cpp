#include "hita/encoder_decoder.hpp"

#include <algorithm>

#include "hita/errors.hpp"

namespace hita {

namespace nn = torch::nn;

namespace {

auto group_norm(int64_t channels) -> nn::GroupNorm {
    return nn::GroupNorm(nn::GroupNormOptions(std::min<int64_t>(8, channels / 4), channels));
}

auto conv3x3(int64_t in, int64_t out, int64_t stride = 1) -> nn::Conv2d {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

// Nearest-neighbour x2 upsampling followed by a 3x3 conv.
class UpsampleImpl : public nn::Module {
public:
    explicit UpsampleImpl(int64_t channels) {
        conv = register_module("conv", conv3x3(channels, channels));
    }
    auto forward(const torch::Tensor& x) -> torch::Tensor {
        auto up = nn::functional::interpolate(
            x, nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
        return conv->forward(up);
    }

private:
    nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Upsample);

}    // namespace

auto PatchGrid::flatten() const -> torch::Tensor {
    return features.reshape({features.size(0), features.size(1) * features.size(2), features.size(3)});
}

auto PatchGrid::unflatten(const torch::Tensor& sequence, int64_t side) -> PatchGrid {
    if (sequence.dim() != 3 || sequence.size(1) != side * side) {
        throw ShapeError("cannot unflatten a sequence of length " + std::to_string(sequence.size(1)) +
                         " into a " + std::to_string(side) + "x" + std::to_string(side) + " grid");
    }
    return PatchGrid{sequence.reshape({sequence.size(0), side, side, sequence.size(2)})};
}

ResidualBlockImpl::ResidualBlockImpl(int64_t in_channels, int64_t out_channels) {
    norm1 = register_module("norm1", group_norm(in_channels));
    conv1 = register_module("conv1", conv3x3(in_channels, out_channels));
    norm2 = register_module("norm2", group_norm(out_channels));
    conv2 = register_module("conv2", conv3x3(out_channels, out_channels));
    if (in_channels != out_channels) {
        skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
    }
}

auto ResidualBlockImpl::forward(const torch::Tensor& x) -> torch::Tensor {
    auto h = conv1->forward(torch::silu(norm1->forward(x)));
    h = conv2->forward(torch::silu(norm2->forward(h)));
    return (skip ? skip->forward(x) : x) + h;
}

EncoderImpl::EncoderImpl(const PipelineConfig& config) : config_(config) {
    const auto channels = config.channels();
    conv_in = register_module("conv_in", conv3x3(3, channels.front()));
    stages = nn::Sequential();
    int64_t prev = channels.front();
    for (auto ch : channels) {
        stages->push_back(ResidualBlock(prev, ch));
        stages->push_back(conv3x3(ch, ch, 2));
        prev = ch;
    }
    register_module("stages", stages);
    mid = register_module("mid", ResidualBlock(prev, prev));
    norm_out = register_module("norm_out", group_norm(prev));
    conv_out = register_module("conv_out", nn::Conv2d(nn::Conv2dOptions(prev, config.embed_dim, 1)));
}

auto EncoderImpl::forward(const ImageBatch& images) -> PatchGrid {
    const auto& p = images.pixels;
    if (p.dim() != 4 || p.size(1) != config_.image_size || p.size(2) != config_.image_size || p.size(3) != 3) {
        throw ShapeError("encoder expects B x " + std::to_string(config_.image_size) + " x " +
                         std::to_string(config_.image_size) + " x 3 images");
    }
    auto h = conv_in->forward(images.nchw());
    h = stages->forward(h);
    h = mid->forward(h);
    h = conv_out->forward(torch::silu(norm_out->forward(h)));
    return PatchGrid{h.permute({0, 2, 3, 1})};
}

DecoderImpl::DecoderImpl(const PipelineConfig& config) : config_(config) {
    auto channels = config.channels();
    std::reverse(channels.begin(), channels.end());
    local_ = config.decoder_context == "local";
    if (local_) {
        conv_in = register_module("conv_in", nn::Conv2d(nn::Conv2dOptions(config.embed_dim, channels.front(), 1)));
    } else {
        conv_in = register_module("conv_in", conv3x3(config.embed_dim, channels.front()));
        mid = register_module("mid", ResidualBlock(channels.front(), channels.front()));
    }
    stages = nn::Sequential();
    for (size_t i = 0; i < channels.size(); ++i) {
        const int64_t next = i + 1 < channels.size() ? channels[i + 1] : channels.back();
        stages->push_back(Upsample(channels[i]));
        stages->push_back(ResidualBlock(channels[i], next));
    }
    register_module("stages", stages);
    norm_out = register_module("norm_out", group_norm(channels.back()));
    conv_out = register_module("conv_out", conv3x3(channels.back(), 3));
}

auto DecoderImpl::forward(const PatchGrid& grid) -> ImageBatch {
    const auto& f = grid.features;
    if (f.dim() != 4 || f.size(1) != config_.grid_side() || f.size(2) != config_.grid_side() ||
        f.size(3) != config_.embed_dim) {
        throw ShapeError("decoder expects B x " + std::to_string(config_.grid_side()) + " x " +
                         std::to_string(config_.grid_side()) + " x " + std::to_string(config_.embed_dim) + " grid");
    }
    auto h = conv_in->forward(f.permute({0, 3, 1, 2}));
    if (!local_) {
        h = mid->forward(h);
    }
    h = stages->forward(h);
    h = conv_out->forward(torch::silu(norm_out->forward(h)));
    return ImageBatch::from_nchw(torch::tanh(h));
}

auto encode_patches(Encoder& encoder, const ImageBatch& images) -> PatchGrid {
    return encoder->forward(images);
}

auto decode_grid(Decoder& decoder, const PatchGrid& grid) -> ImageBatch {
    return decoder->forward(grid);
}

}    // namespace hita

#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "hita/config.hpp"
#include "hita/data.hpp"

namespace hita {

// B x (H/f) x (W/f) x C feature grid. Flattening is raster order: cell (r, c)
// maps to sequence index r * (W/f) + c.
struct PatchGrid {
    torch::Tensor features;

    [[nodiscard]] auto side() const -> int64_t { return features.size(1); }
    [[nodiscard]] auto flatten() const -> torch::Tensor;    // B x G x C
    static auto unflatten(const torch::Tensor& sequence, int64_t side) -> PatchGrid;
};

class ResidualBlockImpl : public torch::nn::Module {
public:
    ResidualBlockImpl(int64_t in_channels, int64_t out_channels);
    auto forward(const torch::Tensor& x) -> torch::Tensor;

private:
    torch::nn::GroupNorm norm1{nullptr};
    torch::nn::Conv2d conv1{nullptr};
    torch::nn::GroupNorm norm2{nullptr};
    torch::nn::Conv2d conv2{nullptr};
    torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Residual conv stack with log2(f) stride-2 stages, ending in a 1x1 projection
// to embed_dim.
class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const PipelineConfig& config);
    auto forward(const ImageBatch& images) -> PatchGrid;

private:
    PipelineConfig config_;
    torch::nn::Conv2d conv_in{nullptr};
    torch::nn::Sequential stages{nullptr};
    ResidualBlock mid{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Encoder);

// Mirror of the encoder with nearest-neighbour upsampling and a tanh head.
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const PipelineConfig& config);
    auto forward(const PatchGrid& grid) -> ImageBatch;

private:
    PipelineConfig config_;
    bool local_ = false;
    torch::nn::Conv2d conv_in{nullptr};
    ResidualBlock mid{nullptr};    // absent when decoder_context is local
    torch::nn::Sequential stages{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Decoder);

auto encode_patches(Encoder& encoder, const ImageBatch& images) -> PatchGrid;
auto decode_grid(Decoder& decoder, const PatchGrid& grid) -> ImageBatch;

}    // namespace hita

#include "hita/fusion.hpp"

#include "hita/errors.hpp"

namespace hita {

TokenFusionImpl::TokenFusionImpl(const PipelineConfig& config)
    : num_holistic_(config.holistic_count()), grid_size_(config.grid_size()) {
    const auto width = config.embed_dim;
    pos = register_parameter("pos", torch::randn({num_holistic_ + grid_size_, width}) * 0.02);
    if (config.fusion_mode != FusionMode::select) {
        mask_token = register_parameter("mask_token", torch::zeros({width}));
    }
    blocks = register_module("blocks", TransformerStack(config.transformer_depth, width, config.attention_heads(),
                                                        AttentionMask::causal));
}

auto TokenFusionImpl::fuse(const torch::Tensor& holistic_codes, const torch::Tensor& patch_codes) -> FusedSequence {
    if (holistic_codes.size(1) != num_holistic_ || patch_codes.size(1) != grid_size_) {
        throw ShapeError("fusion expects " + std::to_string(num_holistic_) + " holistic and " +
                         std::to_string(grid_size_) + " patch positions, got " +
                         std::to_string(holistic_codes.size(1)) + " and " + std::to_string(patch_codes.size(1)));
    }
    auto x = torch::cat({holistic_codes, patch_codes}, 1) + pos;
    auto out = blocks->forward(x);
    return FusedSequence{out.slice(1, 0, num_holistic_), out.slice(1, num_holistic_, num_holistic_ + grid_size_)};
}

auto TokenFusionImpl::mask_patch_inputs(const torch::Tensor& patch_codes, FusionMode mode, int64_t k)
    -> torch::Tensor {
    if (mode == FusionMode::select) {
        return patch_codes;
    }
    if (!mask_token.defined()) {
        throw StateError("fusion module was built without a mask token");
    }
    const int64_t masked = mode == FusionMode::full ? grid_size_ : k;
    if (masked < 0 || masked > grid_size_) {
        throw ValidationError("mask length outside [0, G]");
    }
    if (masked == 0) {
        return patch_codes;
    }
    auto fill = mask_token.view({1, 1, -1}).expand({patch_codes.size(0), masked, patch_codes.size(2)});
    return torch::cat({fill, patch_codes.slice(1, masked, grid_size_)}, 1);
}

void TokenFusionImpl::make_identity() {
    torch::NoGradGuard no_grad;
    pos.zero_();
    blocks->make_identity();
}

auto select_and_assemble(const FusedSequence& fused, int64_t k, int64_t side) -> PatchGrid {
    const int64_t holistic = fused.holistic.size(1);
    const int64_t grid = fused.patch.size(1);
    if (grid != side * side) {
        throw ShapeError("patch stream length does not match the grid");
    }
    if (k < 0 || k > grid || k > holistic) {
        throw ValidationError("selection length k=" + std::to_string(k) + " outside [0, min(M, G)] = [0, " +
                              std::to_string(std::min(holistic, grid)) + "]");
    }
    auto seq = torch::cat({fused.holistic.slice(1, holistic - k, holistic), fused.patch.slice(1, 0, grid - k)}, 1);
    return PatchGrid::unflatten(seq, side);
}

auto assemble_variant(const FusedSequence& fused, FusionMode mode, int64_t side) -> PatchGrid {
    if (mode == FusionMode::select) {
        throw ValidationError("assemble_variant expects the partial or full mode");
    }
    return PatchGrid::unflatten(fused.patch, side);
}

}    // namespace hita

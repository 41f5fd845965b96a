#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "hita/config.hpp"
#include "hita/encoder_decoder.hpp"
#include "hita/layers.hpp"

namespace hita {

struct FusedSequence {
    torch::Tensor holistic;    // B x M x C
    torch::Tensor patch;       // B x G x C
};

// Causal transformer over [holistic | patch] with learned absolute position
// embeddings over all M + G slots.
class TokenFusionImpl : public torch::nn::Module {
public:
    explicit TokenFusionImpl(const PipelineConfig& config);

    auto fuse(const torch::Tensor& holistic_codes, const torch::Tensor& patch_codes) -> FusedSequence;

    // Partial: the first k patch inputs become the mask token. Full: all G do.
    // The fusion position embedding is added inside fuse(), so every masked
    // slot enters the transformer as mask token + its position embedding.
    auto mask_patch_inputs(const torch::Tensor& patch_codes, FusionMode mode, int64_t k) -> torch::Tensor;

    void make_identity();

    torch::Tensor pos;           // (M + G) x C
    torch::Tensor mask_token;    // C, present for partial / full modes
    TransformerStack blocks{nullptr};

private:
    int64_t num_holistic_;
    int64_t grid_size_;
};
TORCH_MODULE(TokenFusion);

// Grid slot t < k reads holistic output M - k + t; slot t >= k reads patch
// output t - k. Reshaped row-major to side x side.
auto select_and_assemble(const FusedSequence& fused, int64_t k, int64_t side) -> PatchGrid;

// Partial / full variants: the grid is the fused patch stream, whose masked
// slots were produced from the mask token (see mask_patch_inputs).
auto assemble_variant(const FusedSequence& fused, FusionMode mode, int64_t side) -> PatchGrid;

}    // namespace hita

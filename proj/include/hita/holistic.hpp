#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "hita/config.hpp"
#include "hita/encoder_decoder.hpp"
#include "hita/layers.hpp"
#include "hita/providers.hpp"

namespace hita {

enum class LatentStage { mixed, causal_aligned };

// Holistic positions always precede patch positions; patches are raster order.
struct LatentSequence {
    torch::Tensor holistic;    // B x M x C
    torch::Tensor patch;       // B x G x C
    LatentStage stage = LatentStage::mixed;
};

// Learnable query bank plus the two pre-quantisation transformers: a
// bidirectional mixer over [queries | patches | semantic tokens] and a causal
// aligner over [holistic | patches].
class HolisticExtractorImpl : public torch::nn::Module {
public:
    HolisticExtractorImpl(const PipelineConfig& config, int64_t semantic_dim);

    auto mix(const PatchGrid& patches, const SemanticFeatures& semantic) -> LatentSequence;
    auto causal_align(const LatentSequence& sequence) -> LatentSequence;

    // Zeroes embeddings and residual branches so both stages pass inputs through.
    void make_identity();

    [[nodiscard]] auto num_queries() const -> int64_t { return num_queries_; }

    torch::Tensor queries;            // M x C (undefined with queries off)
    torch::Tensor patch_pos;          // G x C
    torch::Tensor semantic_segment;   // C (undefined without semantic injection)
    torch::nn::Linear semantic_proj{nullptr};
    TransformerStack mixer{nullptr};
    TransformerStack aligner{nullptr};

private:
    int64_t num_queries_;
    int64_t grid_size_;
    int64_t embed_dim_;
    int64_t semantic_dim_;
};
TORCH_MODULE(HolisticExtractor);

}    // namespace hita

#include "hita/holistic.hpp"

#include "hita/errors.hpp"

namespace hita {

HolisticExtractorImpl::HolisticExtractorImpl(const PipelineConfig& config, int64_t semantic_dim)
    : num_queries_(config.holistic_count()),
      grid_size_(config.grid_size()),
      embed_dim_(config.embed_dim),
      semantic_dim_(semantic_dim) {
    const auto width = config.embed_dim;
    const auto heads = config.attention_heads();
    if (num_queries_ > 0) {
        queries = register_parameter("queries", torch::randn({num_queries_, width}) * 0.02);
    }
    patch_pos = register_parameter("patch_pos", torch::randn({grid_size_, width}) * 0.02);
    if (semantic_dim_ > 0) {
        semantic_proj = register_module("semantic_proj", torch::nn::Linear(semantic_dim_, width));
        semantic_segment = register_parameter("semantic_segment", torch::randn({width}) * 0.02);
    }
    mixer = register_module("mixer", TransformerStack(config.transformer_depth, width, heads, AttentionMask::full));
    aligner =
        register_module("aligner", TransformerStack(config.transformer_depth, width, heads, AttentionMask::causal));
}

auto HolisticExtractorImpl::mix(const PatchGrid& patches, const SemanticFeatures& semantic) -> LatentSequence {
    auto flat = patches.flatten();
    if (flat.size(1) != grid_size_ || flat.size(2) != embed_dim_) {
        throw ShapeError("mixer expects " + std::to_string(grid_size_) + " patches of width " +
                         std::to_string(embed_dim_));
    }
    const int64_t batch = flat.size(0);
    std::vector<torch::Tensor> parts;
    if (num_queries_ > 0) {
        parts.push_back(queries.unsqueeze(0).expand({batch, num_queries_, embed_dim_}));
    }
    parts.push_back(flat + patch_pos);
    const bool inject = semantic.features.defined() && semantic.features.numel() > 0;
    if (inject) {
        if (semantic_dim_ == 0 || semantic.features.size(2) != semantic_dim_ || semantic.features.size(0) != batch) {
            throw ShapeError("semantic features of width " + std::to_string(semantic.features.size(2)) +
                             " do not match the projection width " + std::to_string(semantic_dim_));
        }
        // the provider is frozen: no gradient flows back into it
        parts.push_back(semantic_proj->forward(semantic.features.detach()) + semantic_segment);
    }
    auto out = mixer->forward(torch::cat(parts, 1));
    return LatentSequence{out.slice(1, 0, num_queries_), out.slice(1, num_queries_, num_queries_ + grid_size_),
                          LatentStage::mixed};
}

auto HolisticExtractorImpl::causal_align(const LatentSequence& sequence) -> LatentSequence {
    if (sequence.stage != LatentStage::mixed) {
        throw StateError("causal_align expects a mixed latent sequence");
    }
    const int64_t holistic = sequence.holistic.size(1);
    auto out = aligner->forward(torch::cat({sequence.holistic, sequence.patch}, 1));
    return LatentSequence{out.slice(1, 0, holistic), out.slice(1, holistic, out.size(1)),
                          LatentStage::causal_aligned};
}

void HolisticExtractorImpl::make_identity() {
    torch::NoGradGuard no_grad;
    patch_pos.zero_();
    mixer->make_identity();
    aligner->make_identity();
}

}    // namespace hita

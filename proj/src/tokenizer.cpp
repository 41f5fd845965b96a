#include "hita/tokenizer.hpp"

#include "hita/errors.hpp"

namespace hita {

HolisticTokenizerImpl::HolisticTokenizerImpl(const PipelineConfig& config)
    : config_(config), semantic_provider_(make_semantic_provider(config.semantic_provider, config)) {
    config_.validate();
    encoder = register_module("encoder", Encoder(config_));
    extractor = register_module("extractor", HolisticExtractor(config_, semantic_provider_->feature_dim()));
    if (has_holistic()) {
        holistic_proj = register_module("holistic_proj", CodeProjection(config_.embed_dim, config_.holistic_code_dim));
        holistic_book = register_module(
            "holistic_book", Codebook(config_.codebook_size, config_.holistic_code_dim, CodebookRole::holistic));
    }
    patch_proj = register_module("patch_proj", CodeProjection(config_.embed_dim, config_.patch_code_dim));
    patch_book =
        register_module("patch_book", Codebook(config_.codebook_size, config_.patch_code_dim, CodebookRole::patch));
    fusion = register_module("fusion", TokenFusion(config_));
    decoder = register_module("decoder", Decoder(config_));
}

auto HolisticTokenizerImpl::fuse_and_decode(const torch::Tensor& holistic_codes, const torch::Tensor& patch_codes)
    -> Decoded {
    const auto mode = config_.fusion_mode;
    auto patch_in = fusion->mask_patch_inputs(patch_codes, mode, config_.selection_k);
    auto fused = fusion->fuse(holistic_codes, patch_in);
    auto grid = mode == FusionMode::select ? select_and_assemble(fused, config_.selection_k, config_.grid_side())
                                           : assemble_variant(fused, mode, config_.grid_side());
    return Decoded{fused, decoder->forward(grid)};
}

auto HolisticTokenizerImpl::forward(const ImageBatch& images, bool count_usage) -> TokenizerOutput {
    auto grid = encoder->forward(images);
    auto semantic = semantic_provider_->extract(images);
    auto mixed = extractor->mix(grid, semantic);
    auto aligned = extractor->causal_align(mixed);

    TokenizerOutput out;
    out.aligned = aligned;
    out.patch_pre = patch_proj->project_and_normalize(aligned.patch);
    out.patch = quantize_nearest(out.patch_pre, patch_book, count_usage);
    auto patch_codes = patch_proj->expand(straight_through(out.patch_pre, out.patch));

    torch::Tensor holistic_codes;
    if (has_holistic()) {
        out.holistic_pre = holistic_proj->project_and_normalize(aligned.holistic);
        out.holistic = quantize_nearest(out.holistic_pre, holistic_book, count_usage);
        holistic_codes = holistic_proj->expand(straight_through(out.holistic_pre, out.holistic));
    } else {
        const auto batch = images.size();
        holistic_codes = torch::zeros({batch, 0, config_.embed_dim}, patch_codes.options());
        out.holistic_pre = torch::zeros({batch, 0, config_.holistic_code_dim}, patch_codes.options());
        out.holistic = QuantizedTokens{torch::zeros({batch, 0}, torch::kInt64), out.holistic_pre,
                                       CodebookRole::holistic};
    }
    auto decoded = fuse_and_decode(holistic_codes, patch_codes);
    out.fused = decoded.fused;
    out.reconstruction = decoded.images;
    out.reconstruction.labels = images.labels;
    return out;
}

auto HolisticTokenizerImpl::tokenize(const ImageBatch& images, bool count_usage) -> TokenIds {
    torch::NoGradGuard no_grad;
    auto grid = encoder->forward(images);
    auto aligned = extractor->causal_align(extractor->mix(grid, semantic_provider_->extract(images)));
    TokenIds ids;
    ids.patch = quantize_nearest(patch_proj->project_and_normalize(aligned.patch), patch_book, count_usage).ids;
    if (has_holistic()) {
        ids.holistic =
            quantize_nearest(holistic_proj->project_and_normalize(aligned.holistic), holistic_book, count_usage).ids;
    } else {
        ids.holistic = torch::zeros({images.size(), 0}, torch::kInt64);
    }
    return ids;
}

auto HolisticTokenizerImpl::decode_tokens(const TokenIds& ids) -> ImageBatch {
    torch::NoGradGuard no_grad;
    if (ids.holistic.size(1) != config_.holistic_count() || ids.patch.size(1) != config_.grid_size()) {
        throw ShapeError("token ids do not match the tokenizer layout (M=" + std::to_string(config_.holistic_count()) +
                         ", G=" + std::to_string(config_.grid_size()) + ")");
    }
    auto patch_codes = patch_proj->expand(dequantize(ids.patch, patch_book));
    torch::Tensor holistic_codes;
    if (has_holistic()) {
        holistic_codes = holistic_proj->expand(dequantize(ids.holistic, holistic_book));
    } else {
        holistic_codes = torch::zeros({ids.patch.size(0), 0, config_.embed_dim}, patch_codes.options());
    }
    return fuse_and_decode(holistic_codes, patch_codes).images;
}

auto HolisticTokenizerImpl::reconstruct(const ImageBatch& images) -> ImageBatch {
    torch::NoGradGuard no_grad;
    auto out = forward(images, false).reconstruction;
    out.labels = images.labels;
    return out;
}

auto HolisticTokenizerImpl::probe_features(const ImageBatch& images) -> torch::Tensor {
    torch::NoGradGuard no_grad;
    auto out = forward(images, false);
    if (has_holistic()) {
        return out.fused.holistic.mean(1);
    }
    return out.fused.patch.mean(1);
}

void HolisticTokenizerImpl::reset_usage() {
    patch_book->reset_usage();
    if (has_holistic()) {
        holistic_book->reset_usage();
    }
}

void HolisticTokenizerImpl::renormalize_codebooks() {
    patch_book->renormalize();
    if (has_holistic()) {
        holistic_book->renormalize();
    }
}

}    // namespace hita

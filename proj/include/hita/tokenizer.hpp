#pragma once

#include <memory>

#include <torch/torch.h>

#include "hita/config.hpp"
#include "hita/data.hpp"
#include "hita/encoder_decoder.hpp"
#include "hita/fusion.hpp"
#include "hita/holistic.hpp"
#include "hita/providers.hpp"
#include "hita/quantizer.hpp"

namespace hita {

// Discrete ids of one or more images: B x M holistic then B x G patch ids.
struct TokenIds {
    torch::Tensor holistic;
    torch::Tensor patch;
};

struct TokenizerOutput {
    ImageBatch reconstruction;
    torch::Tensor holistic_pre;    // B x M x Dh, unit rows
    torch::Tensor patch_pre;       // B x G x Dp, unit rows
    QuantizedTokens holistic;
    QuantizedTokens patch;
    LatentSequence aligned;
    FusedSequence fused;
};

// The full holistic-to-local tokenizer: encoder, query extractor, two
// codebooks, causal token fusion and decoder.
class HolisticTokenizerImpl : public torch::nn::Module {
public:
    explicit HolisticTokenizerImpl(const PipelineConfig& config);

    auto forward(const ImageBatch& images, bool count_usage = true) -> TokenizerOutput;

    auto tokenize(const ImageBatch& images, bool count_usage = false) -> TokenIds;
    auto decode_tokens(const TokenIds& ids) -> ImageBatch;
    auto reconstruct(const ImageBatch& images) -> ImageBatch;

    // Mean-pooled fusion outputs: holistic slots when queries exist, patch
    // slots otherwise (B x C).
    auto probe_features(const ImageBatch& images) -> torch::Tensor;

    void reset_usage();
    void renormalize_codebooks();

    [[nodiscard]] auto config() const -> const PipelineConfig& { return config_; }
    [[nodiscard]] auto semantic() const -> const SemanticProvider& { return *semantic_provider_; }
    [[nodiscard]] auto has_holistic() const -> bool { return config_.holistic_count() > 0; }

    Encoder encoder{nullptr};
    HolisticExtractor extractor{nullptr};
    CodeProjection holistic_proj{nullptr};
    CodeProjection patch_proj{nullptr};
    Codebook holistic_book{nullptr};
    Codebook patch_book{nullptr};
    TokenFusion fusion{nullptr};
    Decoder decoder{nullptr};

private:
    struct Decoded {
        FusedSequence fused;
        ImageBatch images;
    };
    auto fuse_and_decode(const torch::Tensor& holistic_codes, const torch::Tensor& patch_codes) -> Decoded;

    PipelineConfig config_;
    std::shared_ptr<SemanticProvider> semantic_provider_;
};
TORCH_MODULE(HolisticTokenizer);

}    // namespace hita

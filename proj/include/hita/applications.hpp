#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "hita/ar.hpp"
#include "hita/data.hpp"
#include "hita/providers.hpp"
#include "hita/tokenizer.hpp"

namespace hita {

struct StyleTransferResult {
    ImageBatch images;
    TokenIds ids;    // holistic ids of the reference, patch ids of the content
};

// Holistic tokens of `reference` with patch tokens of `content`, decoded.
auto style_transfer(HolisticTokenizer& tokenizer, const ImageBatch& content, const ImageBatch& reference)
    -> StyleTransferResult;

struct InpaintOptions {
    double visible_fraction = 0.5;
    int64_t class_id = 0;
    bool generate_holistic = false;    // sample holistic ids instead of reading them from the partial image
    SamplingOptions sampling;
};

struct InpaintResult {
    ImageBatch images;
    ImageBatch partial;    // input with the hidden rows set to zero
    std::vector<ForcedTokens> prefix;
    std::vector<TokenSequence> sequences;
    int64_t visible_rows = 0;    // patch rows entirely inside the visible band
};

// Patch rows fully inside the top `fraction` of an image; throws
// ValidationError when that is zero or the fraction is outside (0, 1].
auto visible_patch_rows(double fraction, const PipelineConfig& config) -> int64_t;

auto inpaint(HolisticTokenizer& tokenizer, ARModel& model, const ImageBatch& images, const InpaintOptions& options)
    -> InpaintResult;

// Mean cosine similarity of pooled features, in [-1, 1].
auto consistency_score(const ImageBatch& original, const ImageBatch& completed,
                       const std::shared_ptr<PooledFeatureProvider>& provider) -> double;

struct ProbeResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

// Standardised features, full-batch multinomial logistic regression, held-out
// top-1 accuracy. Features are N x F, labels N.
auto linear_probe(const torch::Tensor& train_features, const torch::Tensor& train_labels,
                  const torch::Tensor& test_features, const torch::Tensor& test_labels, double l2 = 1e-3)
    -> ProbeResult;

// Mean-pooled probe features of a whole corpus.
auto corpus_features(HolisticTokenizer& tokenizer, const Corpus& corpus, int64_t batch_size = 64) -> torch::Tensor;

auto tokenizer_probe(HolisticTokenizer& tokenizer, const Corpus& train, const Corpus& test) -> ProbeResult;

// Sum of all parameters and buffers in double precision.
auto parameter_checksum(const torch::nn::Module& module) -> double;

}    // namespace hita

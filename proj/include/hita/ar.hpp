#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "hita/config.hpp"
#include "hita/layers.hpp"

namespace hita {

enum class TokenKind : uint8_t { holistic, patch };

// M holistic ids followed by G raster-ordered patch ids. Ids are raw code
// indices in [0, N) of their own book; the kind tag says which book.
struct TokenSequence {
    std::vector<int64_t> ids;
    std::vector<TokenKind> kinds;
    int64_t class_id = 0;
};

// Vocabulary layout: holistic ids at [0, N), patch ids at [N, 2N), class
// slots at [2N, 2N + classes], the last slot being the null class.
struct ARLayout {
    int64_t holistic = 0;
    int64_t grid_side = 0;
    int64_t codebook_size = 0;
    int64_t num_classes = 0;

    static auto from(const PipelineConfig& config) -> ARLayout;

    [[nodiscard]] auto grid_size() const -> int64_t { return grid_side * grid_side; }
    [[nodiscard]] auto length() const -> int64_t { return holistic + grid_size(); }
    [[nodiscard]] auto null_class() const -> int64_t { return num_classes; }
    [[nodiscard]] auto kind(int64_t position) const -> TokenKind {
        return position < holistic ? TokenKind::holistic : TokenKind::patch;
    }
    [[nodiscard]] auto offset(int64_t position) const -> int64_t {
        return kind(position) == TokenKind::holistic ? 0 : codebook_size;
    }
};

// Decoder-only causal transformer. Input position 0 is the class token;
// input position i > 0 holds token i - 1 and output position i predicts
// token i. Holistic inputs get learned absolute embeddings, patch inputs get
// 2D rotary embedding inside attention.
class ARModelImpl : public torch::nn::Module {
public:
    explicit ARModelImpl(const PipelineConfig& config);

    // ids: B x t raw ids (t <= L - 1 for training, any prefix for sampling),
    // classes: B class slots (num_classes = null). Returns B x (t + 1) x 2N
    // logits; the wrong segment for each output position is filled with -1e9.
    auto forward_logits(const torch::Tensor& ids, const torch::Tensor& classes) -> torch::Tensor;

    // Embedded inputs B x T x W (class token first) -> masked logits.
    auto embed(const torch::Tensor& ids, const torch::Tensor& classes) -> torch::Tensor;
    auto forward_embedded(const torch::Tensor& hidden) -> torch::Tensor;

    [[nodiscard]] auto rotary_positions(int64_t input_length) const -> RotaryPositions;
    [[nodiscard]] auto layout() const -> const ARLayout& { return layout_; }

    torch::nn::Embedding tokens{nullptr};
    torch::Tensor holistic_pos;    // M x W
    TransformerStack blocks{nullptr};
    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear head{nullptr};

private:
    ARLayout layout_;
};
TORCH_MODULE(ARModel);

constexpr double kMaskedLogit = -1e9;

// Mean next-token cross-entropy over all M + G positions of B x L sequences.
// With probability class_dropout_prob a row's class becomes the null class.
auto ar_loss(ARModel& model, const torch::Tensor& ids, const torch::Tensor& classes, double class_dropout_prob = 0.0,
             std::optional<torch::Generator> generator = std::nullopt) -> torch::Tensor;

// cond + (s - 1) * (cond - uncond): equals uncond + s * (cond - uncond) and is
// exactly cond at s = 1.
auto guided_logits(const torch::Tensor& cond, const torch::Tensor& uncond, double scale) -> torch::Tensor;

struct SamplingOptions {
    double cfg_scale = 1.0;
    double temperature = 1.0;    // 0 = greedy
    int64_t top_k = 0;           // 0 = off
    uint64_t seed = 0;
};

// Per position: a fixed id (prefix / teacher forced) or nullopt (sampled).
using ForcedTokens = std::vector<std::optional<int64_t>>;

// Autoregressive sampling of rows in parallel; forced positions are copied
// verbatim and never resampled.
auto complete_batch(ARModel& model, const std::vector<int64_t>& class_ids, const std::vector<ForcedTokens>& forced,
                    const SamplingOptions& options) -> std::vector<TokenSequence>;

auto complete(ARModel& model, int64_t class_id, const ForcedTokens& forced, const SamplingOptions& options)
    -> TokenSequence;

auto generate(ARModel& model, int64_t class_id, const SamplingOptions& options) -> TokenSequence;

// Token sequences of a corpus: ids B x L (holistic first), labels B.
struct TokenDataset {
    torch::Tensor ids;
    torch::Tensor labels;

    [[nodiscard]] auto size() const -> int64_t { return ids.size(0); }
};

struct ARTrainOptions {
    int64_t steps = 500;
    std::function<void(int64_t step, double loss)> on_report;
};

struct ARRun {
    ARModel model{nullptr};
    std::vector<double> losses;
};

auto train_ar(const PipelineConfig& config, const TokenDataset& data, const ARTrainOptions& options) -> ARRun;

// Mean cross-entropy with true classes and no dropout, eval mode.
auto mean_cross_entropy(ARModel& model, const TokenDataset& data, int64_t batch_size = 128) -> double;

auto to_sequence(const torch::Tensor& row, int64_t class_id, const ARLayout& layout) -> TokenSequence;

}    // namespace hita

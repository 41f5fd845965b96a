#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

namespace hita {

enum class CodebookRole { holistic, patch };

auto to_string(CodebookRole role) -> std::string;

// N x D unit-norm code vectors plus per-code assignment counters. The counters
// are a buffer: they are saved with checkpoints but never trained.
class CodebookImpl : public torch::nn::Module {
public:
    CodebookImpl(int64_t size, int64_t dim, CodebookRole role);

    // Projects every row back onto the unit sphere (call after each update).
    void renormalize();
    void reset_usage();
    // Replaces never-used rows with random rows of `latents` (L x D).
    void reseed_dead(const torch::Tensor& latents);
    // Replaces every row with a distinct random row of `latents` (with
    // repetition only when L < N).
    void seed_from(const torch::Tensor& latents);

    [[nodiscard]] auto role() const -> CodebookRole { return role_; }
    [[nodiscard]] auto size() const -> int64_t { return vectors.size(0); }
    [[nodiscard]] auto dim() const -> int64_t { return vectors.size(1); }

    torch::Tensor vectors;
    torch::Tensor usage;

private:
    CodebookRole role_;
};
TORCH_MODULE(Codebook);

// Learned C -> D projection followed by l2 normalisation, and the D -> C map
// back for the decode path.
class CodeProjectionImpl : public torch::nn::Module {
public:
    CodeProjectionImpl(int64_t width, int64_t code_dim);

    auto project_and_normalize(const torch::Tensor& latents) -> torch::Tensor;
    auto expand(const torch::Tensor& codes) -> torch::Tensor;

    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear down{nullptr};
    torch::nn::Linear up{nullptr};
};
TORCH_MODULE(CodeProjection);

// x / (||x|| + 1e-8) along the last dimension.
auto l2_normalize(const torch::Tensor& x) -> torch::Tensor;

struct QuantizedTokens {
    torch::Tensor ids;      // B x L, int64 in [0, N)
    torch::Tensor codes;    // B x L x D, exact rows of the book
    CodebookRole role = CodebookRole::patch;
};

// Nearest code under Euclidean distance, lowest index on ties. Increments the
// book's usage counters when `count_usage` is set.
auto quantize_nearest(const torch::Tensor& inputs, Codebook& book, bool count_usage = true) -> QuantizedTokens;

// Rows of the book for the given ids (B x L -> B x L x D).
auto dequantize(const torch::Tensor& ids, const Codebook& book) -> torch::Tensor;

// Forward value is exactly the codes; the backward pass hands the incoming
// gradient to `pre` unchanged. No gradient reaches the codes through this path.
auto straight_through(const torch::Tensor& pre, const QuantizedTokens& post) -> torch::Tensor;

// mean over positions of ||sg(pre) - codes||^2 + beta * ||sg(codes) - pre||^2.
auto vq_loss(const torch::Tensor& pre, const torch::Tensor& codes, double beta) -> torch::Tensor;

// Fraction of rows assigned at least once since the last reset_usage().
// Throws StateError when no assignment was recorded.
auto usage_stats(const Codebook& book) -> double;

}    // namespace hita

#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace hita {

enum class AttentionMask { full, causal };

// Additive L x L mask: 0 on and below the diagonal, -inf above it.
auto causal_mask(int64_t length, const torch::TensorOptions& options) -> torch::Tensor;

// Per-position row/column indices for 2D rotary embedding. Positions that are
// not grid cells carry (0, 0), which makes the rotation the identity.
struct RotaryPositions {
    torch::Tensor rows;    // L, float
    torch::Tensor cols;    // L, float
};

// Rotates x (B x heads x L x head_dim): the first half of head_dim by row
// angle, the second half by column angle, each half with the usual
// base^(-2i/half) frequency ladder over adjacent pairs.
auto apply_rotary_2d(const torch::Tensor& x, const RotaryPositions& positions, double base = 10000.0) -> torch::Tensor;

// Attention logits q.k / sqrt(d) between two rotated single-head vectors.
auto rotary_logit(const torch::Tensor& q, const torch::Tensor& k, int64_t row_q, int64_t col_q, int64_t row_k,
                  int64_t col_k) -> torch::Tensor;

class MultiHeadAttentionImpl : public torch::nn::Module {
public:
    MultiHeadAttentionImpl(int64_t width, int64_t heads);

    auto forward(const torch::Tensor& x, const torch::Tensor& mask, const RotaryPositions* rotary = nullptr)
        -> torch::Tensor;

    torch::nn::Linear qkv{nullptr};
    torch::nn::Linear proj{nullptr};

private:
    int64_t width_;
    int64_t heads_;
};
TORCH_MODULE(MultiHeadAttention);

// Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x)); MLP ratio 4, GELU.
class TransformerBlockImpl : public torch::nn::Module {
public:
    TransformerBlockImpl(int64_t width, int64_t heads, double dropout = 0.0);

    auto forward(const torch::Tensor& x, const torch::Tensor& mask, const RotaryPositions* rotary = nullptr)
        -> torch::Tensor;

    // Zeroes the residual branches so the block is the identity map.
    void make_identity();

    torch::nn::LayerNorm ln1{nullptr};
    torch::nn::LayerNorm ln2{nullptr};
    MultiHeadAttention attn{nullptr};
    torch::nn::Linear fc1{nullptr};
    torch::nn::Linear fc2{nullptr};
    torch::nn::Dropout drop{nullptr};
};
TORCH_MODULE(TransformerBlock);

class TransformerStackImpl : public torch::nn::Module {
public:
    TransformerStackImpl(int64_t depth, int64_t width, int64_t heads, AttentionMask mask, double dropout = 0.0);

    auto forward(const torch::Tensor& x, const RotaryPositions* rotary = nullptr) -> torch::Tensor;

    void make_identity();
    [[nodiscard]] auto mask_kind() const -> AttentionMask { return mask_; }

    torch::nn::ModuleList blocks;

private:
    AttentionMask mask_;
};
TORCH_MODULE(TransformerStack);

}    // namespace hita

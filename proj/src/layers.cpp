#include "hita/layers.hpp"

#include <cmath>
#include <limits>

namespace hita {

auto causal_mask(int64_t length, const torch::TensorOptions& options) -> torch::Tensor {
    auto upper = torch::ones({length, length}, options.dtype(torch::kBool)).triu(1);
    return torch::zeros({length, length}, options).masked_fill(upper, -std::numeric_limits<double>::infinity());
}

namespace {

// Rotates adjacent pairs of `half` (... x L x n) by angle pos * freq_i.
auto rotate_pairs(const torch::Tensor& half, const torch::Tensor& pos, double base) -> torch::Tensor {
    const int64_t n = half.size(-1);
    auto opts = half.options();
    auto freq = torch::pow(base, -torch::arange(0, n, 2, opts) / static_cast<double>(n));    // n/2
    auto angle = pos.to(opts.dtype()).unsqueeze(-1) * freq;                                   // L x n/2
    auto cos = torch::cos(angle);
    auto sin = torch::sin(angle);
    auto pairs = half.unflatten(-1, {n / 2, 2});
    auto even = pairs.select(-1, 0);
    auto odd = pairs.select(-1, 1);
    auto rot_even = even * cos - odd * sin;
    auto rot_odd = even * sin + odd * cos;
    return torch::stack({rot_even, rot_odd}, -1).flatten(-2);
}

}    // namespace

auto apply_rotary_2d(const torch::Tensor& x, const RotaryPositions& positions, double base) -> torch::Tensor {
    const int64_t dim = x.size(-1);
    auto halves = x.split(dim / 2, -1);
    auto row_part = rotate_pairs(halves[0], positions.rows, base);
    auto col_part = rotate_pairs(halves[1], positions.cols, base);
    return torch::cat({row_part, col_part}, -1);
}

auto rotary_logit(const torch::Tensor& q, const torch::Tensor& k, int64_t row_q, int64_t col_q, int64_t row_k,
                  int64_t col_k) -> torch::Tensor {
    auto opts = torch::TensorOptions().dtype(q.dtype());
    RotaryPositions pq{torch::full({1}, static_cast<double>(row_q), opts), torch::full({1}, static_cast<double>(col_q), opts)};
    RotaryPositions pk{torch::full({1}, static_cast<double>(row_k), opts), torch::full({1}, static_cast<double>(col_k), opts)};
    auto rq = apply_rotary_2d(q.reshape({1, -1}), pq);
    auto rk = apply_rotary_2d(k.reshape({1, -1}), pk);
    return (rq * rk).sum() / std::sqrt(static_cast<double>(q.numel()));
}

namespace {

// N(0, 0.02) weights and zero bias.
auto small_linear(int64_t in, int64_t out) -> torch::nn::Linear {
    torch::nn::Linear layer(in, out);
    torch::NoGradGuard no_grad;
    layer->weight.normal_(0.0, 0.02);
    layer->bias.zero_();
    return layer;
}

}    // namespace

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t width, int64_t heads) : width_(width), heads_(heads) {
    qkv = register_module("qkv", small_linear(width, 3 * width));
    proj = register_module("proj", small_linear(width, width));
}

auto MultiHeadAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& mask,
                                     const RotaryPositions* rotary) -> torch::Tensor {
    const int64_t batch = x.size(0);
    const int64_t length = x.size(1);
    const int64_t head_dim = width_ / heads_;
    auto packed = qkv->forward(x).view({batch, length, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
    auto q = packed[0];
    auto k = packed[1];
    auto v = packed[2];
    if (rotary != nullptr) {
        q = apply_rotary_2d(q, *rotary);
        k = apply_rotary_2d(k, *rotary);
    }
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    if (mask.defined()) {
        scores = scores + mask;
    }
    auto weights = torch::softmax(scores, -1);
    auto out = torch::matmul(weights, v).permute({0, 2, 1, 3}).reshape({batch, length, width_});
    return proj->forward(out);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t width, int64_t heads, double dropout) {
    ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    attn = register_module("attn", MultiHeadAttention(width, heads));
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    fc1 = register_module("fc1", small_linear(width, 4 * width));
    fc2 = register_module("fc2", small_linear(4 * width, width));
    drop = register_module("drop", torch::nn::Dropout(dropout));
}

auto TransformerBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& mask, const RotaryPositions* rotary)
    -> torch::Tensor {
    auto h = x + drop->forward(attn->forward(ln1->forward(x), mask, rotary));
    return h + drop->forward(fc2->forward(torch::gelu(fc1->forward(ln2->forward(h)))));
}

void TransformerBlockImpl::make_identity() {
    torch::NoGradGuard no_grad;
    attn->proj->weight.zero_();
    attn->proj->bias.zero_();
    fc2->weight.zero_();
    fc2->bias.zero_();
}

TransformerStackImpl::TransformerStackImpl(int64_t depth, int64_t width, int64_t heads, AttentionMask mask,
                                           double dropout)
    : mask_(mask) {
    for (int64_t i = 0; i < depth; ++i) {
        blocks->push_back(TransformerBlock(width, heads, dropout));
    }
    register_module("blocks", blocks);
}

auto TransformerStackImpl::forward(const torch::Tensor& x, const RotaryPositions* rotary) -> torch::Tensor {
    torch::Tensor mask;
    if (mask_ == AttentionMask::causal) {
        mask = causal_mask(x.size(1), x.options());
    }
    auto h = x;
    for (const auto& block : *blocks) {
        h = block->as<TransformerBlock>()->forward(h, mask, rotary);
    }
    return h;
}

void TransformerStackImpl::make_identity() {
    for (const auto& block : *blocks) {
        block->as<TransformerBlock>()->make_identity();
    }
}

}    // namespace hita

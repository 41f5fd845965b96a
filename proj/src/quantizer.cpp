#include "hita/quantizer.hpp"

#include <algorithm>

#include "hita/errors.hpp"

namespace hita {

auto to_string(CodebookRole role) -> std::string {
    return role == CodebookRole::holistic ? "holistic" : "patch";
}

auto l2_normalize(const torch::Tensor& x) -> torch::Tensor {
    return x / (x.norm(2, -1, true) + 1e-8);
}

CodebookImpl::CodebookImpl(int64_t size, int64_t dim, CodebookRole role) : role_(role) {
    auto init = torch::randn({size, dim});
    vectors = register_parameter("vectors", init / init.norm(2, -1, true));
    usage = register_buffer("usage", torch::zeros({size}, torch::kInt64));
}

void CodebookImpl::renormalize() {
    torch::NoGradGuard no_grad;
    vectors.div_(vectors.norm(2, -1, true).clamp_min(1e-12));
}

void CodebookImpl::reset_usage() {
    usage.zero_();
}

void CodebookImpl::reseed_dead(const torch::Tensor& latents) {
    torch::NoGradGuard no_grad;
    auto dead = (usage == 0).nonzero().flatten();
    if (dead.numel() == 0 || latents.size(0) == 0) {
        return;
    }
    auto pick = torch::randint(latents.size(0), {dead.size(0)}, torch::kInt64);
    vectors.index_copy_(0, dead, l2_normalize(latents.index_select(0, pick).to(vectors.dtype())));
}

void CodebookImpl::seed_from(const torch::Tensor& latents) {
    torch::NoGradGuard no_grad;
    if (latents.size(0) == 0) {
        return;
    }
    const int64_t rows = vectors.size(0);
    auto pick = latents.size(0) >= rows ? torch::randperm(latents.size(0), torch::kInt64).slice(0, 0, rows)
                                        : torch::randint(latents.size(0), {rows}, torch::kInt64);
    vectors.copy_(l2_normalize(latents.index_select(0, pick).to(vectors.dtype())));
}

CodeProjectionImpl::CodeProjectionImpl(int64_t width, int64_t code_dim) {
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    down = register_module("down", torch::nn::Linear(width, code_dim));
    up = register_module("up", torch::nn::Linear(code_dim, width));
}

auto CodeProjectionImpl::project_and_normalize(const torch::Tensor& latents) -> torch::Tensor {
    return l2_normalize(down->forward(norm->forward(latents)));
}

auto CodeProjectionImpl::expand(const torch::Tensor& codes) -> torch::Tensor {
    return up->forward(codes);
}

auto quantize_nearest(const torch::Tensor& inputs, Codebook& book, bool count_usage) -> QuantizedTokens {
    if (inputs.dim() != 3 || inputs.size(2) != book->dim()) {
        throw ShapeError("quantizer input must be B x L x " + std::to_string(book->dim()));
    }
    const int64_t batch = inputs.size(0);
    const int64_t length = inputs.size(1);
    torch::Tensor ids;
    {
        torch::NoGradGuard no_grad;
        // ||z||^2 - 2 z.c + ||c||^2 in double, chunked over positions
        auto flat = inputs.detach().reshape({batch * length, book->dim()}).to(torch::kFloat64);
        auto codes = book->vectors.detach().to(torch::kFloat64);
        auto code_sq = codes.pow(2).sum(1);
        std::vector<torch::Tensor> parts;
        constexpr int64_t chunk = 1024;
        for (int64_t start = 0; start < flat.size(0); start += chunk) {
            auto z = flat.slice(0, start, std::min(start + chunk, flat.size(0)));
            auto dist = z.pow(2).sum(1, true) - 2.0 * torch::matmul(z, codes.t()) + code_sq;
            parts.push_back(dist.argmin(1));
        }
        ids = parts.empty() ? torch::zeros({0}, torch::kInt64) : torch::cat(parts);
        if (count_usage && ids.numel() > 0) {
            book->usage.index_add_(0, ids, torch::ones_like(ids));
        }
        ids = ids.reshape({batch, length});
    }
    return QuantizedTokens{ids, dequantize(ids, book), book->role()};
}

auto dequantize(const torch::Tensor& ids, const Codebook& book) -> torch::Tensor {
    auto flat = ids.reshape({-1});
    if (flat.numel() > 0 && (flat.min().item<int64_t>() < 0 || flat.max().item<int64_t>() >= book->size())) {
        throw ValidationError("token id outside [0, " + std::to_string(book->size()) + ")");
    }
    auto sizes = ids.sizes().vec();
    sizes.push_back(book->dim());
    return book->vectors.index_select(0, flat).reshape(sizes);
}

namespace {

struct StraightThrough : public torch::autograd::Function<StraightThrough> {
    static auto forward(torch::autograd::AutogradContext*, const torch::Tensor& pre, const torch::Tensor& codes)
        -> torch::Tensor {
        (void)pre;
        return codes.detach().clone();
    }
    static auto backward(torch::autograd::AutogradContext*, torch::autograd::tensor_list grads)
        -> torch::autograd::tensor_list {
        return {grads[0], torch::Tensor()};
    }
};

}    // namespace

auto straight_through(const torch::Tensor& pre, const QuantizedTokens& post) -> torch::Tensor {
    if (pre.sizes() != post.codes.sizes()) {
        throw ShapeError("straight-through input and codes differ in shape");
    }
    return StraightThrough::apply(pre, post.codes);
}

auto vq_loss(const torch::Tensor& pre, const torch::Tensor& codes, double beta) -> torch::Tensor {
    if (pre.sizes() != codes.sizes()) {
        throw ShapeError("vq_loss input and codes differ in shape");
    }
    if (pre.numel() == 0) {
        return torch::zeros({}, pre.options());
    }
    auto codebook_term = (pre.detach() - codes).pow(2).sum(-1).mean();
    auto commitment_term = (codes.detach() - pre).pow(2).sum(-1).mean();
    return codebook_term + beta * commitment_term;
}

auto usage_stats(const Codebook& book) -> double {
    auto total = book->usage.sum().item<int64_t>();
    if (total == 0) {
        throw StateError("usage is undefined: no assignments recorded in this window");
    }
    auto used = (book->usage > 0).sum().item<int64_t>();
    return static_cast<double>(used) / static_cast<double>(book->size());
}

}    // namespace hita

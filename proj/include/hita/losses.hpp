#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "hita/providers.hpp"

namespace hita {

// One step's loss terms. total = alpha * (vq_holistic + vq_patch)
//                             + lambda * (l2 + perceptual + lambda_g * adversarial)
struct LossReport {
    int64_t step = 0;
    double l2 = 0.0;
    double perceptual = 0.0;
    double adversarial = 0.0;
    double vq_holistic = 0.0;
    double vq_patch = 0.0;
    double total = 0.0;
    double holistic_usage = -1.0;    // < 0 when not measured this step
    double patch_usage = -1.0;

    [[nodiscard]] auto to_json_line() const -> std::string;
};

struct LossWeights {
    double alpha = 1.0;
    double lambda = 1.0;
    double lambda_g = 0.0;
};

auto combine_losses(const torch::Tensor& l2, const torch::Tensor& perceptual, const torch::Tensor& adversarial,
                    const torch::Tensor& vq_holistic, const torch::Tensor& vq_patch, const LossWeights& weights)
    -> torch::Tensor;

// Mean squared error over every pixel.
auto reconstruction_loss(const torch::Tensor& x, const torch::Tensor& x_hat) -> torch::Tensor;

auto perceptual_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const PerceptualProvider& provider)
    -> torch::Tensor;

// Three strided convs producing a grid of real/fake logits.
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    explicit PatchDiscriminatorImpl(int64_t base_channels = 32);
    // B x H x W x 3 pixels -> B x h x w logits
    auto forward(const torch::Tensor& pixels) -> torch::Tensor;

private:
    torch::nn::Conv2d conv1{nullptr};
    torch::nn::Conv2d conv2{nullptr};
    torch::nn::Conv2d conv3{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

auto hinge_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) -> torch::Tensor;
auto hinge_generator_loss(const torch::Tensor& fake_logits) -> torch::Tensor;

struct AdversarialTerms {
    torch::Tensor generator;        // gradient flows into x_hat
    torch::Tensor discriminator;    // computed on detached x_hat
};

// Returns (0, 0) when `discriminator` is empty.
auto adversarial_terms(const torch::Tensor& x, const torch::Tensor& x_hat, PatchDiscriminator discriminator)
    -> AdversarialTerms;

}    // namespace hita

#include "hita/losses.hpp"

#include "json.hpp"

#include "hita/errors.hpp"

namespace hita {

auto LossReport::to_json_line() const -> std::string {
    nlohmann::json j = {{"step", step},
                        {"l2", l2},
                        {"perceptual", perceptual},
                        {"adversarial", adversarial},
                        {"vq_holistic", vq_holistic},
                        {"vq_patch", vq_patch},
                        {"total", total}};
    if (holistic_usage >= 0.0) {
        j["holistic_usage"] = holistic_usage;
    }
    if (patch_usage >= 0.0) {
        j["patch_usage"] = patch_usage;
    }
    return j.dump();
}

auto combine_losses(const torch::Tensor& l2, const torch::Tensor& perceptual, const torch::Tensor& adversarial,
                    const torch::Tensor& vq_holistic, const torch::Tensor& vq_patch, const LossWeights& weights)
    -> torch::Tensor {
    return weights.alpha * (vq_holistic + vq_patch) +
           weights.lambda * (l2 + perceptual + weights.lambda_g * adversarial);
}

auto reconstruction_loss(const torch::Tensor& x, const torch::Tensor& x_hat) -> torch::Tensor {
    if (x.sizes() != x_hat.sizes()) {
        throw ShapeError("reconstruction loss needs equally shaped images");
    }
    return (x - x_hat).pow(2).mean();
}

auto perceptual_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const PerceptualProvider& provider)
    -> torch::Tensor {
    if (x.sizes() != x_hat.sizes()) {
        throw ShapeError("perceptual loss needs equally shaped images");
    }
    return provider.distance(x, x_hat);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t base_channels) {
    namespace nn = torch::nn;
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, base_channels, 4).stride(2).padding(1)));
    conv2 = register_module(
        "conv2", nn::Conv2d(nn::Conv2dOptions(base_channels, 2 * base_channels, 4).stride(2).padding(1)));
    conv3 = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(2 * base_channels, 1, 3).padding(1)));
}

auto PatchDiscriminatorImpl::forward(const torch::Tensor& pixels) -> torch::Tensor {
    auto h = torch::leaky_relu(conv1->forward(pixels.permute({0, 3, 1, 2})), 0.2);
    h = torch::leaky_relu(conv2->forward(h), 0.2);
    return conv3->forward(h).squeeze(1);
}

auto hinge_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) -> torch::Tensor {
    return torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean();
}

auto hinge_generator_loss(const torch::Tensor& fake_logits) -> torch::Tensor {
    return -fake_logits.mean();
}

auto adversarial_terms(const torch::Tensor& x, const torch::Tensor& x_hat, PatchDiscriminator discriminator)
    -> AdversarialTerms {
    if (!discriminator) {
        auto zero = torch::zeros({}, x_hat.options());
        return {zero, zero};
    }
    auto generator = hinge_generator_loss(discriminator->forward(x_hat));
    auto disc = hinge_discriminator_loss(discriminator->forward(x.detach()), discriminator->forward(x_hat.detach()));
    return {generator, disc};
}

}    // namespace hita

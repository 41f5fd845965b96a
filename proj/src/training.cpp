#include "hita/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "hita/errors.hpp"

namespace hita {

auto cosine_learning_rate(double base, int64_t step, int64_t total, int64_t warmup) -> double {
    const double ramp = warmup > 0 ? std::min(1.0, (static_cast<double>(step) + 1.0) / static_cast<double>(warmup)) : 1.0;
    if (total <= 0) {
        return ramp * base;
    }
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return ramp * base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void seed_codebooks_from_batch(HolisticTokenizer& model, const ImageBatch& batch) {
    torch::NoGradGuard no_grad;
    const auto& config = model->config();
    auto out = model->forward(batch, false);
    model->patch_book->seed_from(out.patch_pre.reshape({-1, config.patch_code_dim}));
    if (model->has_holistic()) {
        model->holistic_book->seed_from(out.holistic_pre.reshape({-1, config.holistic_code_dim}));
    }
}

TokenizerTrainer::TokenizerTrainer(HolisticTokenizer model, const PipelineConfig& config, int64_t total_steps)
    : model_(std::move(model)),
      config_(config),
      perceptual_(make_perceptual_provider(config.perceptual_provider)),
      total_steps_(total_steps) {
    optimizer_ = std::make_unique<torch::optim::Adam>(model_->parameters(), torch::optim::AdamOptions(config.learning_rate));
    if (config.discriminator) {
        discriminator_ = PatchDiscriminator();
        disc_optimizer_ = std::make_unique<torch::optim::Adam>(
            discriminator_->parameters(), torch::optim::AdamOptions(config.learning_rate).betas({0.5, 0.9}));
    }
}

auto TokenizerTrainer::compute(const ImageBatch& batch) -> std::pair<torch::Tensor, LossReport> {
    auto out = model_->forward(batch, true);
    const auto& x = batch.pixels;
    const auto& x_hat = out.reconstruction.pixels;

    auto l2 = reconstruction_loss(x, x_hat);
    auto perceptual = perceptual_loss(x, x_hat, *perceptual_);
    auto adversarial = adversarial_terms(x, x_hat, discriminator_);
    auto vq_holistic = vq_loss(out.holistic_pre, out.holistic.codes, config_.beta);
    auto vq_patch = vq_loss(out.patch_pre, out.patch.codes, config_.beta);
    auto total = combine_losses(l2, perceptual, adversarial.generator, vq_holistic, vq_patch,
                                LossWeights{config_.alpha, config_.lambda, config_.lambda_g});

    LossReport report;
    report.step = step_;
    report.l2 = l2.item<double>();
    report.perceptual = perceptual.item<double>();
    report.adversarial = adversarial.generator.item<double>();
    report.vq_holistic = vq_holistic.item<double>();
    report.vq_patch = vq_patch.item<double>();
    report.total = total.item<double>();
    if (!std::isfinite(report.total)) {
        std::ostringstream msg;
        msg << "non-finite tokenizer loss at step " << step_ << ": l2=" << report.l2
            << " perceptual=" << report.perceptual << " adversarial=" << report.adversarial
            << " vq_holistic=" << report.vq_holistic << " vq_patch=" << report.vq_patch;
        throw TrainingError(msg.str());
    }

    disc_loss_ = adversarial.discriminator;
    return {total, report};
}

auto TokenizerTrainer::step(const ImageBatch& batch) -> LossReport {
    model_->train();
    optimizer_->zero_grad();
    auto [total, report] = compute(batch);
    total.backward();
    // the generator term backprops through the discriminator, so update it afterwards
    if (discriminator_ && config_.lambda_g > 0.0) {
        disc_optimizer_->zero_grad();
        disc_loss_.backward();
        disc_optimizer_->step();
    }
    torch::nn::utils::clip_grad_norm_(model_->parameters(), config_.grad_clip);
    const double lr = cosine_learning_rate(config_.learning_rate, step_, total_steps_, config_.warmup_steps);
    static_cast<torch::optim::AdamOptions&>(optimizer_->param_groups()[0].options()).lr(lr);
    optimizer_->step();
    model_->renormalize_codebooks();
    ++step_;
    return report;
}

auto train_tokenizer(const PipelineConfig& config, const Corpus& corpus, const TrainOptions& options) -> TokenizerRun {
    torch::manual_seed(config.seed);
    TokenizerRun run;
    run.model = HolisticTokenizer(config);
    TokenizerTrainer trainer(run.model, config, options.steps);
    BatchLoader loader(corpus, config.batch_size, config.seed + 1);
    run.model->reset_usage();
    for (int64_t s = 0; s < options.steps; ++s) {
        auto batch = loader.next();
        if (s == 0 && config.codebook_init == "data") {
            seed_codebooks_from_batch(run.model, batch);
        }
        auto report = trainer.step(batch);
        const bool window_end = options.usage_every > 0 && (s + 1) % options.usage_every == 0;
        if (window_end || (config.codebook_reseed && (s + 1) % 50 == 0)) {
            if (window_end) {
                report.patch_usage = usage_stats(run.model->patch_book);
                if (run.model->has_holistic()) {
                    report.holistic_usage = usage_stats(run.model->holistic_book);
                }
            }
            if (config.codebook_reseed) {
                torch::NoGradGuard no_grad;
                auto out = run.model->forward(batch, false);
                run.model->patch_book->reseed_dead(out.patch_pre.reshape({-1, config.patch_code_dim}));
                if (run.model->has_holistic()) {
                    run.model->holistic_book->reseed_dead(out.holistic_pre.reshape({-1, config.holistic_code_dim}));
                }
            }
            run.model->reset_usage();
        }
        if (options.on_report) {
            options.on_report(report);
        }
        run.reports.push_back(report);
    }
    run.model->eval();
    return run;
}

auto evaluate_tokenizer(HolisticTokenizer& model, const Corpus& holdout, int64_t batch_size) -> EvalReport {
    torch::NoGradGuard no_grad;
    model->eval();
    model->reset_usage();
    EvalReport report;
    double l2_sum = 0.0;
    for (int64_t begin = 0; begin < holdout.size(); begin += batch_size) {
        auto batch = holdout.batch(begin, begin + batch_size);
        auto out = model->forward(batch, true);
        l2_sum += reconstruction_loss(batch.pixels, out.reconstruction.pixels).item<double>() *
                  static_cast<double>(batch.size());
        report.images += batch.size();
        report.holistic_tokens += out.holistic.ids.numel();
        report.patch_tokens += out.patch.ids.numel();
    }
    if (report.images == 0) {
        throw DataError("evaluation corpus is empty");
    }
    report.l2 = l2_sum / static_cast<double>(report.images);
    report.patch_usage = usage_stats(model->patch_book);
    if (model->has_holistic()) {
        report.holistic_usage = usage_stats(model->holistic_book);
    }
    return report;
}

}    // namespace hita

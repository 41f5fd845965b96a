#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "hita/config.hpp"
#include "hita/data.hpp"
#include "hita/losses.hpp"
#include "hita/tokenizer.hpp"

namespace hita {

// Cosine decay from base to 0 over total steps, scaled by a linear ramp over
// the first warmup steps.
auto cosine_learning_rate(double base, int64_t step, int64_t total, int64_t warmup = 0) -> double;

// Overwrites every codebook row with a projected latent from this batch.
void seed_codebooks_from_batch(HolisticTokenizer& model, const ImageBatch& batch);

// Adam + cosine decay + global grad-norm clipping over all trainable
// parameters; codebooks are re-normalised after every update.
class TokenizerTrainer {
public:
    TokenizerTrainer(HolisticTokenizer model, const PipelineConfig& config, int64_t total_steps);

    // One optimisation step. Throws TrainingError on a non-finite loss.
    auto step(const ImageBatch& batch) -> LossReport;

    // Loss terms for a batch without updating anything (gradients are kept).
    auto compute(const ImageBatch& batch) -> std::pair<torch::Tensor, LossReport>;

    [[nodiscard]] auto model() const -> HolisticTokenizer { return model_; }
    [[nodiscard]] auto steps_done() const -> int64_t { return step_; }

private:
    HolisticTokenizer model_;
    PipelineConfig config_;
    std::shared_ptr<PerceptualProvider> perceptual_;
    PatchDiscriminator discriminator_{nullptr};
    std::unique_ptr<torch::optim::Adam> optimizer_;
    std::unique_ptr<torch::optim::Adam> disc_optimizer_;
    torch::Tensor disc_loss_;
    int64_t total_steps_;
    int64_t step_ = 0;
};

struct TrainOptions {
    int64_t steps = 200;
    // Usage is measured over the last `usage_every` training steps and attached
    // to that step's report; 0 disables mid-run measurement.
    int64_t usage_every = 0;
    std::function<void(const LossReport&)> on_report;
};

struct TokenizerRun {
    HolisticTokenizer model{nullptr};
    std::vector<LossReport> reports;
};

// Seeds torch from config.seed, builds a fresh tokenizer and trains it.
auto train_tokenizer(const PipelineConfig& config, const Corpus& corpus, const TrainOptions& options) -> TokenizerRun;

struct EvalReport {
    double l2 = 0.0;
    double holistic_usage = -1.0;    // < 0 with queries off
    double patch_usage = 0.0;
    int64_t images = 0;
    int64_t holistic_tokens = 0;
    int64_t patch_tokens = 0;
};

// Held-out pass in eval mode: usage counters are reset at the start of the window.
auto evaluate_tokenizer(HolisticTokenizer& model, const Corpus& holdout, int64_t batch_size = 64) -> EvalReport;

}    // namespace hita

#include <gtest/gtest.h>

#include "hita/data.hpp"
#include "hita/errors.hpp"
#include "hita/losses.hpp"
#include "hita/training.hpp"

namespace {

auto tiny_config() -> hita::PipelineConfig {
    auto c = hita::PipelineConfig::desk();
    c.embed_dim = 32;
    c.batch_size = 8;
    c.synthetic_count = 64;
    c.validate();
    return c;
}

void expect_report_arithmetic(const hita::LossReport& r, const hita::PipelineConfig& c) {
    const double expected =
        c.alpha * (r.vq_holistic + r.vq_patch) + c.lambda * (r.l2 + r.perceptual + c.lambda_g * r.adversarial);
    EXPECT_NEAR(r.total, expected, 1e-6) << "step " << r.step;
}

}    // namespace

TEST(ReconstructionLoss, AnalyticCases) {
    auto x = torch::rand({2, 32, 32, 3}) * 2 - 1;
    EXPECT_EQ(hita::reconstruction_loss(x, x).item<double>(), 0.0);
    EXPECT_NEAR(hita::reconstruction_loss(x, x + 0.1).item<double>(), 0.01, 1e-6);
    EXPECT_THROW(hita::reconstruction_loss(x, x.slice(1, 0, 16)), hita::ShapeError);
}

TEST(ReconstructionLoss, NaiveLoopOracle) {
    torch::manual_seed(0);
    auto x = torch::rand({3, 8, 8, 3}) * 2 - 1;
    auto y = torch::rand({3, 8, 8, 3}) * 2 - 1;
    auto xa = x.accessor<float, 4>();
    auto ya = y.accessor<float, 4>();
    double sum = 0.0;
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int c = 0; c < 3; ++c) {
                    const double d = static_cast<double>(xa[b][i][j][c]) - ya[b][i][j][c];
                    sum += d * d;
                }
    EXPECT_NEAR(hita::reconstruction_loss(x, y).item<double>(), sum / (3 * 8 * 8 * 3), 1e-6);
}

TEST(PerceptualLoss, ZeroOnIdenticalAndOffProvider) {
    auto x = torch::rand({2, 32, 32, 3}) * 2 - 1;
    auto y = torch::rand({2, 32, 32, 3}) * 2 - 1;
    auto conv = hita::make_perceptual_provider("frozen-random-conv");
    auto off = hita::make_perceptual_provider("off");
    EXPECT_NEAR(hita::perceptual_loss(x, x, *conv).item<double>(), 0.0, 1e-12);
    EXPECT_GT(hita::perceptual_loss(x, y, *conv).item<double>(), 0.0);
    EXPECT_EQ(hita::perceptual_loss(x, y, *off).item<double>(), 0.0);
    EXPECT_THROW(hita::make_perceptual_provider("lpips-vgg"), hita::ConfigError);
}

TEST(PerceptualLoss, SymmetricSweep) {
    torch::manual_seed(1);
    auto conv = hita::make_perceptual_provider("frozen-random-conv");
    for (int i = 0; i < 20; ++i) {
        auto x = torch::rand({1, 32, 32, 3}) * 2 - 1;
        auto y = torch::rand({1, 32, 32, 3}) * 2 - 1;
        const double a = hita::perceptual_loss(x, y, *conv).item<double>();
        const double b = hita::perceptual_loss(y, x, *conv).item<double>();
        EXPECT_NEAR(a, b, 1e-6 * std::max(1.0, a));
        EXPECT_GE(a, 0.0);
    }
}

TEST(AdversarialTerms, DisabledIsZero) {
    auto x = torch::rand({2, 32, 32, 3});
    auto terms = hita::adversarial_terms(x, x, hita::PatchDiscriminator{nullptr});
    EXPECT_EQ(terms.generator.item<double>(), 0.0);
    EXPECT_EQ(terms.discriminator.item<double>(), 0.0);
}

TEST(AdversarialTerms, HingeSaturates) {
    auto real = torch::full({2, 8, 8}, 1e9);
    auto fake = torch::full({2, 8, 8}, -1e9);
    EXPECT_EQ(hita::hinge_discriminator_loss(real, fake).item<double>(), 0.0);
}

TEST(AdversarialTerms, GeneratorGradientNonzero) {
    torch::manual_seed(2);
    hita::PatchDiscriminator disc;
    auto x = torch::rand({2, 32, 32, 3}) * 2 - 1;
    auto x_hat = (torch::rand({2, 32, 32, 3}) * 2 - 1).requires_grad_(true);
    auto terms = hita::adversarial_terms(x, x_hat, disc);
    terms.generator.backward();
    EXPECT_GT(x_hat.grad().norm().item<double>(), 0.0);
    EXPECT_EQ(disc->forward(x).dim(), 3);
}

TEST(LearningRate, WarmupThenCosine) {
    EXPECT_DOUBLE_EQ(hita::cosine_learning_rate(1.0, 0, 100), 1.0);
    EXPECT_NEAR(hita::cosine_learning_rate(1.0, 50, 100), 0.5, 1e-12);
    EXPECT_NEAR(hita::cosine_learning_rate(1.0, 100, 100), 0.0, 1e-12);
    EXPECT_NEAR(hita::cosine_learning_rate(1.0, 0, 100, 10), 0.1 * 1.0, 1e-12);
    EXPECT_NEAR(hita::cosine_learning_rate(2.0, 4, 0, 10), 1.0, 1e-12);
}

TEST(Training, ReportArithmeticEveryStep) {
    auto config = tiny_config();
    config.lambda_g = 0.1;
    config.discriminator = true;
    config.alpha = 0.7;
    config.lambda = 1.3;
    auto corpus = hita::make_synthetic_corpus(config, 64, 0);
    hita::TrainOptions options;
    options.steps = 4;
    auto run = hita::train_tokenizer(config, corpus, options);
    ASSERT_EQ(run.reports.size(), 4U);
    for (const auto& r : run.reports) {
        expect_report_arithmetic(r, config);
        EXPECT_NE(r.adversarial, 0.0);
    }
}

TEST(Training, AlphaZeroDropsVq) {
    auto config = tiny_config();
    config.alpha = 0.0;
    auto corpus = hita::make_synthetic_corpus(config, 32, 0);
    hita::TrainOptions options;
    options.steps = 2;
    auto run = hita::train_tokenizer(config, corpus, options);
    for (const auto& r : run.reports) {
        EXPECT_GT(r.vq_patch, 0.0);
        EXPECT_NEAR(r.total, r.l2 + r.perceptual, 1e-6);
    }
}

TEST(Training, SameSeedBitwiseStepTen) {
    auto config = tiny_config();
    auto corpus = hita::make_synthetic_corpus(config, 64, 0);
    hita::TrainOptions options;
    options.steps = 11;
    auto a = hita::train_tokenizer(config, corpus, options);
    auto b = hita::train_tokenizer(config, corpus, options);
    const auto& ra = a.reports[10];
    const auto& rb = b.reports[10];
    EXPECT_EQ(ra.l2, rb.l2);
    EXPECT_EQ(ra.perceptual, rb.perceptual);
    EXPECT_EQ(ra.vq_holistic, rb.vq_holistic);
    EXPECT_EQ(ra.vq_patch, rb.vq_patch);
    EXPECT_EQ(ra.total, rb.total);
    EXPECT_EQ(ra.to_json_line(), rb.to_json_line());
}

TEST(Training, EveryTrainableParameterGetsFiniteGradient) {
    for (const auto* context : {"local", "wide"}) {
        auto config = tiny_config();
        config.decoder_context = context;
        torch::manual_seed(3);
        hita::HolisticTokenizer model(config);
        hita::TokenizerTrainer trainer(model, config, 10);
        auto corpus = hita::make_synthetic_corpus(config, 8, 1);
        auto [total, report] = trainer.compute(corpus.batch(0, 8));
        total.backward();
        for (const auto& item : model->named_parameters()) {
            const auto& grad = item.value().grad();
            ASSERT_TRUE(grad.defined()) << context << " " << item.key();
            EXPECT_TRUE(torch::isfinite(grad).all().item<bool>()) << item.key();
            EXPECT_GT(grad.abs().sum().item<double>(), 0.0) << context << " " << item.key();
        }
    }
}

TEST(Training, SemanticProviderStaysFrozen) {
    auto config = tiny_config();
    auto corpus = hita::make_synthetic_corpus(config, 32, 0);
    torch::manual_seed(4);
    hita::HolisticTokenizer model(config);
    const double before = model->semantic().checksum();
    ASSERT_NE(before, 0.0);
    hita::TokenizerTrainer trainer(model, config, 3);
    hita::BatchLoader loader(corpus, 8, 0);
    for (int i = 0; i < 3; ++i) {
        trainer.step(loader.next());
    }
    EXPECT_EQ(model->semantic().checksum(), before);
}

TEST(Training, CodebooksAreIndependent) {
    auto config = tiny_config();
    torch::manual_seed(5);
    hita::HolisticTokenizer model(config);
    auto corpus = hita::make_synthetic_corpus(config, 8, 2);
    auto out = model->forward(corpus.batch(0, 8));
    hita::vq_loss(out.patch_pre, out.patch.codes, 0.25).backward();
    EXPECT_GT(model->patch_book->vectors.grad().abs().sum().item<double>(), 0.0);
    const auto& hgrad = model->holistic_book->vectors.grad();
    EXPECT_TRUE(!hgrad.defined() || hgrad.abs().sum().item<double>() == 0.0);

    model->zero_grad();
    auto again = model->forward(corpus.batch(0, 8));
    hita::vq_loss(again.holistic_pre, again.holistic.codes, 0.25).backward();
    const auto& pgrad = model->patch_book->vectors.grad();
    EXPECT_TRUE(!pgrad.defined() || pgrad.abs().sum().item<double>() == 0.0);
}

TEST(Training, CodebookTermOnlyReachesBooks) {
    // d(L_vq)/d(book) carries no commitment part: with beta = 0 and beta = 5
    // the codebook gradient is identical.
    auto config = tiny_config();
    auto corpus = hita::make_synthetic_corpus(config, 8, 3);
    std::vector<torch::Tensor> grads;
    for (double beta : {0.0, 5.0}) {
        torch::manual_seed(6);
        hita::HolisticTokenizer model(config);
        auto out = model->forward(corpus.batch(0, 8));
        hita::vq_loss(out.patch_pre, out.patch.codes, beta).backward();
        grads.push_back(model->patch_book->vectors.grad().clone());
    }
    EXPECT_TRUE(torch::equal(grads[0], grads[1]));
}

TEST(Training, NonFiniteLossAborts) {
    auto config = tiny_config();
    hita::HolisticTokenizer model(config);
    hita::TokenizerTrainer trainer(model, config, 1);
    hita::ImageBatch bad{torch::full({2, 32, 32, 3}, std::nanf("")), std::nullopt};
    try {
        trainer.step(bad);
        FAIL() << "expected TrainingError";
    } catch (const hita::TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("l2="), std::string::npos);
    }
}

TEST(Training, DataInitSeedsEveryRow) {
    auto config = tiny_config();
    torch::manual_seed(7);
    hita::HolisticTokenizer model(config);
    auto corpus = hita::make_synthetic_corpus(config, 64, 4);
    auto batch = corpus.batch(0, 64);
    hita::seed_codebooks_from_batch(model, batch);
    torch::NoGradGuard no_grad;
    auto out = model->forward(batch, false);
    auto latents = out.patch_pre.reshape({-1, config.patch_code_dim});
    auto best = torch::matmul(model->patch_book->vectors, latents.t()).amax(1);
    EXPECT_TRUE(torch::allclose(best, torch::ones_like(best), 0.0, 1e-5));
}

TEST(Training, EvaluationReportsUsageWindow) {
    auto config = tiny_config();
    torch::manual_seed(8);
    hita::HolisticTokenizer model(config);
    auto holdout = hita::make_synthetic_corpus(config, 16, 9);
    auto report = hita::evaluate_tokenizer(model, holdout, 8);
    EXPECT_EQ(report.images, 16);
    EXPECT_EQ(report.patch_tokens, 16 * 16);
    EXPECT_EQ(report.holistic_tokens, 16 * 4);
    EXPECT_GT(report.patch_usage, 0.0);
    EXPECT_LE(report.holistic_usage, std::min(1.0, 64.0 / 64.0));
    EXPECT_GE(report.l2, 0.0);
}

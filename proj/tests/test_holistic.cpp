#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "hita/errors.hpp"
#include "hita/holistic.hpp"
#include "hita/providers.hpp"

namespace fs = std::filesystem;

namespace {

auto config_with(const std::string& provider) -> hita::PipelineConfig {
    auto c = hita::PipelineConfig::desk();
    c.embed_dim = 32;
    c.semantic_provider = provider;
    c.validate();
    return c;
}

auto images(int64_t b, uint64_t seed) -> hita::ImageBatch {
    torch::manual_seed(seed);
    return {torch::rand({b, 32, 32, 3}) * 2 - 1, std::nullopt};
}

auto mixed_sequence(int64_t b, int64_t m, int64_t g, int64_t c) -> hita::LatentSequence {
    return {torch::randn({b, m, c}), torch::randn({b, g, c}), hita::LatentStage::mixed};
}

}    // namespace

TEST(SemanticProvider, FrozenConvIsDeterministic) {
    auto config = config_with("frozen-random-conv");
    auto provider = hita::make_semantic_provider(config.semantic_provider, config);
    auto x = images(3, 1);
    auto a = provider->extract(x);
    auto b = provider->extract(x);
    ASSERT_EQ(a.features.dim(), 3);
    EXPECT_EQ(a.features.size(0), 3);
    EXPECT_EQ(a.features.size(2), provider->feature_dim());
    EXPECT_GT(a.token_count(), 0);
    EXPECT_TRUE(torch::equal(a.features, b.features));

    // a second instance uses the same fixed seed
    auto other = hita::make_semantic_provider(config.semantic_provider, config);
    EXPECT_TRUE(torch::equal(other->extract(x).features, a.features));
}

TEST(SemanticProvider, NoneGivesEmptyFeatures) {
    auto config = config_with("none");
    auto provider = hita::make_semantic_provider("none", config);
    EXPECT_EQ(provider->feature_dim(), 0);
    EXPECT_EQ(provider->extract(images(2, 0)).token_count(), 0);
}

TEST(SemanticProvider, UnknownIdIsConfigError) {
    EXPECT_THROW(hita::make_semantic_provider("dinov2", hita::PipelineConfig::desk()), hita::ConfigError);
}

TEST(SemanticProvider, ExternalAdapterReadsResponseFile) {
    auto dir = fs::temp_directory_path() / "hita_external_provider";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto response = torch::randn({2, 5, 7});
    hita::write_npy(dir / "response.npy", response);
    ::unsetenv("HITA_PROVIDER_CMD");
    auto provider = hita::make_semantic_provider("external:" + dir.string() + ":7", hita::PipelineConfig::desk());
    EXPECT_EQ(provider->feature_dim(), 7);
    auto x = images(2, 3);
    auto features = provider->extract(x);
    EXPECT_TRUE(torch::equal(features.features, response));
    EXPECT_TRUE(torch::equal(hita::read_npy(dir / "request.npy"), x.pixels));
    EXPECT_THROW(provider->extract(images(3, 3)), hita::ShapeError);
}

TEST(Mixer, DeskLengthsWithoutInjection) {
    auto config = config_with("none");
    hita::HolisticExtractor ex(config, 0);
    auto seq = ex->mix({torch::randn({2, 4, 4, 32})}, {torch::Tensor(), "none"});
    EXPECT_EQ(seq.holistic.sizes(), (std::vector<int64_t>{2, 4, 32}));
    EXPECT_EQ(seq.patch.sizes(), (std::vector<int64_t>{2, 16, 32}));
    EXPECT_EQ(seq.stage, hita::LatentStage::mixed);
}

TEST(Mixer, FullGeometryDropsSemanticSlots) {
    auto config = hita::PipelineConfig::full();
    config.embed_dim = 32;
    config.transformer_depth = 1;
    config.validate();
    hita::HolisticExtractor ex(config, 12);
    torch::NoGradGuard no_grad;
    auto seq = ex->mix({torch::randn({1, 21, 21, 32})}, {torch::randn({1, 9, 12}), "test"});
    EXPECT_EQ(seq.holistic.size(1), 128);
    EXPECT_EQ(seq.patch.size(1), 441);
}

TEST(Mixer, SemanticWidthMismatchIsShapeError) {
    auto config = config_with("frozen-random-conv");
    hita::HolisticExtractor ex(config, 12);
    EXPECT_THROW(ex->mix({torch::randn({1, 4, 4, 32})}, {torch::randn({1, 3, 11}), "x"}), hita::ShapeError);
    EXPECT_THROW(ex->mix({torch::randn({1, 4, 4, 16})}, {torch::Tensor(), "none"}), hita::ShapeError);
}

TEST(Mixer, IdentityWeightsPassInputsThrough) {
    auto config = config_with("frozen-random-conv");
    hita::HolisticExtractor ex(config, 12);
    ex->make_identity();
    ex->eval();
    torch::NoGradGuard no_grad;
    auto grid = torch::randn({2, 4, 4, 32});
    auto seq = ex->mix({grid}, {torch::randn({2, 5, 12}), "x"});
    EXPECT_TRUE(torch::allclose(seq.holistic, ex->queries.unsqueeze(0).expand({2, 4, 32}), 0.0, 0.0));
    EXPECT_TRUE(torch::allclose(seq.patch, grid.reshape({2, 16, 32}), 0.0, 0.0));
    auto aligned = ex->causal_align(seq);
    EXPECT_TRUE(torch::equal(aligned.holistic, seq.holistic));
    EXPECT_TRUE(torch::equal(aligned.patch, seq.patch));
}

TEST(CausalAlign, PatchPerturbationLeavesEarlierPositionsBitwise) {
    auto config = config_with("none");
    hita::HolisticExtractor ex(config, 0);
    ex->eval();
    torch::NoGradGuard no_grad;
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(17);
    for (int trial = 0; trial < 10; ++trial) {
        auto seq = mixed_sequence(2, 4, 16, 32);
        const auto j = torch::randint(16, {1}, gen).item<int64_t>();
        auto base = ex->causal_align(seq);
        auto moved = seq;
        moved.patch = seq.patch.clone();
        moved.patch.select(1, j).add_(torch::randn({2, 32}));
        auto out = ex->causal_align(moved);
        ASSERT_TRUE(torch::equal(out.holistic, base.holistic)) << "j=" << j;
        ASSERT_TRUE(torch::equal(out.patch.slice(1, 0, j), base.patch.slice(1, 0, j))) << "j=" << j;
        EXPECT_FALSE(torch::equal(out.patch.select(1, j), base.patch.select(1, j)));
    }
}

TEST(CausalAlign, FirstHolisticDependsOnlyOnItself) {
    auto config = config_with("none");
    hita::HolisticExtractor ex(config, 0);
    ex->eval();
    torch::NoGradGuard no_grad;
    auto seq = mixed_sequence(1, 4, 16, 32);
    auto other = mixed_sequence(1, 4, 16, 32);
    other.holistic.select(1, 0).copy_(seq.holistic.select(1, 0));
    EXPECT_TRUE(torch::equal(ex->causal_align(seq).holistic.select(1, 0), ex->causal_align(other).holistic.select(1, 0)));
}

TEST(CausalAlign, JacobianUpperBlocksAreZero) {
    auto config = config_with("none");
    config.embed_dim = 8;
    hita::HolisticExtractor ex(config, 0);
    ex->eval();
    auto h = torch::randn({1, 4, 8}).requires_grad_(true);
    auto p = torch::randn({1, 16, 8}).requires_grad_(true);
    auto out = ex->causal_align({h, p, hita::LatentStage::mixed});
    auto all = torch::cat({out.holistic, out.patch}, 1);
    for (int64_t i = 0; i < 20; ++i) {
        auto grads = torch::autograd::grad({all[0][i].sum()}, {h, p}, {}, true);
        auto g = torch::cat({grads[0], grads[1]}, 1)[0].abs().sum(1);
        for (int64_t j = i + 1; j < 20; ++j) {
            ASSERT_EQ(g[j].item<double>(), 0.0) << "output " << i << " input " << j;
        }
        EXPECT_GT(g[i].item<double>(), 0.0);
    }
}

TEST(CausalAlign, OutputsShapeAndStage) {
    auto config = config_with("none");
    hita::HolisticExtractor ex(config, 0);
    auto out = ex->causal_align(mixed_sequence(2, 4, 16, 32));
    EXPECT_EQ(out.holistic.size(1), 4);
    EXPECT_EQ(out.patch.size(1), 16);
    EXPECT_EQ(out.stage, hita::LatentStage::causal_aligned);
    EXPECT_THROW(ex->causal_align(out), hita::StateError);
}

TEST(Extractor, AblationSettingsAllRun) {
    for (auto [queries, provider] : std::vector<std::pair<bool, std::string>>{
             {false, "none"}, {true, "none"}, {true, "frozen-random-conv"}}) {
        auto config = config_with(provider);
        config.use_queries = queries;
        config.selection_k = queries ? 2 : 0;
        auto sem = hita::make_semantic_provider(provider, config);
        hita::HolisticExtractor ex(config, sem->feature_dim());
        auto x = images(2, 4);
        auto seq = ex->causal_align(ex->mix({torch::randn({2, 4, 4, 32})}, sem->extract(x)));
        EXPECT_EQ(seq.holistic.size(1), queries ? 4 : 0);
        EXPECT_EQ(seq.patch.size(1), 16);
    }
}

#include <gtest/gtest.h>

#include "hita/applications.hpp"
#include "hita/errors.hpp"

namespace {

auto app_config() -> hita::PipelineConfig {
    auto c = hita::PipelineConfig::desk();
    c.embed_dim = 32;
    c.ar_width = 32;
    c.ar_heads = 2;
    c.validate();
    return c;
}

auto images(int64_t n, uint64_t seed) -> hita::ImageBatch {
    return hita::make_synthetic_corpus(app_config(), n, seed).batch(0, n);
}

}    // namespace

TEST(StyleTransfer, SelfTransferIsReconstruction) {
    torch::manual_seed(0);
    hita::HolisticTokenizer tok(app_config());
    tok->eval();
    auto x = images(4, 1);
    auto transferred = hita::style_transfer(tok, x, x);
    EXPECT_TRUE(torch::allclose(transferred.images.pixels, tok->reconstruct(x).pixels, 0.0, 1e-6));
}

TEST(StyleTransfer, TokenAuditOverTenPairs) {
    torch::manual_seed(1);
    hita::HolisticTokenizer tok(app_config());
    tok->eval();
    auto content = images(10, 2);
    auto reference = images(10, 3);
    auto result = hita::style_transfer(tok, content, reference);
    EXPECT_TRUE(torch::equal(result.ids.holistic, tok->tokenize(reference).holistic));
    EXPECT_TRUE(torch::equal(result.ids.patch, tok->tokenize(content).patch));
    EXPECT_TRUE(torch::equal(result.images.pixels, tok->decode_tokens(result.ids).pixels));
    EXPECT_THROW(hita::style_transfer(tok, content, images(4, 3)), hita::ValidationError);
}

TEST(Inpaint, VisibleRows) {
    auto config = app_config();
    EXPECT_EQ(hita::visible_patch_rows(1.0, config), 4);
    EXPECT_EQ(hita::visible_patch_rows(0.5, config), 2);
    EXPECT_EQ(hita::visible_patch_rows(0.3, config), 1);
    EXPECT_THROW(hita::visible_patch_rows(0.2, config), hita::ValidationError);
    EXPECT_THROW(hita::visible_patch_rows(0.0, config), hita::ValidationError);
    EXPECT_THROW(hita::visible_patch_rows(1.5, config), hita::ValidationError);
}

TEST(Inpaint, FullyVisibleEqualsReconstruction) {
    auto config = app_config();
    torch::manual_seed(2);
    hita::HolisticTokenizer tok(config);
    hita::ARModel ar(config);
    auto x = images(3, 4);
    hita::InpaintOptions options;
    options.visible_fraction = 1.0;
    auto result = hita::inpaint(tok, ar, x, options);
    EXPECT_TRUE(torch::allclose(result.images.pixels, tok->reconstruct(x).pixels, 0.0, 1e-6));
}

TEST(Inpaint, HalfVisiblePrefixIsKept) {
    auto config = app_config();
    torch::manual_seed(3);
    hita::HolisticTokenizer tok(config);
    hita::ARModel ar(config);
    auto x = images(4, 5);
    hita::InpaintOptions options;
    options.sampling.seed = 11;
    auto result = hita::inpaint(tok, ar, x, options);
    EXPECT_EQ(result.visible_rows, 2);
    EXPECT_EQ(result.partial.pixels.slice(1, 16).abs().max().item<double>(), 0.0);
    EXPECT_TRUE(torch::equal(result.partial.pixels.slice(1, 0, 16), x.pixels.slice(1, 0, 16)));
    auto partial_ids = tok->tokenize(result.partial);
    for (size_t b = 0; b < 4; ++b) {
        const auto& forced = result.prefix[b];
        const auto& seq = result.sequences[b];
        int64_t fixed = 0;
        for (size_t i = 0; i < forced.size(); ++i) {
            if (forced[i]) {
                ++fixed;
                ASSERT_EQ(seq.ids[i], *forced[i]) << "position " << i;
            }
        }
        EXPECT_EQ(fixed, 4 + 8);
        for (int64_t i = 0; i < 4; ++i) {
            EXPECT_EQ(seq.ids[static_cast<size_t>(i)], partial_ids.holistic[static_cast<int64_t>(b)][i].item<int64_t>());
        }
    }
    EXPECT_EQ(result.images.pixels.sizes(), x.pixels.sizes());
}

TEST(Inpaint, GeneratedHolisticLeavesOnlyPatchPrefix) {
    auto config = app_config();
    hita::HolisticTokenizer tok(config);
    hita::ARModel ar(config);
    hita::InpaintOptions options;
    options.generate_holistic = true;
    auto result = hita::inpaint(tok, ar, images(2, 6), options);
    for (const auto& forced : result.prefix) {
        for (size_t i = 0; i < 4; ++i) {
            EXPECT_FALSE(forced[i].has_value());
        }
        for (size_t i = 4; i < 12; ++i) {
            EXPECT_TRUE(forced[i].has_value());
        }
    }
}

TEST(Inpaint, NoVisibleRowIsValidationError) {
    auto config = app_config();
    hita::HolisticTokenizer tok(config);
    hita::ARModel ar(config);
    hita::InpaintOptions options;
    options.visible_fraction = 0.1;
    EXPECT_THROW(hita::inpaint(tok, ar, images(1, 7), options), hita::ValidationError);
}

TEST(Consistency, Bounds) {
    auto linear = hita::make_pooled_provider("linear");
    auto conv = hita::make_pooled_provider("frozen-random-conv");
    auto x = images(4, 8);
    auto y = images(4, 9);
    EXPECT_NEAR(hita::consistency_score(x, x, conv), 1.0, 1e-9);
    EXPECT_NEAR(hita::consistency_score(x, {-x.pixels, std::nullopt}, linear), -1.0, 1e-9);
    EXPECT_NEAR(hita::consistency_score(x, y, conv), hita::consistency_score(y, x, conv), 1e-12);
    const double s = hita::consistency_score(x, y, conv);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    EXPECT_THROW(hita::consistency_score(x, y, nullptr), hita::ConfigError);
    EXPECT_THROW(hita::make_pooled_provider("clip"), hita::ConfigError);
}

TEST(Probe, RandomFeaturesSitNearChance) {
    torch::manual_seed(10);
    auto labels = torch::arange(800, torch::kInt64).remainder(4);
    auto result = hita::linear_probe(torch::randn({400, 16}), labels.slice(0, 0, 400), torch::randn({400, 16}),
                                     labels.slice(0, 400));
    EXPECT_NEAR(result.test_accuracy, 0.25, 0.08);
}

TEST(Probe, LabelFeaturesAreSeparable) {
    torch::manual_seed(11);
    auto labels = torch::arange(200, torch::kInt64).remainder(5);
    auto features = torch::one_hot(labels, 5).to(torch::kFloat32) * 3 + torch::randn({200, 5}) * 0.1;
    auto result = hita::linear_probe(features.slice(0, 0, 100), labels.slice(0, 0, 100), features.slice(0, 100),
                                     labels.slice(0, 100));
    EXPECT_EQ(result.train_accuracy, 1.0);
    EXPECT_EQ(result.test_accuracy, 1.0);
}

TEST(Probe, SingleClassIsValidationError) {
    auto labels = torch::zeros({10}, torch::kInt64);
    EXPECT_THROW(hita::linear_probe(torch::randn({10, 3}), labels, torch::randn({5, 3}), labels.slice(0, 0, 5)),
                 hita::ValidationError);
    EXPECT_THROW(hita::linear_probe(torch::randn({10, 3}), labels, torch::randn({5, 4}), labels.slice(0, 0, 5)),
                 hita::ShapeError);
}

TEST(Applications, LeaveParametersUntouched) {
    auto config = app_config();
    torch::manual_seed(12);
    hita::HolisticTokenizer tok(config);
    hita::ARModel ar(config);
    const double tok_before = hita::parameter_checksum(*tok);
    const double ar_before = hita::parameter_checksum(*ar);
    auto corpus = hita::make_synthetic_corpus(config, 32, 13);
    hita::style_transfer(tok, corpus.batch(0, 4), corpus.batch(4, 8));
    hita::inpaint(tok, ar, corpus.batch(0, 2), {});
    hita::tokenizer_probe(tok, corpus.slice(0, 24), corpus.slice(24, 32));
    hita::generate(ar, 1, {});
    EXPECT_EQ(hita::parameter_checksum(*tok), tok_before);
    EXPECT_EQ(hita::parameter_checksum(*ar), ar_before);
}

#include <gtest/gtest.h>

#include "hita/config.hpp"
#include "hita/errors.hpp"
#include "hita/quantizer.hpp"

namespace {

auto unit_rows(int64_t n, int64_t d, torch::ScalarType dtype = torch::kFloat32) -> torch::Tensor {
    auto x = torch::randn({n, d}, dtype);
    return x / x.norm(2, -1, true);
}

auto book_from(const torch::Tensor& rows) -> hita::Codebook {
    hita::Codebook book(rows.size(0), rows.size(1), hita::CodebookRole::patch);
    torch::NoGradGuard no_grad;
    book->vectors.copy_(rows);
    return book;
}

// Exhaustive scan with explicit squared differences in long double.
auto brute_force_ids(const torch::Tensor& inputs, const torch::Tensor& codes) -> std::vector<int64_t> {
    auto z = inputs.to(torch::kFloat64).contiguous();
    auto c = codes.to(torch::kFloat64).contiguous();
    auto za = z.accessor<double, 2>();
    auto ca = c.accessor<double, 2>();
    std::vector<int64_t> out;
    for (int64_t i = 0; i < z.size(0); ++i) {
        long double best = std::numeric_limits<long double>::infinity();
        int64_t arg = -1;
        for (int64_t j = 0; j < c.size(0); ++j) {
            long double d = 0;
            for (int64_t k = 0; k < z.size(1); ++k) {
                const long double diff = static_cast<long double>(za[i][k]) - ca[j][k];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        out.push_back(arg);
    }
    return out;
}

}    // namespace

TEST(ProjectAndNormalize, RowsAreUnitNorm) {
    torch::manual_seed(0);
    hita::CodeProjection proj(32, 8);
    auto out = proj->project_and_normalize(torch::randn({3, 10, 32}) * 5);
    auto norms = out.norm(2, -1);
    EXPECT_TRUE(torch::allclose(norms, torch::ones_like(norms), 0.0, 1e-5));
    EXPECT_EQ(out.size(2), 8);
    EXPECT_EQ(proj->expand(out).size(2), 32);
}

TEST(ProjectAndNormalize, FullProfileCodeDims) {
    auto config = hita::PipelineConfig::full();
    hita::CodeProjection patch(config.embed_dim, config.patch_code_dim);
    hita::CodeProjection holistic(config.embed_dim, config.holistic_code_dim);
    auto x = torch::randn({1, 2, config.embed_dim});
    EXPECT_EQ(patch->project_and_normalize(x).size(2), 8);
    EXPECT_EQ(holistic->project_and_normalize(x).size(2), 12);
}

TEST(ProjectAndNormalize, ZeroVectorTakesEpsilonPath) {
    auto z = hita::l2_normalize(torch::zeros({2, 8}));
    EXPECT_TRUE(torch::isfinite(z).all().item<bool>());
    EXPECT_LE(z.norm(2, -1).max().item<double>(), 1.0);
    hita::CodeProjection proj(16, 8);
    auto out = proj->project_and_normalize(torch::zeros({1, 1, 16}));
    EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
    EXPECT_LE(out.norm().item<double>(), 1.0 + 1e-6);
}

TEST(QuantizeNearest, NearestAxis) {
    auto book = book_from(torch::eye(2));
    auto v = torch::tensor({0.9F, 0.1F});
    auto q = hita::quantize_nearest((v / v.norm()).reshape({1, 1, 2}), book);
    EXPECT_EQ(q.ids.item<int64_t>(), 0);
}

TEST(QuantizeNearest, ExactRowIsFixedPoint) {
    torch::manual_seed(1);
    auto rows = unit_rows(16, 8);
    auto book = book_from(rows);
    for (int64_t j = 0; j < 16; ++j) {
        auto q = hita::quantize_nearest(rows[j].reshape({1, 1, 8}), book);
        EXPECT_EQ(q.ids.item<int64_t>(), j);
        EXPECT_EQ((q.codes.reshape({8}) - rows[j]).abs().max().item<double>(), 0.0);
    }
}

TEST(QuantizeNearest, MatchesBruteForce) {
    torch::manual_seed(2);
    auto book = book_from(unit_rows(16, 8));
    auto inputs = unit_rows(64, 8);
    auto q = hita::quantize_nearest(inputs.reshape({4, 16, 8}), book);
    auto expected = brute_force_ids(inputs, book->vectors.detach());
    auto ids = q.ids.reshape({-1});
    for (int64_t i = 0; i < 64; ++i) {
        EXPECT_EQ(ids[i].item<int64_t>(), expected[static_cast<size_t>(i)]);
    }
}

TEST(QuantizeNearest, OracleSweepUpTo256Codes) {
    torch::manual_seed(3);
    for (int64_t n : {2, 16, 64, 256}) {
        for (int64_t d : {3, 8, 12}) {
            auto book = book_from(unit_rows(n, d));
            auto inputs = unit_rows(200, d);
            auto ids = hita::quantize_nearest(inputs.reshape({1, 200, d}), book).ids.reshape({-1});
            auto expected = brute_force_ids(inputs, book->vectors.detach());
            for (int64_t i = 0; i < 200; ++i) {
                ASSERT_EQ(ids[i].item<int64_t>(), expected[static_cast<size_t>(i)]) << "n=" << n << " d=" << d;
            }
        }
    }
}

TEST(QuantizeNearest, TiesGoToLowestIndex) {
    auto rows = torch::zeros({4, 2});
    rows[0] = torch::tensor({0.0F, 1.0F});
    rows[1] = torch::tensor({1.0F, 0.0F});
    rows[2] = torch::tensor({1.0F, 0.0F});
    rows[3] = torch::tensor({1.0F, 0.0F});
    auto book = book_from(rows);
    EXPECT_EQ(hita::quantize_nearest(torch::tensor({1.0F, 0.0F}).reshape({1, 1, 2}), book).ids.item<int64_t>(), 1);
    // equidistant from rows 0 and 1
    auto mid = torch::tensor({1.0F, 1.0F}) / std::sqrt(2.0F);
    EXPECT_EQ(hita::quantize_nearest(mid.reshape({1, 1, 2}), book).ids.item<int64_t>(), 0);
}

TEST(QuantizeNearest, IdempotentAndCodesAreExactRows) {
    torch::manual_seed(4);
    auto book = book_from(unit_rows(32, 12));
    auto q = hita::quantize_nearest(unit_rows(40, 12).reshape({2, 20, 12}), book);
    auto again = hita::quantize_nearest(q.codes.detach(), book);
    EXPECT_TRUE(torch::equal(again.ids, q.ids));
    EXPECT_TRUE(torch::equal(q.codes, hita::dequantize(q.ids, book)));
    auto flat = q.ids.reshape({-1});
    for (int64_t i = 0; i < flat.size(0); ++i) {
        ASSERT_TRUE(torch::equal(q.codes.reshape({-1, 12})[i], book->vectors[flat[i].item<int64_t>()]));
    }
}

TEST(QuantizeNearest, EuclideanArgminEqualsCosineArgmax) {
    torch::manual_seed(5);
    auto book = book_from(unit_rows(64, 8));
    auto inputs = unit_rows(500, 8);
    auto ids = hita::quantize_nearest(inputs.reshape({1, 500, 8}), book).ids.reshape({-1});
    auto cosine = torch::matmul(inputs.to(torch::kFloat64), book->vectors.detach().to(torch::kFloat64).t()).argmax(1);
    EXPECT_TRUE(torch::equal(ids, cosine));
}

TEST(QuantizeNearest, UsageCountersAndStats) {
    torch::manual_seed(6);
    auto rows = unit_rows(64, 8);
    auto book = book_from(rows);
    EXPECT_THROW(hita::usage_stats(book), hita::StateError);

    hita::quantize_nearest(rows.reshape({1, 64, 8}), book);
    EXPECT_DOUBLE_EQ(hita::usage_stats(book), 1.0);
    EXPECT_EQ(book->usage.sum().item<int64_t>(), 64);

    book->reset_usage();
    hita::quantize_nearest(rows[5].reshape({1, 1, 8}).expand({3, 7, 8}).contiguous(), book);
    EXPECT_DOUBLE_EQ(hita::usage_stats(book), 1.0 / 64.0);
    EXPECT_EQ(book->usage[5].item<int64_t>(), 21);

    // count_usage = false leaves counters alone
    hita::quantize_nearest(rows.reshape({1, 64, 8}), book, false);
    EXPECT_DOUBLE_EQ(hita::usage_stats(book), 1.0 / 64.0);
}

TEST(QuantizeNearest, WrongDimIsShapeError) {
    auto book = book_from(unit_rows(4, 8));
    EXPECT_THROW(hita::quantize_nearest(torch::randn({1, 2, 7}), book), hita::ShapeError);
    EXPECT_THROW(hita::dequantize(torch::tensor({{4}}, torch::kInt64), book), hita::ValidationError);
}

TEST(Codebook, RowsStayUnitAfterUpdates) {
    torch::manual_seed(7);
    hita::Codebook book(64, 8, hita::CodebookRole::holistic);
    torch::optim::SGD opt(book->parameters(), 0.5);
    for (int step = 0; step < 5; ++step) {
        opt.zero_grad();
        (book->vectors * torch::randn({64, 8})).sum().backward();
        opt.step();
        book->renormalize();
        auto norms = book->vectors.norm(2, -1);
        ASSERT_TRUE(torch::allclose(norms, torch::ones_like(norms), 0.0, 1e-5));
    }
}

TEST(Codebook, SeedFromAndReseedDead) {
    torch::manual_seed(8);
    hita::Codebook book(8, 4, hita::CodebookRole::patch);
    auto latents = unit_rows(20, 4);
    book->seed_from(latents);
    // each row is one of the latents, no repeats
    auto match = torch::matmul(book->vectors.detach(), latents.t());
    auto picked = match.argmax(1);
    EXPECT_TRUE(torch::allclose(match.amax(1), torch::ones({8}), 0.0, 1e-5));
    EXPECT_EQ(std::get<0>(torch::_unique(picked)).size(0), 8);

    book->reset_usage();
    book->usage[3] = 1;
    auto before = book->vectors.detach().clone();
    book->reseed_dead(unit_rows(5, 4));
    EXPECT_TRUE(torch::equal(book->vectors[3], before[3]));
}

TEST(StraightThrough, ForwardEqualsCodes) {
    torch::manual_seed(9);
    auto book = book_from(unit_rows(16, 8));
    auto pre = unit_rows(10, 8).reshape({1, 10, 8});
    auto q = hita::quantize_nearest(pre, book);
    auto out = hita::straight_through(pre, q);
    EXPECT_TRUE(torch::equal(out, q.codes));
}

TEST(StraightThrough, SumGradientIsOnes) {
    torch::manual_seed(10);
    auto book = book_from(unit_rows(16, 8));
    auto pre = unit_rows(10, 8).reshape({1, 10, 8}).requires_grad_(true);
    auto q = hita::quantize_nearest(pre, book);
    hita::straight_through(pre, q).sum().backward();
    EXPECT_TRUE(torch::equal(pre.grad(), torch::ones_like(pre)));
    EXPECT_FALSE(book->vectors.grad().defined() && book->vectors.grad().abs().sum().item<double>() != 0.0);
}

TEST(StraightThrough, QuadraticGradientMatchesFiniteDifferences) {
    torch::manual_seed(11);
    auto book = book_from(unit_rows(16, 8, torch::kFloat32));
    auto pre = unit_rows(6, 8, torch::kFloat64).reshape({1, 6, 8}).requires_grad_(true);
    auto q = hita::quantize_nearest(pre, book);
    auto codes = q.codes.detach().to(torch::kFloat64);
    q.codes = codes;
    auto a = torch::randn({1, 6, 8}, torch::kFloat64);
    auto b = torch::randn({1, 6, 8}, torch::kFloat64);
    auto f = [&](const torch::Tensor& y) { return (a * y * y + b * y).sum(); };
    f(hita::straight_through(pre, q)).backward();
    auto analytic = pre.grad().reshape({-1});

    torch::NoGradGuard no_grad;
    const double h = 1e-3;
    auto flat = codes.reshape({-1});
    for (int64_t i = 0; i < flat.size(0); ++i) {
        auto plus = flat.clone();
        auto minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        const double fd = (f(plus.reshape(codes.sizes())).item<double>() - f(minus.reshape(codes.sizes())).item<double>()) / (2 * h);
        const double an = analytic[i].item<double>();
        ASSERT_LE(std::abs(fd - an), 1e-4 * std::max(1.0, std::abs(an))) << i;
    }
}

TEST(StraightThrough, ShapeMismatch) {
    hita::QuantizedTokens q{torch::zeros({1, 2}, torch::kInt64), torch::zeros({1, 2, 8}), hita::CodebookRole::patch};
    EXPECT_THROW(hita::straight_through(torch::zeros({1, 3, 8}), q), hita::ShapeError);
}

TEST(VqLoss, FixedPointAndBetaZero) {
    torch::manual_seed(12);
    auto codes = unit_rows(10, 8).reshape({2, 5, 8});
    EXPECT_EQ(hita::vq_loss(codes.clone(), codes, 0.25).item<double>(), 0.0);
    auto pre = unit_rows(10, 8).reshape({2, 5, 8});
    const double pure = (pre - codes).pow(2).sum(-1).mean().item<double>();
    EXPECT_NEAR(hita::vq_loss(pre, codes, 0.0).item<double>(), pure, 1e-7);
}

TEST(VqLoss, ScalarOracle) {
    torch::manual_seed(13);
    auto pre = torch::randn({3, 7, 12}, torch::kFloat64);
    auto codes = torch::randn({3, 7, 12}, torch::kFloat64);
    const double beta = 0.25;
    auto pa = pre.accessor<double, 3>();
    auto ca = codes.accessor<double, 3>();
    double sum = 0.0;
    for (int b = 0; b < 3; ++b) {
        for (int l = 0; l < 7; ++l) {
            double d = 0.0;
            for (int k = 0; k < 12; ++k) {
                d += (pa[b][l][k] - ca[b][l][k]) * (pa[b][l][k] - ca[b][l][k]);
            }
            sum += d + beta * d;
        }
    }
    EXPECT_NEAR(hita::vq_loss(pre, codes, beta).item<double>(), sum / 21.0, 1e-12);
}

TEST(VqLoss, StopGradientIsolation) {
    torch::manual_seed(14);
    auto pre = torch::randn({1, 4, 8}, torch::kFloat64).requires_grad_(true);
    auto codes = torch::randn({1, 4, 8}, torch::kFloat64).requires_grad_(true);
    const double beta = 0.25;
    hita::vq_loss(pre, codes, beta).backward();
    const double n = 4.0;
    // codes only see the codebook term, pre only the commitment term
    auto expect_codes = 2.0 * (codes - pre).detach() / n;
    auto expect_pre = 2.0 * beta * (pre - codes).detach() / n;
    EXPECT_TRUE(torch::allclose(codes.grad(), expect_codes, 0.0, 1e-12));
    EXPECT_TRUE(torch::allclose(pre.grad(), expect_pre, 0.0, 1e-12));
}

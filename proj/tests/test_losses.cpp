#include <gtest/gtest.h>

#include "support.hpp"
#include "svit/losses.hpp"

using namespace svit;
using namespace svit::testing;

namespace {

// 1x1 linear extractor: one conv, tapped, no nonlinearity.
FeatureExtractor<double> linear_extractor(const std::vector<double>& w, std::size_t out, std::size_t in) {
    FeatureExtractor<double> fx;
    fx.add_conv("conv", Array<double>::constant({out, in, 1, 1}, w), Array<double>::zeros({out}));
    fx.tap();
    return fx;
}

FeatureExtractor<double> tiny_vgg(std::uint64_t seed = 3) { return make_vgg19_extractor<double>({2, 3, 4, 4, 4}, seed); }

double mse_plain(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

}  // namespace

TEST(Extractor, IdenticalImagesIdenticalMaps) {
    Rng rng(1);
    const auto fx = make_vgg19_extractor<float>(kDeskVggWidths, 19);
    const auto img = random_const<float>({3, 32, 32}, rng, 0, 1);
    const auto a = fx.extract(img), b = fx.extract(Array<float>::constant(img.shape(), img.values()));
    ASSERT_EQ(a.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(a[k].values(), b[k].values());
}

TEST(Extractor, TapSpatialSizes) {
    const auto fx = make_vgg19_extractor<float>({2, 2, 2, 2, 2}, 1);
    const auto maps = fx.extract(Array<float>::full({3, 224, 224}, 0.5f));
    const std::size_t expect[] = {224, 112, 56, 28, 14};
    ASSERT_EQ(maps.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(maps[k].dim(1), expect[k]);
    EXPECT_EQ(fx.tap_names(), (std::vector<std::string>{"relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"}));
}

TEST(Extractor, DeskMaps) {
    const auto fx = make_vgg19_extractor<float>(kDeskVggWidths, 19);
    const auto maps = fx.extract(Array<float>::full({3, 32, 32}, 0.5f));
    ASSERT_EQ(maps.size(), 5u);
    EXPECT_EQ(maps.back().shape(), (Shape{64, 2, 2}));
    EXPECT_EQ(maps.front().shape(), (Shape{8, 32, 32}));
}

TEST(Extractor, ParametersAreFrozen) {
    const auto fx = make_vgg19_extractor<float>(kDeskVggWidths, 19);
    const auto params = fx.parameters();
    EXPECT_EQ(params.size(), 2u * 13);
    for (const auto& p : params) EXPECT_FALSE(p.array.requires_grad()) << p.name;
}

TEST(Extractor, RejectsEvenKernelAndEarlyTap) {
    FeatureExtractor<double> fx;
    EXPECT_THROW(fx.tap(), ConfigError);
    EXPECT_THROW(fx.add_conv("c", Array<double>::zeros({1, 1, 2, 2}), Array<double>::zeros({1})), DimensionError);
}

TEST(IdentityLoss, Examples) {
    Rng rng(1);
    const auto I = random_const<double>({3, 4, 4}, rng, 0, 1);
    const auto S = random_const<double>({3, 4, 4}, rng, 0, 1);
    EXPECT_EQ(identity_loss(I, I, S, S).item(), 0.0);
    const auto zero = Array<double>::zeros({3, 4, 4}), one = Array<double>::full({3, 4, 4}, 1);
    EXPECT_DOUBLE_EQ(identity_loss(zero, one, S, S).item(), 1.0);
    const auto Ih = random_const<double>({3, 4, 4}, rng, 0, 1);
    const auto Sh = random_const<double>({3, 4, 4}, rng, 0, 1);
    EXPECT_NEAR(identity_loss(I, Ih, S, Sh).item(), identity_loss(S, Sh, I, Ih).item(), 1e-15);
    EXPECT_THROW(identity_loss(I, Array<double>::zeros({3, 4, 5}), S, S), DimensionError);
}

TEST(ConsistencyLoss, ZeroAtPerfectReconstruction) {
    Rng rng(2);
    const auto fx = tiny_vgg();
    const auto I = random_const<double>({3, 16, 16}, rng, 0, 1);
    const auto S = random_const<double>({3, 16, 16}, rng, 0, 1);
    EXPECT_EQ(consistency_loss(I, I, S, S, fx).item(), 0.0);
}

TEST(ConsistencyLoss, Additivity) {
    Rng rng(3);
    const auto fx = tiny_vgg();
    const auto I = random_const<double>({3, 16, 16}, rng, 0, 1), Ih = random_const<double>({3, 16, 16}, rng, 0, 1);
    const auto S = random_const<double>({3, 16, 16}, rng, 0, 1), Sh = random_const<double>({3, 16, 16}, rng, 0, 1);
    const double both = consistency_loss(I, Ih, S, Sh, fx).item();
    const double first = consistency_loss(I, Ih, S, S, fx).item();
    const double second = consistency_loss(I, I, S, Sh, fx).item();
    EXPECT_NEAR(both, first + second, 1e-12);
}

TEST(ConsistencyLoss, HandComputedTwoTapToy) {
    // Tap 1: y = 2*x0 - x1 (1x1 conv). Tap 2: relu(y).
    FeatureExtractor<double> fx;
    fx.add_conv("conv", Array<double>::constant({1, 2, 1, 1}, {2, -1}), Array<double>::zeros({1}));
    fx.tap();
    fx.add_relu("relu");
    fx.tap();
    const auto I = Array<double>::constant({2, 1, 2}, {1, 0, 0, 1});    // y = [2, -1]
    const auto Ih = Array<double>::constant({2, 1, 2}, {0, 0, 0, 0});   // y = [0, 0]
    const auto S = Array<double>::constant({2, 1, 2}, {1, 1, 1, 1});    // y = [1, 1]
    const auto Sh = Array<double>::constant({2, 1, 2}, {0, 1, 1, 0});   // y = [-1, 2]
    // Pair 1: tap1 mse([2,-1],[0,0]) = 2.5, tap2 mse([2,0],[0,0]) = 2.
    // Pair 2: tap1 mse([1,1],[-1,2]) = 2.5, tap2 mse([1,1],[0,2]) = 1.
    EXPECT_DOUBLE_EQ(consistency_loss(I, Ih, S, Sh, fx).item(), 2.5 + 2 + 2.5 + 1);
}

TEST(AnatomyLoss, ZeroAtIdentityAndNonNegative) {
    Rng rng(4);
    const auto fx = tiny_vgg();
    for (int t = 0; t < 10; ++t) {
        const auto I = random_const<double>({3, 16, 16}, rng, 0, 1);
        const auto T = random_const<double>({3, 16, 16}, rng, 0, 1);
        EXPECT_EQ(anatomy_loss(I, I, fx).item(), 0.0);
        EXPECT_GE(anatomy_loss(I, T, fx).item(), 0.0);
    }
}

TEST(AnatomyLoss, MonotoneAlongInterpolation) {
    Rng rng(5);
    const auto fx = linear_extractor(random_values<double>(4 * 3, rng), 4, 3);
    const auto I = random_const<double>({3, 6, 6}, rng, 0, 1);
    const auto T0 = random_const<double>({3, 6, 6}, rng, 0, 1);
    double previous = std::numeric_limits<double>::infinity();
    const double full = anatomy_loss(I, T0, fx).item();
    for (double t : {1.0, 0.8, 0.5, 0.3, 0.1, 0.0}) {
        std::vector<double> v(I.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = I[i] + t * (T0[i] - I[i]);
        const double l = anatomy_loss(I, Array<double>::constant(I.shape(), v), fx).item();
        EXPECT_LT(l, previous + 1e-15);
        EXPECT_NEAR(l, t * t * full, 1e-12);  // quadratic form of a linear extractor
        previous = l;
    }
}

TEST(StyleLoss, ZeroAtStyle) {
    Rng rng(6);
    const auto fx = tiny_vgg();
    const auto S = random_const<double>({3, 16, 16}, rng, 0, 1);
    EXPECT_EQ(style_loss(S, S, fx).item(), 0.0);
}

TEST(StyleLoss, PixelPermutationInvariantForPointwiseExtractor) {
    Rng rng(7);
    FeatureExtractor<double> fx = linear_extractor(random_values<double>(5 * 3, rng), 5, 3);
    fx.add_relu("relu");
    fx.tap();
    const auto S = random_const<double>({3, 5, 5}, rng, 0, 1);
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<double> v(S.size());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 25; ++i) v[c * 25 + i] = S[c * 25 + perm[i]];
    EXPECT_NEAR(style_loss(S, Array<double>::constant(S.shape(), v), fx).item(), 0.0, 1e-15);
}

TEST(StyleLoss, ConstantShiftUnderLinearExtractor) {
    Rng rng(8);
    const std::size_t out = 4;
    const auto w = random_values<double>(out * 3, rng);
    const auto fx = linear_extractor(w, out, 3);
    const auto S = random_const<double>({3, 6, 6}, rng, 0, 1);
    const double c = 0.3;
    std::vector<double> v(S.values());
    for (auto& e : v) e += c;
    double expect = 0;
    for (std::size_t o = 0; o < out; ++o) {
        const double a = w[o * 3] + w[o * 3 + 1] + w[o * 3 + 2];
        expect += (a * c) * (a * c) / static_cast<double>(out);  // MSE averages over channels
    }
    EXPECT_NEAR(style_loss(S, Array<double>::constant(S.shape(), v), fx).item(), expect, 1e-12);
}

TEST(TotalLoss, ZeroAtFixedPoint) {
    Rng rng(9);
    const auto fx = tiny_vgg();
    const auto I = random_const<double>({3, 16, 16}, rng, 0, 1);
    const auto r = total_loss(I, I, I, I, I, fx, LossWeights{});
    EXPECT_EQ(r.total.item(), 0.0);
    EXPECT_EQ(r.report.total, 0.0);
}

TEST(TotalLoss, DefaultWeights) {
    const LossWeights w;
    EXPECT_EQ(w.identity, 70.0);
    EXPECT_EQ(w.consistency, 1.0);
    EXPECT_EQ(w.anatomy, 7.0);
    EXPECT_EQ(w.style, 10.0);
    EXPECT_EQ(weighted_total(LossReport{1, 1, 1, 1, 0}, w), 88.0);
}

TEST(TotalLoss, ZeroWeightsGiveZero) {
    Rng rng(10);
    const auto fx = tiny_vgg();
    auto img = [&] { return random_const<double>({3, 16, 16}, rng, 0, 1); };
    const auto r = total_loss(img(), img(), img(), img(), img(), fx, LossWeights{0, 0, 0, 0});
    EXPECT_EQ(r.total.item(), 0.0);
    EXPECT_EQ(r.report.total, 0.0);
}

TEST(TotalLoss, ReportIsLinearCombination) {
    Rng rng(11);
    const auto fx = tiny_vgg();
    auto img = [&] { return random_const<double>({3, 16, 16}, rng, 0, 1); };
    const auto I = img(), Ih = img(), S = img(), Sh = img(), T = img();
    const LossWeights w{70, 1, 7, 10};
    const auto r = total_loss(I, Ih, S, Sh, T, fx, w);
    EXPECT_NEAR(r.report.identity, identity_loss(I, Ih, S, Sh).item(), 1e-12);
    EXPECT_NEAR(r.report.consistency, consistency_loss(I, Ih, S, Sh, fx).item(), 1e-12);
    EXPECT_NEAR(r.report.anatomy, anatomy_loss(I, T, fx).item(), 1e-12);
    EXPECT_NEAR(r.report.style, style_loss(S, T, fx).item(), 1e-12);
    EXPECT_NEAR(r.report.total, 70 * r.report.identity + r.report.consistency + 7 * r.report.anatomy + 10 * r.report.style,
                1e-9);
    EXPECT_NEAR(r.total.item(), r.report.total, 1e-9);
}

TEST(TotalLoss, ExtractorGradientsStayZero) {
    Rng rng(12);
    const auto fx = make_vgg19_extractor<float>(kDeskVggWidths, 19);
    auto out = [&] { return random_param<float>({3, 32, 32}, rng, 0, 1); };
    auto in = [&] { return random_const<float>({3, 32, 32}, rng, 0, 1); };
    const auto r = total_loss(in(), out(), in(), out(), out(), fx, LossWeights{});
    backward(r.total);
    for (const auto& p : fx.parameters()) {
        for (float g : p.array.grad()) ASSERT_EQ(g, 0.f) << p.name;
    }
}

TEST(LossGradients, FiniteDifferences) {
    // Smooth two-tap extractor: piecewise-linear stages are checked per op elsewhere,
    // and their kinks make central differences unreliable through deep stacks.
    for (int seed = 0; seed < kGradSeeds; ++seed) {
        Rng rng(seed);
        FeatureExtractor<double> fx;
        fx.add_conv("c1", random_const<double>({4, 3, 3, 3}, rng, -0.5, 0.5), random_const<double>({4}, rng));
        fx.tap();
        fx.add_conv("c2", random_const<double>({5, 4, 3, 3}, rng, -0.5, 0.5), random_const<double>({5}, rng));
        fx.tap();
        const auto I = random_const<double>({3, 6, 6}, rng, 0, 1);
        const auto S = random_const<double>({3, 6, 6}, rng, 0, 1);
        auto Ih = random_param<double>({3, 6, 6}, rng, 0, 1);
        auto Sh = random_param<double>({3, 6, 6}, rng, 0, 1);
        auto T = random_param<double>({3, 6, 6}, rng, 0, 1);
        auto f = [&](const std::vector<Array<double>>& x) {
            return total_loss(I, x[0], S, x[1], x[2], fx, LossWeights{}).total;
        };
        EXPECT_LT(max_gradient_error(f, {Ih, Sh, T}, 40 + seed), kFdTolerance) << "seed " << seed;
    }
}

TEST(LossGradients, StyleStatisticsMatchPlainFormula) {
    Rng rng(13);
    const auto fx = linear_extractor(random_values<double>(2 * 3, rng), 2, 3);
    const auto S = random_const<double>({3, 4, 4}, rng, 0, 1);
    const auto T = random_const<double>({3, 4, 4}, rng, 0, 1);
    auto stats = [](const Array<double>& f) {
        std::vector<double> mu, sd;
        const std::size_t hw = f.dim(1) * f.dim(2);
        for (std::size_t c = 0; c < f.dim(0); ++c) {
            double m = 0, v = 0;
            for (std::size_t i = 0; i < hw; ++i) m += f[c * hw + i] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) v += (f[c * hw + i] - m) * (f[c * hw + i] - m) / static_cast<double>(hw);
            mu.push_back(m);
            sd.push_back(std::sqrt(std::max(v, kVarianceFloor)));
        }
        return std::pair{mu, sd};
    };
    const auto [ms, ss] = stats(fx.extract(S)[0]);
    const auto [mt, st] = stats(fx.extract(T)[0]);
    EXPECT_NEAR(style_loss(S, T, fx).item(), mse_plain(ms, mt) + mse_plain(ss, st), 1e-12);
}

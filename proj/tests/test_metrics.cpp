#include <gtest/gtest.h>

#include <set>

#include "support.hpp"
#include "svit/metrics.hpp"
#include "svit/synthetic.hpp"

using namespace svit;
using namespace svit::testing;

namespace {

Image filled(std::size_t c, std::size_t h, std::size_t w, float v) {
    Image img(c, h, w);
    std::fill(img.data.begin(), img.data.end(), v);
    return img;
}

Image with_noise(const Image& img, double sigma, Rng& rng) {
    Image out = img;
    for (auto& v : out.data) v = static_cast<float>(v + sigma * rng.normal());
    return out;
}

Image flipped(const Image& img) {
    Image out = img;
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                out.data[(c * img.height + y) * img.width + x] = img.data[(c * img.height + y) * img.width + img.width - 1 - x];
    return out;
}

}  // namespace

TEST(Psnr, IdenticalIsCapped) {
    Rng rng(1);
    const auto x = random_image(3, 8, 8, rng);
    EXPECT_EQ(psnr(x, x), 99.0);
}

TEST(Psnr, KnownValue) {
    EXPECT_NEAR(psnr(filled(3, 4, 4, 0.f), filled(3, 4, 4, 0.1f)), 20.0, 1e-5);
    EXPECT_NEAR(psnr(filled(1, 4, 4, 0.f), filled(1, 4, 4, 1.f)), 0.0, 1e-12);
}

TEST(Psnr, SymmetricAndMonotoneInNoise) {
    Rng rng(2);
    for (int t = 0; t < 10; ++t) {
        const auto x = random_image(3, 16, 16, rng);
        const auto y = random_image(3, 16, 16, rng);
        EXPECT_EQ(psnr(x, y), psnr(y, x));
        double previous = 1e9;
        for (double sigma : {0.01, 0.05, 0.1}) {
            Rng noise(100 + t);
            const double p = psnr(x, with_noise(x, sigma, noise));
            EXPECT_LT(p, previous);
            previous = p;
        }
    }
}

TEST(Psnr, ShapeMismatchThrows) {
    EXPECT_THROW(psnr(filled(3, 4, 4, 0), filled(3, 4, 5, 0)), DimensionError);
    EXPECT_THROW(psnr(Image(), Image()), DimensionError);
}

TEST(Ssim, IdenticalIsOne) {
    Rng rng(3);
    const auto x = random_image(3, 16, 16, rng);
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Ssim, ConstantImages) {
    const double c1 = 0.01 * 0.01;
    EXPECT_NEAR(ssim(filled(3, 12, 12, 0), filled(3, 12, 12, 1)), c1 / (1 + c1), 1e-12);
}

TEST(Ssim, SymmetricBoundedFlipInvariant) {
    Rng rng(4);
    for (int t = 0; t < 10; ++t) {
        const auto x = random_image(3, 16, 20, rng);
        Rng noise(t);
        const auto y = with_noise(x, 0.1, noise);
        const double s = ssim(x, y);
        EXPECT_NEAR(s, ssim(y, x), 1e-12);
        EXPECT_LE(s, 1.0);
        EXPECT_GT(s, -1.0);
        EXPECT_NEAR(s, ssim(flipped(x), flipped(y)), 1e-12);
    }
}

TEST(Ssim, WindowLargerThanImageThrows) {
    EXPECT_THROW(ssim(filled(3, 8, 8, 0), filled(3, 8, 8, 0)), DimensionError);
    SsimOptions o;
    o.window = 7;
    EXPECT_NO_THROW(ssim(filled(3, 8, 8, 0), filled(3, 8, 8, 0), o));
}

TEST(ProxyFid, IdenticalSetsAreZero) {
    Rng rng(5);
    FeatureSet a;
    for (int i = 0; i < 40; ++i) a.push_back(random_values<double>(6, rng));
    EXPECT_NEAR(proxy_fid(a, a), 0.0, 1e-6);
}

TEST(ProxyFid, OneDimensionalShift) {
    EXPECT_NEAR(proxy_fid({{-1}, {1}}, {{0}, {2}}), 1.0, 1e-9);
}

TEST(ProxyFid, DiagonalCovarianceClosedForm) {
    // Both sets have isotropic sample covariance, so the distance reduces to
    // |mu_a - mu_b|^2 + sum_k (sigma_a,k - sigma_b,k)^2.
    const FeatureSet a{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    FeatureSet b;
    for (const auto& p : a) b.push_back({2 * p[0] + 3, 2 * p[1] - 1});
    const double va = 2.0 / 3, vb = 8.0 / 3;
    const double expect = 9 + 1 + 2 * std::pow(std::sqrt(vb) - std::sqrt(va), 2);
    EXPECT_NEAR(proxy_fid(a, b), expect, 1e-5);
}

TEST(ProxyFid, SymmetricAndNonNegative) {
    Rng rng(6);
    for (int t = 0; t < 10; ++t) {
        FeatureSet a, b;
        for (int i = 0; i < 30; ++i) a.push_back(random_values<double>(4, rng));
        for (int i = 0; i < 25; ++i) b.push_back(random_values<double>(4, rng, -0.5, 2));
        const double d = proxy_fid(a, b);
        EXPECT_GE(d, 0);
        EXPECT_NEAR(d, proxy_fid(b, a), 1e-8 * (1 + d));
    }
}

TEST(ProxyFid, DimensionMismatchThrows) {
    EXPECT_THROW(proxy_fid({{1, 2}, {3, 4}}, {{1}, {2}}), DimensionError);
}

TEST(ColorTransformTest, IdentityLeavesImage) {
    Rng rng(7);
    const ColorTransform f(ColorTransformSpec::identity());
    EXPECT_TRUE(f.is_identity());
    const auto x = random_image(3, 8, 8, rng);
    EXPECT_EQ(f(x).data, x.data);
}

TEST(ColorTransformTest, StrongGeometry) {
    const Eigen::Vector3d ones = Eigen::Vector3d::Ones();
    const Eigen::Vector3d chroma(1, -1, 0);
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        const ColorTransform f(ColorTransformSpec::strong(seed));
        EXPECT_FALSE(f.is_identity());
        const Eigen::Matrix3d& m = f.matrix();
        // Grey is an eigenvector with the contrast gain as eigenvalue.
        const Eigen::Vector3d g = m * ones;
        const double contrast = g[0];
        EXPECT_NEAR(g[1], contrast, 1e-12);
        EXPECT_NEAR(g[2], contrast, 1e-12);
        EXPECT_NEAR(std::abs(contrast - 1.0), 0.2, 1e-12);
        // Chroma vectors are scaled by contrast * saturation and turned a third of a circle.
        const Eigen::Vector3d q = m * chroma;
        EXPECT_NEAR(q.dot(ones), 0.0, 1e-12);
        const double gain = q.norm() / chroma.norm();
        EXPECT_TRUE(std::abs(gain - contrast * 1.3) < 1e-12 || std::abs(gain - contrast * 0.7) < 1e-12) << gain;
        EXPECT_NEAR(q.dot(chroma) / (q.norm() * chroma.norm()), -0.5, 1e-12);
        // Mid-grey moves by the brightness offset only.
        const Eigen::Vector3d mid = m * (0.5 * ones) + f.offset();
        EXPECT_NEAR(std::abs(mid[0] - 0.5), 0.1, 1e-12);
    }
}

TEST(ColorTransformTest, OutputClampedAndDeterministic) {
    Rng rng(8);
    const auto x = random_image(3, 8, 8, rng);
    const ColorTransform f(ColorTransformSpec::strong(3)), g(ColorTransformSpec::strong(3));
    const auto y = f(x);
    EXPECT_EQ(y.data, g(x).data);
    for (float v : y.data) {
        EXPECT_GE(v, 0.f);
        EXPECT_LE(v, 1.f);
    }
    EXPECT_THROW(f(filled(1, 4, 4, 0)), DimensionError);
}

TEST(Protocol, OracleStylizerPassesEveryRow) {
    Rng rng(9);
    std::vector<Image> a, s;
    for (int i = 0; i < 7; ++i) a.push_back(random_image(3, 8, 8, rng)), s.push_back(random_image(3, 8, 8, rng));
    const auto spec = ColorTransformSpec::strong(1);
    const ColorTransform f(spec);
    const Stylizer oracle = [&](const Image& anatomy, const Image&) { return f(anatomy); };
    const auto dir = scratch_dir("protocol");
    const auto r = anatomy_preservation_protocol(oracle, a, s, spec, false, dir);
    ASSERT_EQ(r.rows.size(), 7u);
    EXPECT_EQ(r.pass_rate, 1.0);
    EXPECT_FALSE(r.untrained);
    for (std::size_t i = 0; i < 7; ++i) {
        EXPECT_EQ(r.rows[i].index, i);
        EXPECT_EQ(r.rows[i].psnr_stylized, 99.0);
        EXPECT_NEAR(r.rows[i].psnr_baseline, psnr(a[i], f(a[i])), 1e-12);
    }
    std::size_t sheets = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto img = read_png(e.path());
        EXPECT_EQ(img.width, 4u * 8);
        ++sheets;
    }
    EXPECT_EQ(sheets, 7u);
}

TEST(Protocol, IdentityTransformNeverPasses) {
    Rng rng(10);
    std::vector<Image> a, s;
    for (int i = 0; i < 5; ++i) a.push_back(random_image(3, 8, 8, rng)), s.push_back(random_image(3, 8, 8, rng));
    const Stylizer copy = [](const Image& anatomy, const Image&) { return anatomy; };
    const auto r = anatomy_preservation_protocol(copy, a, s, ColorTransformSpec::identity());
    EXPECT_EQ(r.pass_rate, 0.0);
    for (const auto& row : r.rows) EXPECT_EQ(row.psnr_baseline, 99.0);
}

TEST(Protocol, UntrainedFlagAndMismatch) {
    Rng rng(11);
    std::vector<Image> a{random_image(3, 8, 8, rng)};
    const Stylizer copy = [](const Image& anatomy, const Image&) { return anatomy; };
    EXPECT_TRUE(anatomy_preservation_protocol(copy, a, a, ColorTransformSpec::strong(0), true).untrained);
    EXPECT_THROW(anatomy_preservation_protocol(copy, a, {}, ColorTransformSpec::strong(0)), DimensionError);
}

TEST(Reports, ReconstructionOfPerfectStylizer) {
    Rng rng(12);
    std::vector<Image> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_image(3, 16, 16, rng));
    const Stylizer copy = [](const Image& anatomy, const Image&) { return anatomy; };
    const auto r = reconstruction_report(copy, imgs);
    EXPECT_EQ(r.pairs, 3u);
    EXPECT_EQ(r.psnr, 99.0);
    EXPECT_NEAR(r.ssim, 1.0, 1e-12);
}

TEST(Reports, TransferOfStyleCopyIsZero) {
    Rng rng(13);
    std::vector<Image> a, s;
    for (int i = 0; i < 6; ++i) a.push_back(random_image(3, 16, 16, rng)), s.push_back(random_image(3, 16, 16, rng));
    const Stylizer style_copy = [](const Image&, const Image& style) { return style; };
    const auto fx = make_vgg19_extractor<float>({2, 3, 4, 4, 4}, 1);
    EXPECT_NEAR(transfer_report(style_copy, fx, a, s).proxy_fid, 0.0, 1e-6);
    EXPECT_THROW(transfer_report(style_copy, fx, a, {}), DimensionError);
}

TEST(Synthetic, DeterministicAndSized) {
    SyntheticDatasetSpec spec;
    spec.train_count = 12;
    spec.val_count = 6;
    spec.test_count = 6;
    for (std::size_t split = 0; split < 3; ++split) {
        const auto a = generate_split(spec, split), b = generate_split(spec, split);
        ASSERT_EQ(a.size(), spec.count(split));
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].image.data, b[i].image.data);
            EXPECT_EQ(a[i].image.shape(), (Shape{3, 32, 32}));
            EXPECT_LT(a[i].label, kShapeClasses.size());
            EXPECT_EQ(a[i].name.rfind(kShapeClasses[a[i].label], 0), 0u) << a[i].name;
            for (float v : a[i].image.data) {
                ASSERT_GE(v, 0.f);
                ASSERT_LE(v, 1.f);
            }
        }
    }
    spec.seed = 8;
    EXPECT_NE(generate_split(spec, 0)[0].image.data, generate_split(SyntheticDatasetSpec{}, 0)[0].image.data);
}

TEST(Synthetic, SplitsUseDisjointFamilies) {
    const SyntheticDatasetSpec spec;
    std::set<std::size_t> per_split[3];
    for (std::size_t split = 0; split < 3; ++split) {
        for (const auto& s : generate_split(spec, split)) per_split[split].insert(s.family);
        EXPECT_EQ(per_split[split].size(), spec.families(split));
    }
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j)
            for (auto f : per_split[i]) EXPECT_EQ(per_split[j].count(f), 0u);
}

TEST(Synthetic, InvalidSpecRejected) {
    SyntheticDatasetSpec spec;
    spec.image_size = 4;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec = {};
    spec.val_families = 0;
    EXPECT_THROW(spec.validate(), ConfigError);
}

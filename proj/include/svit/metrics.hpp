#pragma once

// Image quality metrics, a Frechet distance over extractor features, and the
// recolouring protocol used to check that stylization keeps anatomy intact.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "svit/image.hpp"
#include "svit/log.hpp"
#include "svit/losses.hpp"
#include "svit/model.hpp"

namespace svit {

inline constexpr double kPsnrCap = 99.0;

namespace detail {

inline void require_same_shape(const Image& x, const Image& y, const char* what) {
    if (x.shape() != y.shape()) {
        throw DimensionError(std::string(what) + ": shapes " + to_string(x.shape()) + " and " + to_string(y.shape()) +
                             " differ");
    }
    if (x.data.empty()) throw DimensionError(std::string(what) + ": empty image");
}

}  // namespace detail

inline double mean_squared_error(const Image& x, const Image& y) {
    detail::require_same_shape(x, y, "mse");
    double acc = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double d = static_cast<double>(x.data[i]) - y.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.data.size());
}

// Peak signal-to-noise ratio for unit data range, capped for identical inputs.
inline double psnr(const Image& x, const Image& y) {
    const double m = mean_squared_error(x, y);
    if (m == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gray(const Image& img) {
    const std::size_t hw = img.height * img.width;
    std::vector<double> g(hw, 0.0);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t i = 0; i < hw; ++i) g[i] += img.data[c * hw + i];
    }
    for (auto& v : g) v /= static_cast<double>(img.channels);
    return g;
}

inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
    std::vector<double> w(n);
    const double c = (static_cast<double>(n) - 1) / 2;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) - c;
        w[i] = std::exp(-t * t / (2 * sigma * sigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

}  // namespace detail

// Mean SSIM over all fully contained windows of the channel-mean grayscale.
inline double ssim(const Image& x, const Image& y, const SsimOptions& o = {}) {
    detail::require_same_shape(x, y, "ssim");
    const std::size_t n = o.window, h = x.height, w = x.width;
    if (h < n || w < n) {
        throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                             std::to_string(n) + "x" + std::to_string(n) + " window");
    }
    const auto gx = detail::gray(x), gy = detail::gray(y);
    const auto k = detail::gaussian_window(n, o.sigma);
    const double c1 = o.k1 * o.k1, c2 = o.k2 * o.k2;
    double total = 0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + n <= h; ++r) {
        for (std::size_t c = 0; c + n <= w; ++c) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double wt = k[i] * k[j];
                    const double a = gx[(r + i) * w + c + j], b = gy[(r + i) * w + c + j];
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * a * a;
                    syy += wt * b * b;
                    sxy += wt * a * b;
                }
            }
            const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------- Frechet distance

using FeatureSet = std::vector<std::vector<double>>;

inline constexpr double kCovarianceRidge = 1e-6;

namespace detail {

inline Eigen::MatrixXd as_matrix(const FeatureSet& s, const char* which) {
    if (s.empty()) throw DimensionError(std::string("proxy_fid: feature set ") + which + " is empty");
    const std::size_t dim = s[0].size();
    Eigen::MatrixXd m(s.size(), dim);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i].size() != dim) throw DimensionError(std::string("proxy_fid: ragged feature set ") + which);
        for (std::size_t j = 0; j < dim; ++j) m(i, j) = s[i][j];
    }
    return m;
}

// Unbiased covariance; ridge-regularized when there are too few samples for
// a full-rank estimate.
inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mu) {
    const auto n = x.rows(), d = x.cols();
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = n > 1 ? Eigen::MatrixXd(centered.transpose() * centered / static_cast<double>(n - 1))
                                : Eigen::MatrixXd::Zero(d, d);
    if (n < d + 1) cov.diagonal().array() += kCovarianceRidge;
    return cov;
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Frechet distance between Gaussian fits of two feature sets. Tr((Sa Sb)^1/2)
// is evaluated as the trace of the square root of the symmetric matrix
// Sa^1/2 Sb Sa^1/2, with negative eigenvalues clipped to zero.
inline double proxy_fid(const FeatureSet& a, const FeatureSet& b) {
    const Eigen::MatrixXd xa = detail::as_matrix(a, "a"), xb = detail::as_matrix(b, "b");
    if (xa.cols() != xb.cols()) {
        throw DimensionError("proxy_fid: feature dims " + std::to_string(xa.cols()) + " and " + std::to_string(xb.cols()));
    }
    const Eigen::VectorXd mu_a = xa.colwise().mean(), mu_b = xb.colwise().mean();
    const Eigen::MatrixXd sa = detail::covariance(xa, mu_a), sb = detail::covariance(xb, mu_b);
    const Eigen::MatrixXd root_a = detail::psd_sqrt(sa);
    Eigen::MatrixXd inner = root_a * sb * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2 * cross;
    return std::max(0.0, value);
}

// Global average pool of every tap, concatenated.
inline std::vector<double> feature_embedding(const FeatureExtractor<float>& fx, const Image& img) {
    std::vector<double> out;
    for (const auto& f : fx.extract(to_array<float>(img))) {
        const std::size_t c = f.dim(0), hw = f.size() / c;
        const auto v = f.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0;
            for (std::size_t i = 0; i < hw; ++i) acc += v[ch * hw + i];
            out.push_back(acc / static_cast<double>(hw));
        }
    }
    return out;
}

inline FeatureSet feature_set(const FeatureExtractor<float>& fx, const std::vector<Image>& images) {
    FeatureSet out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(feature_embedding(fx, img));
    return out;
}

struct MetricReport {
    std::string label;
    std::size_t pairs = 0;
    double psnr = 0;
    double ssim = 0;
    double proxy_fid = 0;
    bool has_reconstruction = false;
    bool has_proxy_fid = false;
};

// ---------------------------------------------------------------- colour transform

// Fixed magnitudes; `seed` picks the sign of each adjustment, so every seed
// yields a transform of the same strength.
struct ColorTransformSpec {
    double brightness = 0.0;  // additive offset +-b
    double contrast = 0.0;    // gain about mid-grey 1 +- c
    double saturation = 0.0;  // chroma gain 1 +- s
    double hue = 0.0;         // rotation about the grey axis, +-h turns
    std::uint64_t seed = 0;

    static ColorTransformSpec identity() { return {}; }
    static ColorTransformSpec strong(std::uint64_t seed) { return {0.1, 0.2, 0.3, 1.0 / 3.0, seed}; }
};

// Per-pixel affine colour map followed by clamping to [0, 1]. Pure once
// constructed, so the same instance maps every image identically.
class ColorTransform {
   public:
    explicit ColorTransform(const ColorTransformSpec& spec) : spec_(spec) {
        Rng rng(spec.seed);
        auto sign = [&rng] { return rng.bernoulli(0.5) ? 1.0 : -1.0; };
        brightness_ = sign() * spec.brightness;
        contrast_ = 1.0 + sign() * spec.contrast;
        saturation_ = 1.0 + sign() * spec.saturation;
        angle_ = sign() * spec.hue * 2.0 * std::numbers::pi;
        build();
    }

    const ColorTransformSpec& spec() const { return spec_; }
    const Eigen::Matrix3d& matrix() const { return matrix_; }
    const Eigen::Vector3d& offset() const { return offset_; }
    bool is_identity() const { return matrix_.isIdentity(0) && offset_.isZero(0); }

    Image operator()(const Image& img) const {
        if (img.channels != 3) throw DimensionError("color transform expects RGB, got " + std::to_string(img.channels) + " channels");
        Image out = img;
        const std::size_t hw = img.height * img.width;
        for (std::size_t i = 0; i < hw; ++i) {
            const Eigen::Vector3d px(img.data[i], img.data[hw + i], img.data[2 * hw + i]);
            const Eigen::Vector3d q = matrix_ * px + offset_;
            for (std::size_t c = 0; c < 3; ++c) out.data[c * hw + i] = static_cast<float>(std::clamp(q[c], 0.0, 1.0));
        }
        return out;
    }

   private:
    void build() {
        // Hue rotation and saturation act on the chroma plane orthogonal to grey.
        const Eigen::Vector3d g = Eigen::Vector3d::Ones().normalized();
        const Eigen::Matrix3d grey = g * g.transpose();
        const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle_, g).toRotationMatrix();
        const Eigen::Matrix3d chroma = saturation_ * rot * (Eigen::Matrix3d::Identity() - grey);
        matrix_ = contrast_ * (grey + chroma);
        offset_ = Eigen::Vector3d::Constant(0.5 * (1.0 - contrast_) + brightness_);
        if (spec_.brightness == 0 && spec_.contrast == 0 && spec_.saturation == 0 && spec_.hue == 0) {
            matrix_.setIdentity();
            offset_.setZero();
        }
    }

    ColorTransformSpec spec_;
    double brightness_ = 0, contrast_ = 1, saturation_ = 1, angle_ = 0;
    Eigen::Matrix3d matrix_;
    Eigen::Vector3d offset_;
};

// ---------------------------------------------------------------- protocols

using Stylizer = std::function<Image(const Image& anatomy, const Image& style)>;

inline Stylizer model_stylizer(const StylizingViT<float>& model) {
    return [&model](const Image& anatomy, const Image& style) {
        return clamp01(to_image(model.stylize(to_array<float>(anatomy), to_array<float>(style))));
    };
}

struct ProtocolRow {
    std::size_t index = 0;
    double psnr_stylized = 0;  // PSNR(T, f(I))
    double psnr_baseline = 0;  // PSNR(I, f(I))
    bool pass = false;
};

struct ProtocolReport {
    std::vector<ProtocolRow> rows;
    double pass_rate = 0;
    bool untrained = false;
};

// For each (I, S): T = stylize(I, f(S)), compared against f(I). A row passes
// when T is closer to f(I) than I itself is. Quadruples (I, f(S), T, f(I)) are
// written side by side to `sheet_dir` when it is non-empty.
inline ProtocolReport anatomy_preservation_protocol(const Stylizer& stylize, const std::vector<Image>& anatomy,
                                                    const std::vector<Image>& style, const ColorTransformSpec& spec,
                                                    bool untrained = false,
                                                    const std::filesystem::path& sheet_dir = {}) {
    if (anatomy.size() != style.size()) {
        throw DimensionError("protocol: " + std::to_string(anatomy.size()) + " anatomy vs " +
                             std::to_string(style.size()) + " style images");
    }
    if (untrained) log_warning("anatomy protocol: model is untrained, results are a baseline only");
    const ColorTransform f(spec);
    ProtocolReport report;
    report.untrained = untrained;
    if (!sheet_dir.empty()) std::filesystem::create_directories(sheet_dir);
    std::size_t passed = 0;
    for (std::size_t i = 0; i < anatomy.size(); ++i) {
        const Image s_tilde = f(style[i]);
        const Image target = f(anatomy[i]);
        const Image t = stylize(anatomy[i], s_tilde);
        ProtocolRow row{i, psnr(t, target), psnr(anatomy[i], target), false};
        row.pass = row.psnr_stylized > row.psnr_baseline;
        passed += row.pass;
        report.rows.push_back(row);
        if (!sheet_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "pair_%04zu.png", i);
            write_png(sheet_dir / name, hstack({anatomy[i], s_tilde, t, target}));
        }
    }
    report.pass_rate = anatomy.empty() ? 0.0 : static_cast<double>(passed) / static_cast<double>(anatomy.size());
    return report;
}

// Reconstruction quality on identical pairs: stylize(I, I) against I.
inline MetricReport reconstruction_report(const Stylizer& stylize, const std::vector<Image>& images) {
    MetricReport r;
    r.label = "identical";
    r.has_reconstruction = true;
    for (const auto& img : images) {
        const Image out = stylize(img, img);
        r.psnr += psnr(out, img);
        r.ssim += ssim(out, img);
    }
    r.pairs = images.size();
    if (r.pairs) {
        r.psnr /= static_cast<double>(r.pairs);
        r.ssim /= static_cast<double>(r.pairs);
    }
    return r;
}

// Style transfer quality on distinct pairs: proxy-FID between the stylized
// set and the style inputs.
inline MetricReport transfer_report(const Stylizer& stylize, const FeatureExtractor<float>& fx,
                                    const std::vector<Image>& anatomy, const std::vector<Image>& style) {
    if (anatomy.size() != style.size() || anatomy.empty()) {
        throw DimensionError("transfer_report: need equally many, non-zero anatomy and style images");
    }
    std::vector<Image> outputs;
    for (std::size_t i = 0; i < anatomy.size(); ++i) outputs.push_back(stylize(anatomy[i], style[i]));
    MetricReport r;
    r.label = "distinct";
    r.pairs = anatomy.size();
    r.has_proxy_fid = true;
    r.proxy_fid = proxy_fid(feature_set(fx, outputs), feature_set(fx, style));
    return r;
}

}  // namespace svit

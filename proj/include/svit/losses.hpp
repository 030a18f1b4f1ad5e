#pragma once

// Frozen feature extractor and the four perceptual training losses.

#include <array>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "svit/ops.hpp"
#include "svit/optim.hpp"
#include "svit/random.hpp"

namespace svit {

template <class T>
struct ConvStage {
    std::string name;
    Array<T> weight;  // [out, in, k, k], frozen
    Array<T> bias;    // [out], frozen
};
struct ReluStage {
    std::string name;
};
struct PoolStage {
    std::string name;
};

template <class T>
using ExtractorStage = std::variant<ConvStage<T>, ReluStage, PoolStage>;

// Ordered conv/relu/pool stack with named tap points. Parameters are never
// trainable, so backward leaves their gradient buffers at exactly zero.
template <class T>
class FeatureExtractor {
   public:
    FeatureExtractor() = default;

    void add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
        // He-normal keeps activation scale roughly constant through the ReLUs.
        const double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
        std::vector<T> w(out * in * k * k);
        for (auto& e : w) e = static_cast<T>(rng.normal() * std);
        add_conv(name, Array<T>::parameter({out, in, k, k}, std::move(w), false),
                 Array<T>::parameter({out}, std::vector<T>(out, T(0)), false));
    }

    void add_conv(const std::string& name, Array<T> weight, Array<T> bias) {
        if (weight.rank() != 4 || weight.dim(2) % 2 == 0) {
            throw DimensionError("extractor conv '" + name + "' needs an odd square kernel, got " + to_string(weight.shape()));
        }
        stages_.push_back(ConvStage<T>{name, frozen(weight), frozen(bias)});
    }

    void add_relu(const std::string& name) { stages_.push_back(ReluStage{name}); }
    void add_pool(const std::string& name) { stages_.push_back(PoolStage{name}); }

    // Marks the output of the most recently added stage as a tap.
    void tap() {
        if (stages_.empty()) throw ConfigError("extractor: tap before any stage");
        taps_.push_back(stages_.size() - 1);
    }

    // Per-channel affine input normalization, (x - mean) / std.
    void set_input_normalization(std::vector<T> mean, std::vector<T> std) {
        norm_mean_ = std::move(mean);
        norm_std_ = std::move(std);
    }

    std::size_t tap_count() const { return taps_.size(); }
    const std::vector<ExtractorStage<T>>& stages() const { return stages_; }
    std::vector<ExtractorStage<T>>& stages() { return stages_; }

    std::vector<std::string> tap_names() const {
        std::vector<std::string> out;
        for (auto t : taps_) out.push_back(std::visit([](const auto& s) { return s.name; }, stages_[t]));
        return out;
    }

    std::vector<Array<T>> extract(const Array<T>& image) const {
        Array<T> x = normalize(image);
        std::vector<Array<T>> out;
        std::size_t next_tap = 0;
        const std::size_t last = taps_.empty() ? 0 : taps_.back();
        for (std::size_t i = 0; i <= last && i < stages_.size(); ++i) {
            x = std::visit(
                [&x](const auto& s) -> Array<T> {
                    using S = std::decay_t<decltype(s)>;
                    if constexpr (std::is_same_v<S, ConvStage<T>>) {
                        return conv2d(x, s.weight, s.bias, s.weight.dim(2) / 2);
                    } else if constexpr (std::is_same_v<S, ReluStage>) {
                        return relu(x);
                    } else {
                        return max_pool2d(x, 2);
                    }
                },
                stages_[i]);
            if (next_tap < taps_.size() && taps_[next_tap] == i) {
                out.push_back(x);
                ++next_tap;
            }
        }
        return out;
    }

    ParameterList<T> parameters() const {
        ParameterList<T> out;
        for (const auto& s : stages_) {
            if (const auto* c = std::get_if<ConvStage<T>>(&s)) {
                out.push_back({c->name + ".weight", c->weight});
                out.push_back({c->name + ".bias", c->bias});
            }
        }
        return out;
    }

   private:
    static Array<T> frozen(const Array<T>& a) {
        return Array<T>::parameter(a.shape(), std::vector<T>(a.data().begin(), a.data().end()), false);
    }

    Array<T> normalize(const Array<T>& image) const {
        if (norm_mean_.empty()) return image;
        if (image.rank() != 3 || image.dim(0) != norm_mean_.size()) {
            throw DimensionError("extractor: image " + to_string(image.shape()) + " vs " +
                                 std::to_string(norm_mean_.size()) + "-channel normalization");
        }
        const std::size_t c = image.dim(0), hw = image.size() / c;
        std::vector<T> shift(image.size()), gain(image.size());
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) {
                gain[ch * hw + i] = T(1) / norm_std_[ch];
                shift[ch * hw + i] = -norm_mean_[ch] / norm_std_[ch];
            }
        }
        return add(mul(image, Array<T>::constant(image.shape(), std::move(gain))),
                   Array<T>::constant(image.shape(), std::move(shift)));
    }

    std::vector<ExtractorStage<T>> stages_;
    std::vector<std::size_t> taps_;
    std::vector<T> norm_mean_, norm_std_;
};

// VGG19 channel widths per block; the standard network uses {64,128,256,512,512}.
using VggWidths = std::array<std::size_t, 5>;
inline constexpr VggWidths kVgg19Widths{64, 128, 256, 512, 512};
inline constexpr VggWidths kDeskVggWidths{8, 16, 32, 64, 64};

// VGG19 topology truncated after relu5_1, tapping relu1_1 .. relu5_1, with
// ImageNet input normalization. Weights are seeded random unless replaced by
// load_extractor_weights().
template <class T>
FeatureExtractor<T> make_vgg19_extractor(const VggWidths& widths, std::uint64_t seed, std::size_t in_channels = 3) {
    static constexpr std::array<std::size_t, 5> convs_per_block{2, 2, 4, 4, 1};
    FeatureExtractor<T> fx;
    Rng rng(seed);
    std::size_t in = in_channels;
    for (std::size_t b = 0; b < 5; ++b) {
        if (b > 0) fx.add_pool("pool" + std::to_string(b));
        for (std::size_t i = 0; i < convs_per_block[b]; ++i) {
            const std::string id = std::to_string(b + 1) + "_" + std::to_string(i + 1);
            fx.add_conv("conv" + id, in, widths[b], 3, rng);
            fx.add_relu("relu" + id);
            if (i == 0) fx.tap();
            in = widths[b];
        }
    }
    if (in_channels == 3) fx.set_input_normalization({T(0.485), T(0.456), T(0.406)}, {T(0.229), T(0.224), T(0.225)});
    return fx;
}

struct LossWeights {
    double identity = 70.0;
    double consistency = 1.0;
    double anatomy = 7.0;
    double style = 10.0;

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
    double identity = 0;
    double consistency = 0;
    double anatomy = 0;
    double style = 0;
    double total = 0;
};

// l_total from the four terms, evaluated in double.
inline double weighted_total(const LossReport& r, const LossWeights& w) {
    return w.identity * r.identity + w.consistency * r.consistency + w.anatomy * r.anatomy + w.style * r.style;
}

template <class T>
Array<T> identity_loss(const Array<T>& I, const Array<T>& I_hat, const Array<T>& S, const Array<T>& S_hat) {
    return add(mse(I, I_hat), mse(S, S_hat));
}

namespace detail {

template <class T>
Array<T> sum_all(const std::vector<Array<T>>& terms) {
    if (terms.empty()) return Array<T>::scalar(T(0));
    Array<T> acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

template <class T>
Array<T> feature_distance(const std::vector<Array<T>>& a, const std::vector<Array<T>>& b) {
    if (a.size() != b.size()) throw DimensionError("feature pyramids differ in depth");
    std::vector<Array<T>> terms;
    for (std::size_t k = 0; k < a.size(); ++k) terms.push_back(mse(a[k], b[k]));
    return sum_all(terms);
}

template <class T>
Array<T> statistics_distance(const std::vector<Array<T>>& a, const std::vector<Array<T>>& b) {
    if (a.size() != b.size()) throw DimensionError("feature pyramids differ in depth");
    std::vector<Array<T>> terms;
    for (std::size_t k = 0; k < a.size(); ++k) {
        auto [mu_a, sd_a] = channel_stats(a[k]);
        auto [mu_b, sd_b] = channel_stats(b[k]);
        terms.push_back(add(mse(mu_a, mu_b), mse(sd_a, sd_b)));
    }
    return sum_all(terms);
}

}  // namespace detail

template <class T>
Array<T> consistency_loss(const Array<T>& I, const Array<T>& I_hat, const Array<T>& S, const Array<T>& S_hat,
                          const FeatureExtractor<T>& fx) {
    return add(detail::feature_distance(fx.extract(I), fx.extract(I_hat)),
               detail::feature_distance(fx.extract(S), fx.extract(S_hat)));
}

template <class T>
Array<T> anatomy_loss(const Array<T>& I, const Array<T>& stylized, const FeatureExtractor<T>& fx) {
    return detail::feature_distance(fx.extract(I), fx.extract(stylized));
}

template <class T>
Array<T> style_loss(const Array<T>& S, const Array<T>& stylized, const FeatureExtractor<T>& fx) {
    return detail::statistics_distance(fx.extract(S), fx.extract(stylized));
}

template <class T>
struct LossTerms {
    LossReport report;
    Array<T> total;  // differentiable weighted sum
};

// Weighted objective over one (I, S) pair. Terms with zero weight are skipped
// entirely; their report entry stays 0.
template <class T>
LossTerms<T> total_loss(const Array<T>& I, const Array<T>& I_hat, const Array<T>& S, const Array<T>& S_hat,
                        const Array<T>& stylized, const FeatureExtractor<T>& fx, const LossWeights& w) {
    const bool need_features = w.consistency != 0 || w.anatomy != 0 || w.style != 0;
    std::vector<Array<T>> fI, fS, fT;
    if (need_features) {
        fI = fx.extract(I);
        fS = fx.extract(S);
    }
    if (w.anatomy != 0 || w.style != 0) fT = fx.extract(stylized);

    LossTerms<T> out;
    std::vector<Array<T>> weighted;
    auto take = [&](double weight, const Array<T>& term, double& slot) {
        slot = static_cast<double>(term.item());
        weighted.push_back(scale(term, static_cast<T>(weight)));
    };
    if (w.identity != 0) take(w.identity, identity_loss(I, I_hat, S, S_hat), out.report.identity);
    if (w.consistency != 0) {
        take(w.consistency,
             add(detail::feature_distance(fI, fx.extract(I_hat)), detail::feature_distance(fS, fx.extract(S_hat))),
             out.report.consistency);
    }
    if (w.anatomy != 0) take(w.anatomy, detail::feature_distance(fI, fT), out.report.anatomy);
    if (w.style != 0) take(w.style, detail::statistics_distance(fS, fT), out.report.style);
    out.total = detail::sum_all(weighted);
    out.report.total = weighted_total(out.report, w);
    return out;
}

}  // namespace svit

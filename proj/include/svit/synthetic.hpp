#pragma once

// Procedural stand-in dataset. The "anatomy" is a layout of ellipses,
// rectangles or stripes (the class label); the "style" is a palette family
// plus grain. Layout and palette are drawn from independent streams, and each
// split owns a disjoint set of palette families.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "svit/image.hpp"
#include "svit/random.hpp"

namespace svit {

inline constexpr std::array<const char*, 3> kShapeClasses{"ellipses", "rectangles", "stripes"};
inline constexpr std::array<const char*, 3> kSplitNames{"train", "val", "test"};

struct SyntheticDatasetSpec {
    std::size_t image_size = 32;
    std::size_t train_count = 240;
    std::size_t val_count = 60;
    std::size_t test_count = 60;
    // Palette families per split. Family hues are interleaved around the
    // colour wheel (see family_id), so every split spans the wheel while no
    // family is shared between splits.
    std::size_t train_families = 6;
    std::size_t val_families = 3;
    std::size_t test_families = 3;
    std::uint64_t seed = 7;

    std::size_t count(std::size_t split) const {
        return split == 0 ? train_count : split == 1 ? val_count : test_count;
    }
    std::size_t families(std::size_t split) const {
        return split == 0 ? train_families : split == 1 ? val_families : test_families;
    }
    std::size_t total_families() const { return train_families + val_families + test_families; }

    // Global id (hue slot) of the j-th family of a split. Slots are dealt
    // round-robin in proportion to each split's family count.
    std::size_t family_id(std::size_t split, std::size_t j) const {
        std::array<std::size_t, 3> dealt{0, 0, 0};
        const std::size_t total = total_families();
        for (std::size_t slot = 0; slot < total; ++slot) {
            // Pick the split furthest behind its share.
            std::size_t best = 3;
            double best_lag = -1e300;
            for (std::size_t s = 0; s < 3; ++s) {
                if (dealt[s] >= families(s)) continue;
                const double lag = static_cast<double>(families(s)) * (slot + 1) / static_cast<double>(total) -
                                   static_cast<double>(dealt[s]);
                if (lag > best_lag) best = s, best_lag = lag;
            }
            if (best == split && dealt[best] == j) return slot;
            ++dealt[best];
        }
        throw ConfigError("synthetic spec: split has no family " + std::to_string(j));
    }

    void validate() const {
        if (image_size < 8) throw ConfigError("synthetic spec: image_size must be at least 8");
        for (std::size_t s = 0; s < 3; ++s) {
            if (count(s) && !families(s)) {
                throw ConfigError(std::string("synthetic spec: split ") + kSplitNames[s] + " has images but no palette families");
            }
        }
    }
};

struct SyntheticSample {
    Image image;
    std::size_t label = 0;   // index into kShapeClasses
    std::size_t family = 0;  // global palette family id
    std::string name;        // "<class>/img_00012.png"
};

struct Palette {
    std::array<std::array<float, 3>, 3> colors;  // background, primary, secondary
    float grain = 0;
};

namespace detail {

inline std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double i = std::floor(h * 6), f = h * 6 - i;
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    double r, g, b;
    switch (static_cast<int>(i) % 6) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

}  // namespace detail

// Family k sits at hue k / total on the colour wheel; individual images jitter
// around it. Every third family has a dark background, the rest light.
inline Palette sample_palette(std::size_t family, std::size_t total_families, Rng& rng) {
    const double base = static_cast<double>(family) / static_cast<double>(total_families);
    const double spread = 0.25 / static_cast<double>(total_families);
    const double h = base + rng.uniform(-spread, spread);
    const bool dark = family % 3 == 0;
    Palette p;
    p.colors[0] = detail::hsv_to_rgb(h + 0.5, rng.uniform(0.3, 0.6), dark ? rng.uniform(0.1, 0.25) : rng.uniform(0.8, 0.95));
    p.colors[1] = detail::hsv_to_rgb(h, rng.uniform(0.7, 0.95), dark ? rng.uniform(0.75, 0.95) : rng.uniform(0.35, 0.55));
    p.colors[2] = detail::hsv_to_rgb(h + 0.12, rng.uniform(0.4, 0.7), rng.uniform(0.5, 0.7));
    p.grain = static_cast<float>(rng.uniform(0.0, 0.04));
    return p;
}

// Region map: 0 background, 1 primary, 2 secondary. Rendered with 4x4
// supersampling into per-region coverage.
inline std::vector<std::array<float, 3>> sample_layout(std::size_t label, std::size_t size, Rng& rng) {
    constexpr int ss = 4;
    const double n = static_cast<double>(size);
    std::vector<std::array<float, 3>> cover(size * size, {0.f, 0.f, 0.f});
    struct Shape {
        double cx, cy, rx, ry, angle;
        int region;
    };
    std::vector<Shape> shapes;
    double stripe_period = 0, stripe_phase = 0, stripe_angle = 0, stripe_duty = 0;
    if (label == 2) {
        stripe_period = rng.uniform(0.18, 0.4) * n;
        stripe_phase = rng.uniform(0.0, 1.0);
        stripe_angle = rng.uniform(0.0, std::numbers::pi);
        stripe_duty = rng.uniform(0.3, 0.6);
    } else {
        const std::size_t count = 1 + rng.index(3);
        for (std::size_t i = 0; i < count; ++i) {
            Shape s;
            s.cx = rng.uniform(0.2, 0.8) * n;
            s.cy = rng.uniform(0.2, 0.8) * n;
            s.rx = rng.uniform(0.12, 0.3) * n;
            s.ry = rng.uniform(0.12, 0.3) * n;
            s.angle = rng.uniform(0.0, std::numbers::pi);
            s.region = 1 + static_cast<int>(i % 2);
            shapes.push_back(s);
        }
    }
    const double ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            auto& c = cover[y * size + x];
            for (int sy = 0; sy < ss; ++sy) {
                for (int sx = 0; sx < ss; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / ss;
                    const double py = static_cast<double>(y) + (sy + 0.5) / ss;
                    int region = 0;
                    if (label == 2) {
                        const double t = (px * ca + py * sa) / stripe_period + stripe_phase;
                        const double frac = t - std::floor(t);
                        const long band = static_cast<long>(std::floor(t));
                        if (frac < stripe_duty) region = ((band % 3) + 3) % 3 == 0 ? 2 : 1;
                    } else {
                        for (const auto& s : shapes) {
                            const double dx = px - s.cx, dy = py - s.cy;
                            const double u = (dx * std::cos(s.angle) + dy * std::sin(s.angle)) / s.rx;
                            const double v = (-dx * std::sin(s.angle) + dy * std::cos(s.angle)) / s.ry;
                            const bool inside = label == 0 ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
                            if (inside) region = s.region;
                        }
                    }
                    c[region] += 1.f / (ss * ss);
                }
            }
        }
    }
    return cover;
}

inline Image render(const std::vector<std::array<float, 3>>& cover, std::size_t size, const Palette& p, Rng& grain_rng) {
    Image img(3, size, size);
    for (std::size_t i = 0; i < size * size; ++i) {
        const float noise = p.grain * static_cast<float>(grain_rng.normal());
        for (std::size_t ch = 0; ch < 3; ++ch) {
            float v = 0;
            for (std::size_t r = 0; r < 3; ++r) v += cover[i][r] * p.colors[r][ch];
            img.data[ch * size * size + i] = std::clamp(v + noise, 0.f, 1.f);
        }
    }
    return quantize8(img);
}

// Images of one split (0 train, 1 val, 2 test), in a fixed order. Sample i of
// a split is a function of (seed, split, i) only.
inline std::vector<SyntheticSample> generate_split(const SyntheticDatasetSpec& spec, std::size_t split) {
    spec.validate();
    if (split > 2) throw ConfigError("synthetic: split index out of range");
    std::vector<SyntheticSample> out;
    const std::uint64_t split_seed = derive_seed(spec.seed, split);
    for (std::size_t i = 0; i < spec.count(split); ++i) {
        const std::uint64_t item = derive_seed(split_seed, i);
        Rng layout_rng(derive_seed(item, 1));
        Rng palette_rng(derive_seed(item, 2));
        Rng grain_rng(derive_seed(item, 3));
        SyntheticSample s;
        s.label = i % kShapeClasses.size();
        s.family = spec.family_id(split, palette_rng.index(spec.families(split)));
        const auto cover = sample_layout(s.label, spec.image_size, layout_rng);
        s.image = render(cover, spec.image_size, sample_palette(s.family, spec.total_families(), palette_rng), grain_rng);
        char name[64];
        std::snprintf(name, sizeof name, "%s/img_%05zu.png", kShapeClasses[s.label], i);
        s.name = name;
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<Image> images_of(const std::vector<SyntheticSample>& samples) {
    std::vector<Image> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.image);
    return out;
}

// Writes <root>/<split>/<class>/img_NNNNN.png plus <root>/palettes.csv.
inline void write_synthetic_dataset(const SyntheticDatasetSpec& spec, const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    std::ofstream index(root / "palettes.csv", std::ios::trunc);
    if (!index) throw IoError("cannot write " + (root / "palettes.csv").string());
    index << "split,file,label,family\n";
    for (std::size_t split = 0; split < 3; ++split) {
        for (const auto& s : generate_split(spec, split)) {
            const auto path = root / kSplitNames[split] / s.name;
            std::filesystem::create_directories(path.parent_path());
            write_png(path, s.image);
            index << kSplitNames[split] << ',' << s.name << ',' << kShapeClasses[s.label] << ',' << s.family << '\n';
        }
    }
}

}  // namespace svit

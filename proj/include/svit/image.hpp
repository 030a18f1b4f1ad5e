#pragma once

// Channels-first float images in [0, 1], PNG codec, and resize helpers.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "svit/array.hpp"

namespace svit {

struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;  // [c][y][x]

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.f)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

    Shape shape() const { return {channels, height, width}; }

    friend bool operator==(const Image&, const Image&) = default;
};

template <class T>
Array<T> to_array(const Image& img) {
    return Array<T>::constant(img.shape(), std::vector<T>(img.data.begin(), img.data.end()));
}

template <class T>
Image to_image(const Array<T>& a) {
    if (a.rank() != 3) throw DimensionError("to_image: expected [c,H,W], got " + to_string(a.shape()));
    Image img(a.dim(0), a.dim(1), a.dim(2));
    std::transform(a.data().begin(), a.data().end(), img.data.begin(), [](T v) { return static_cast<float>(v); });
    return img;
}

inline Image clamp01(Image img) {
    for (auto& v : img.data) v = std::clamp(v, 0.f, 1.f);
    return img;
}

// Concatenates equally tall images left to right.
inline Image hstack(const std::vector<Image>& parts) {
    if (parts.empty()) return {};
    std::size_t w = 0;
    for (const auto& p : parts) {
        if (p.height != parts[0].height || p.channels != parts[0].channels) {
            throw DimensionError("hstack: images differ in height or channels");
        }
        w += p.width;
    }
    Image out(parts[0].channels, parts[0].height, w);
    std::size_t x0 = 0;
    for (const auto& p : parts) {
        for (std::size_t c = 0; c < p.channels; ++c)
            for (std::size_t y = 0; y < p.height; ++y)
                for (std::size_t x = 0; x < p.width; ++x) out.at(c, y, x0 + x) = p.at(c, y, x);
        x0 += p.width;
    }
    return out;
}

namespace detail {

struct PngFile {
    std::FILE* f = nullptr;
    ~PngFile() {
        if (f) std::fclose(f);
    }
};

inline void png_error_fn(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }
inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

// Writes an 8-bit RGB (or gray, for 1 channel) PNG. Values are clamped to
// [0, 1] and rounded to the nearest level.
inline void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 3 && img.channels != 1) throw DimensionError("write_png: need 1 or 3 channels");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    detail::PngFile file{std::fopen(path.c_str(), "wb")};
    if (!file.f) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn, detail::png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed for " + path.string());
    }
    std::vector<png_byte> row(img.width * img.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode failed for " + path.string());
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
                row[x * img.channels + c] = static_cast<png_byte>(std::lround(v * 255.f));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads any PNG as 3-channel RGB in [0, 1] (gray is replicated, alpha dropped,
// 16-bit reduced to 8).
inline Image read_png(const std::filesystem::path& path) {
    detail::PngFile file{std::fopen(path.c_str(), "rb")};
    if (!file.f) throw IoError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError("not a PNG file: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn, detail::png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed for " + path.string());
    }
    Image img;
    std::vector<png_byte> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG decode failed for " + path.string());
    }
    png_init_io(png, file.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * h);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img = Image(3, h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(rows[y][x * 3 + c]) / 255.f;
    return img;
}

// Quantizes to the 8-bit levels a PNG round trip would produce.
inline Image quantize8(Image img) {
    for (auto& v : img.data) v = static_cast<float>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)) / 255.f;
    return img;
}

namespace detail {

// Keys cubic convolution kernel, a = -0.5.
inline double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
    if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
    return 0;
}

// 1-D resampling matrix for one axis (with antialiasing when shrinking).
struct Taps {
    std::vector<std::size_t> first;
    std::vector<std::vector<double>> weights;
};

inline Taps cubic_taps(std::size_t in, std::size_t out) {
    Taps t;
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double support = 2.0 * std::max(1.0, scale);
    const double stretch = std::max(1.0, scale);
    for (std::size_t o = 0; o < out; ++o) {
        const double center = (static_cast<double>(o) + 0.5) * scale;
        const auto lo = static_cast<std::ptrdiff_t>(std::floor(center - support));
        const auto hi = static_cast<std::ptrdiff_t>(std::ceil(center + support));
        double total = 0;
        std::vector<std::pair<std::size_t, double>> acc;
        for (std::ptrdiff_t i = lo; i <= hi; ++i) {
            const double weight = cubic_weight((static_cast<double>(i) + 0.5 - center) / stretch);
            if (weight == 0) continue;
            const auto clamped = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(in) - 1));
            acc.emplace_back(clamped, weight);
            total += weight;
        }
        std::size_t first = in, last = 0;
        for (auto& [i, _] : acc) {
            first = std::min(first, i);
            last = std::max(last, i);
        }
        std::vector<double> w(last - first + 1, 0.0);
        for (auto& [i, weight] : acc) w[i - first] += weight / total;
        t.first.push_back(first);
        t.weights.push_back(std::move(w));
    }
    return t;
}

}  // namespace detail

// Separable bicubic resize (edge-clamped, antialiased when shrinking).
inline Image resize_bicubic(const Image& src, std::size_t out_h, std::size_t out_w) {
    if (src.height == out_h && src.width == out_w) return src;
    const auto ty = detail::cubic_taps(src.height, out_h);
    const auto tx = detail::cubic_taps(src.width, out_w);
    Image tmp(src.channels, src.height, out_w);
    for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t y = 0; y < src.height; ++y)
            for (std::size_t x = 0; x < out_w; ++x) {
                double s = 0;
                for (std::size_t k = 0; k < tx.weights[x].size(); ++k) s += tx.weights[x][k] * src.at(c, y, tx.first[x] + k);
                tmp.at(c, y, x) = static_cast<float>(s);
            }
    Image out(src.channels, out_h, out_w);
    for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t x = 0; x < out_w; ++x) {
                double s = 0;
                for (std::size_t k = 0; k < ty.weights[y].size(); ++k) s += ty.weights[y][k] * tmp.at(c, ty.first[y] + k, x);
                out.at(c, y, x) = std::clamp(static_cast<float>(s), 0.f, 1.f);
            }
    return out;
}

enum class FitPolicy {
    crop,  // shorter side to target, then center crop
    pad,   // longer side to target, then center on a black canvas
};

// Brings an image to exactly (h, w) while keeping its aspect ratio.
inline Image fit_to(const Image& src, std::size_t h, std::size_t w, FitPolicy policy = FitPolicy::crop) {
    if (src.height == h && src.width == w) return src;
    const double sy = static_cast<double>(h) / static_cast<double>(src.height);
    const double sx = static_cast<double>(w) / static_cast<double>(src.width);
    const double s = policy == FitPolicy::crop ? std::max(sy, sx) : std::min(sy, sx);
    const auto rh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(src.height * s)));
    const auto rw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(src.width * s)));
    const Image resized = resize_bicubic(src, rh, rw);
    Image out(src.channels, h, w, 0.f);
    for (std::size_t c = 0; c < src.channels; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const auto ry = static_cast<std::ptrdiff_t>(y) + (static_cast<std::ptrdiff_t>(rh) - static_cast<std::ptrdiff_t>(h)) / 2;
                const auto rx = static_cast<std::ptrdiff_t>(x) + (static_cast<std::ptrdiff_t>(rw) - static_cast<std::ptrdiff_t>(w)) / 2;
                if (ry < 0 || rx < 0 || ry >= static_cast<std::ptrdiff_t>(rh) || rx >= static_cast<std::ptrdiff_t>(rw)) continue;
                out.at(c, y, x) = resized.at(c, static_cast<std::size_t>(ry), static_cast<std::size_t>(rx));
            }
        }
    }
    return out;
}

}  // namespace svit

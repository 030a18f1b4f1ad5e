#pragma once

// Decoder-free reconstruction: shared two-layer MLP, half split into a
// (c, p, v) and a (c, v, p) factor per patch, per-channel matrix product back
// to a p x p pixel block, unpatchify, then a 5x5 refinement convolution.

#include <cmath>
#include <string>

#include "svit/encoder.hpp"

namespace svit {

// How the MLP output is divided into the two dot-product factors.
enum class SplitMode {
    expand,  // MLP emits 2d values, each half has d = c*p*v elements, v = d/(c*p)
    halve,   // MLP emits d values, each half has d/2 elements, v = d/(2*c*p)
};

// Ablation ladder, each level adding one component to the previous.
enum class HeadComponents {
    encoder_only,  // tokens mapped back through the transposed patch projection
    mlp,           // MLP straight to c*p*p pixels per token
    mlp_dot,       // MLP + split + per-patch dot product
    full,          // + 5x5 refinement convolution
};

inline const char* to_string(SplitMode m) { return m == SplitMode::expand ? "expand" : "halve"; }
inline const char* to_string(HeadComponents c) {
    switch (c) {
        case HeadComponents::encoder_only: return "encoder_only";
        case HeadComponents::mlp: return "mlp";
        case HeadComponents::mlp_dot: return "mlp_dot";
        default: return "full";
    }
}

inline constexpr std::size_t kRefineKernel = 5;

struct HeadConfig {
    std::size_t embed_dim = 96;
    std::size_t channels = 3;
    std::size_t patch_size = 4;
    std::size_t grid_h = 8;
    std::size_t grid_w = 8;
    std::size_t mlp_hidden = 0;  // 0 means 2*embed_dim
    SplitMode split = SplitMode::expand;
    HeadComponents components = HeadComponents::full;

    static HeadConfig from(const EncoderConfig& e) {
        HeadConfig h;
        h.embed_dim = e.embed_dim;
        h.channels = e.channels;
        h.patch_size = e.patch_size;
        h.grid_h = e.grid_h();
        h.grid_w = e.grid_w();
        return h;
    }

    std::size_t hidden() const { return mlp_hidden ? mlp_hidden : 2 * embed_dim; }
    std::size_t num_tokens() const { return grid_h * grid_w; }
    std::size_t half_size() const { return split == SplitMode::expand ? embed_dim : embed_dim / 2; }
    std::size_t inner_dim() const { return half_size() / (channels * patch_size); }  // v
    std::size_t mlp_out() const {
        return components == HeadComponents::mlp ? channels * patch_size * patch_size : 2 * half_size();
    }

    void validate() const {
        const std::size_t cp = channels * patch_size;
        if (!embed_dim || !cp || !grid_h || !grid_w) throw ConfigError("head config: extents must be positive");
        if (split == SplitMode::halve && embed_dim % 2) throw ConfigError("head config: halve split needs an even embed_dim");
        if (half_size() % cp || inner_dim() == 0) {
            throw ConfigError("head config: factor half of " + std::to_string(half_size()) +
                              " values is not divisible by channels*patch_size = " + std::to_string(cp));
        }
    }

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

// Blocks [n, c, p, p] -> image [c, gh*p, gw*p].
template <class T>
Array<T> unpatchify(const Array<T>& blocks, std::size_t grid_h, std::size_t grid_w) {
    if (blocks.rank() != 4 || blocks.dim(2) != blocks.dim(3)) {
        throw DimensionError("unpatchify: expected [n,c,p,p], got " + to_string(blocks.shape()));
    }
    if (blocks.dim(0) != grid_h * grid_w) {
        throw DimensionError("unpatchify: " + std::to_string(blocks.dim(0)) + " blocks do not fill a " +
                             std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
    const std::size_t c = blocks.dim(1), p = blocks.dim(2);
    const Array<T> grid = permute(reshape(blocks, {grid_h, grid_w, c, p, p}), {2, 0, 3, 1, 4});
    return reshape(grid, {c, grid_h * p, grid_w * p});
}

// x[n, 2h] -> A[n, c, p, v] (first half), B[n, c, v, p] (second half).
template <class T>
std::pair<Array<T>, Array<T>> split_reshape(const Array<T>& x, std::size_t channels, std::size_t patch) {
    if (x.rank() != 2 || x.dim(1) % 2) throw DimensionError("split_reshape: expected [n, 2h], got " + to_string(x.shape()));
    const std::size_t n = x.dim(0), half = x.dim(1) / 2;
    if (half % (channels * patch)) {
        throw DimensionError("split_reshape: half width " + std::to_string(half) + " not divisible by c*p");
    }
    const std::size_t v = half / (channels * patch);
    Array<T> a = reshape(slice(x, 1, 0, half), {n, channels, patch, v});
    Array<T> b = reshape(slice(x, 1, half, 2 * half), {n, channels, v, patch});
    return {a, b};
}

// Per patch and channel: [p, v] x [v, p] -> [p, p].
template <class T>
Array<T> patch_product(const Array<T>& a, const Array<T>& b) {
    if (a.rank() != 4 || b.rank() != 4) throw DimensionError("patch_product expects rank-4 factors");
    return matmul(a, b);
}

template <class T>
class ReconstructionHead {
   public:
    ReconstructionHead(const HeadConfig& config, Rng& rng) : config_(config) {
        config_.validate();
        const std::size_t d = config_.embed_dim, h = config_.hidden(), c = config_.channels;
        if (config_.components != HeadComponents::encoder_only) {
            // Glorot scale: the factor product is bilinear, so near-zero factors
            // would also give near-zero gradients.
            const std::size_t o = config_.mlp_out();
            fc1_weight = detail::init_trunc_normal<T>(rng, {d, h}, std::sqrt(2.0 / static_cast<double>(d + h)));
            fc1_bias = detail::init_const<T>({h}, T(0));
            fc2_weight = detail::init_trunc_normal<T>(rng, {h, o}, std::sqrt(2.0 / static_cast<double>(h + o)));
            fc2_bias = detail::init_const<T>({config_.mlp_out()}, T(0));
        }
        if (config_.components == HeadComponents::full) {
            // Centered delta plus small noise: starts near the identity map.
            const std::size_t k = kRefineKernel;
            std::vector<T> w(c * c * k * k);
            for (auto& e : w) e = static_cast<T>(rng.truncated_normal(0.02));
            for (std::size_t ch = 0; ch < c; ++ch) w[((ch * c + ch) * k + k / 2) * k + k / 2] += T(1);
            conv_weight = Array<T>::parameter({c, c, k, k}, std::move(w));
            conv_bias = detail::init_const<T>({c}, T(0));
        }
    }

    const HeadConfig& config() const { return config_; }

    Array<T> project_tokens(const Array<T>& z) const {
        if (z.rank() != 2 || z.dim(1) != config_.embed_dim) {
            throw DimensionError("project_tokens: tokens " + to_string(z.shape()) + " vs embed_dim " +
                                 std::to_string(config_.embed_dim));
        }
        return linear(gelu(linear(z, fc1_weight, fc1_bias)), fc2_weight, fc2_bias);
    }

    Array<T> refine(const Array<T>& image) const {
        return conv2d(image, conv_weight, conv_bias, kRefineKernel / 2);
    }

    // `patch_weight` is the encoder's patch projection; only the encoder-only
    // ablation reads it.
    Array<T> reconstruct(const Array<T>& z, const Array<T>& patch_weight) const {
        const std::size_t n = config_.num_tokens(), c = config_.channels, p = config_.patch_size;
        if (z.rank() != 2 || z.dim(0) != n) {
            throw DimensionError("reconstruct: expected " + std::to_string(n) + " tokens, got " + to_string(z.shape()));
        }
        Array<T> blocks;
        switch (config_.components) {
            case HeadComponents::encoder_only:
                blocks = reshape(matmul(z, transpose(patch_weight)), {n, c, p, p});
                break;
            case HeadComponents::mlp:
                blocks = reshape(project_tokens(z), {n, c, p, p});
                break;
            default: {
                auto [a, b] = split_reshape(project_tokens(z), c, p);
                blocks = patch_product(a, b);
            }
        }
        Array<T> image = unpatchify(blocks, config_.grid_h, config_.grid_w);
        return config_.components == HeadComponents::full ? refine(image) : image;
    }

    template <class F>
    void visit(F&& f) {
        if (fc1_weight.defined()) {
            f("head.mlp.fc1.weight", fc1_weight);
            f("head.mlp.fc1.bias", fc1_bias);
            f("head.mlp.fc2.weight", fc2_weight);
            f("head.mlp.fc2.bias", fc2_bias);
        }
        if (conv_weight.defined()) {
            f("head.conv.weight", conv_weight);
            f("head.conv.bias", conv_bias);
        }
    }

    Array<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
    Array<T> conv_weight, conv_bias;

   private:
    HeadConfig config_;
};

}  // namespace svit

#pragma once

// Stylizing ViT encoder: one transformer layer per depth whose parameters are
// reused for self-attention on each input stream and cross-attention between
// streams.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "svit/ops.hpp"
#include "svit/optim.hpp"
#include "svit/random.hpp"

namespace svit {

// How the stylized stream enters each layer.
enum class StreamCarry {
    persistent,  // Z_T carried across layers, starts as the embedded anatomy tokens
    fresh,       // Z_T recomputed at every layer from the incoming anatomy stream
};

// The extra cross-attention step run after every layer but the last.
enum class Alignment {
    symmetric,       // (Z_I, Z_T) <- (attend(Z_I, Z_T), attend(Z_T, Z_I)) jointly; Z_S <- attend(Z_S, Z_S)
    stylized_only,   // Z_T <- attend(Z_T, Z_I)
    none,
};

struct EncoderConfig {
    std::size_t image_height = 32;
    std::size_t image_width = 32;
    std::size_t patch_size = 4;
    std::size_t channels = 3;
    std::size_t embed_dim = 96;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    StreamCarry carry = StreamCarry::persistent;
    Alignment alignment = Alignment::symmetric;

    std::size_t grid_h() const { return image_height / patch_size; }
    std::size_t grid_w() const { return image_width / patch_size; }
    std::size_t num_tokens() const { return grid_h() * grid_w(); }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("encoder config: " + m); };
        if (!image_height || !image_width || !patch_size || !channels || !embed_dim || !num_layers || !num_heads) {
            fail("all extents must be positive");
        }
        if (image_height % patch_size || image_width % patch_size) {
            fail("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                 " is not divisible by patch size " + std::to_string(patch_size));
        }
        if (embed_dim % num_heads) {
            fail("embed_dim " + std::to_string(embed_dim) + " not divisible by " + std::to_string(num_heads) + " heads");
        }
        if (embed_dim % (channels * patch_size)) {
            fail("embed_dim " + std::to_string(embed_dim) + " not divisible by channels*patch_size = " +
                 std::to_string(channels * patch_size));
        }
        if (embed_dim < 2) fail("embed_dim must be at least 2");
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline const char* to_string(StreamCarry c) { return c == StreamCarry::persistent ? "persistent" : "fresh"; }
inline const char* to_string(Alignment a) {
    switch (a) {
        case Alignment::symmetric: return "symmetric";
        case Alignment::stylized_only: return "stylized_only";
        default: return "none";
    }
}

namespace detail {

template <class T>
Array<T> init_trunc_normal(Rng& rng, Shape shape, double std = 0.02) {
    std::vector<T> v(numel(shape));
    for (auto& e : v) e = static_cast<T>(rng.truncated_normal(std));
    return Array<T>::parameter(std::move(shape), std::move(v));
}

template <class T>
Array<T> init_const(Shape shape, T value) {
    const auto n = numel(shape);
    return Array<T>::parameter(std::move(shape), std::vector<T>(n, value));
}

}  // namespace detail

template <class T>
struct TokenStreams {
    Array<T> anatomy;   // Z_I
    Array<T> style;     // Z_S
    Array<T> stylized;  // Z_T
};

// A full pre-norm transformer layer (attention + MLP + both norms). Calling
// attend(q, q) is plain self-attention; attend(q, kv) is cross-attention.
template <class T>
class SharedAttentionBlock {
   public:
    SharedAttentionBlock(std::size_t dim, std::size_t heads, Rng& rng) : dim_(dim), heads_(heads) {
        using detail::init_const;
        using detail::init_trunc_normal;
        norm1_gain = init_const<T>({dim}, T(1));
        norm1_bias = init_const<T>({dim}, T(0));
        q_weight = init_trunc_normal<T>(rng, {dim, dim});
        q_bias = init_const<T>({dim}, T(0));
        k_weight = init_trunc_normal<T>(rng, {dim, dim});
        k_bias = init_const<T>({dim}, T(0));
        v_weight = init_trunc_normal<T>(rng, {dim, dim});
        v_bias = init_const<T>({dim}, T(0));
        out_weight = init_trunc_normal<T>(rng, {dim, dim});
        out_bias = init_const<T>({dim}, T(0));
        norm2_gain = init_const<T>({dim}, T(1));
        norm2_bias = init_const<T>({dim}, T(0));
        fc1_weight = init_trunc_normal<T>(rng, {dim, 4 * dim});
        fc1_bias = init_const<T>({4 * dim}, T(0));
        fc2_weight = init_trunc_normal<T>(rng, {4 * dim, dim});
        fc2_bias = init_const<T>({dim}, T(0));
    }

    std::size_t dim() const { return dim_; }
    std::size_t heads() const { return heads_; }

    Array<T> attend(const Array<T>& q_tokens, const Array<T>& kv_tokens) const {
        if (q_tokens.rank() != 2 || kv_tokens.rank() != 2 || q_tokens.dim(1) != dim_ || kv_tokens.dim(1) != dim_) {
            throw DimensionError("attend: token sequences " + to_string(q_tokens.shape()) + " and " +
                                 to_string(kv_tokens.shape()) + " must be [n," + std::to_string(dim_) + "]");
        }
        const Array<T> qn = layer_norm(q_tokens, norm1_gain, norm1_bias);
        const Array<T> kvn = layer_norm(kv_tokens, norm1_gain, norm1_bias);
        const Array<T> x = add(q_tokens, attention(qn, kvn));
        return add(x, feed_forward(x));
    }

    // Multi-head scaled dot-product attention on already-normalized inputs,
    // including the output projection.
    Array<T> attention(const Array<T>& q_in, const Array<T>& kv_in) const {
        const std::size_t nq = q_in.dim(0), nk = kv_in.dim(0), hd = dim_ / heads_;
        auto split_heads = [&](const Array<T>& z, std::size_t n) {
            return permute(reshape(z, {n, heads_, hd}), {1, 0, 2});  // [h, n, hd]
        };
        const Array<T> q = split_heads(linear(q_in, q_weight, q_bias), nq);
        const Array<T> k = split_heads(linear(kv_in, k_weight, k_bias), nk);
        const Array<T> v = split_heads(linear(kv_in, v_weight, v_bias), nk);
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
        const Array<T> weights = softmax_lastaxis(scale(matmul(q, transpose(k)), inv_sqrt));  // [h, nq, nk]
        const Array<T> mixed = reshape(permute(matmul(weights, v), {1, 0, 2}), {nq, dim_});
        return linear(mixed, out_weight, out_bias);
    }

    Array<T> feed_forward(const Array<T>& x) const {
        const Array<T> h = gelu(linear(layer_norm(x, norm2_gain, norm2_bias), fc1_weight, fc1_bias));
        return linear(h, fc2_weight, fc2_bias);
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + "norm1.gain", norm1_gain);
        f(prefix + "norm1.bias", norm1_bias);
        f(prefix + "attn.q.weight", q_weight);
        f(prefix + "attn.q.bias", q_bias);
        f(prefix + "attn.k.weight", k_weight);
        f(prefix + "attn.k.bias", k_bias);
        f(prefix + "attn.v.weight", v_weight);
        f(prefix + "attn.v.bias", v_bias);
        f(prefix + "attn.out.weight", out_weight);
        f(prefix + "attn.out.bias", out_bias);
        f(prefix + "norm2.gain", norm2_gain);
        f(prefix + "norm2.bias", norm2_bias);
        f(prefix + "mlp.fc1.weight", fc1_weight);
        f(prefix + "mlp.fc1.bias", fc1_bias);
        f(prefix + "mlp.fc2.weight", fc2_weight);
        f(prefix + "mlp.fc2.bias", fc2_bias);
    }

    Array<T> norm1_gain, norm1_bias;
    Array<T> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias, out_weight, out_bias;
    Array<T> norm2_gain, norm2_bias;
    Array<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;

   private:
    std::size_t dim_;
    std::size_t heads_;
};

// Image [c, H, W] -> patches [n, c*p*p]; each row is one patch laid out (c, py, px),
// patches in row-major grid order.
template <class T>
Array<T> patchify(const Array<T>& image, std::size_t patch) {
    if (image.rank() != 3 || image.dim(1) % patch || image.dim(2) % patch) {
        throw DimensionError("patchify: image " + to_string(image.shape()) + " with patch " + std::to_string(patch));
    }
    const std::size_t c = image.dim(0), gh = image.dim(1) / patch, gw = image.dim(2) / patch;
    const Array<T> grid = permute(reshape(image, {c, gh, patch, gw, patch}), {1, 3, 0, 2, 4});
    return reshape(grid, {gh * gw, c * patch * patch});
}

template <class T>
class Encoder {
   public:
    Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
        config_.validate();
        const std::size_t d = config_.embed_dim;
        patch_weight = detail::init_trunc_normal<T>(rng, {config_.patch_dim(), d});
        patch_bias = detail::init_const<T>({d}, T(0));
        position = detail::init_trunc_normal<T>(rng, {config_.num_tokens(), d});
        blocks.reserve(config_.num_layers);
        for (std::size_t l = 0; l < config_.num_layers; ++l) blocks.emplace_back(d, config_.num_heads, rng);
        final_gain = detail::init_const<T>({d}, T(1));
        final_bias = detail::init_const<T>({d}, T(0));
    }

    const EncoderConfig& config() const { return config_; }

    // Patch tokens plus the learned positional table; no class token.
    Array<T> embed(const Array<T>& image) const {
        const Shape want{config_.channels, config_.image_height, config_.image_width};
        if (image.shape() != want) {
            throw DimensionError("embed: image " + to_string(image.shape()) + " does not match configured " + to_string(want));
        }
        return add(linear(patchify(image, config_.patch_size), patch_weight, patch_bias), position);
    }

    TokenStreams<T> encode_pair(const Array<T>& anatomy_image, const Array<T>& style_image) const {
        return encode_tokens(embed(anatomy_image), embed(style_image));
    }

    TokenStreams<T> encode_tokens(Array<T> zi, Array<T> zs) const {
        Array<T> zt = zi;
        const std::size_t L = blocks.size();
        for (std::size_t l = 0; l < L; ++l) {
            const auto& block = blocks[l];
            // All three stages read the streams as they entered this layer.
            Array<T> next_i = block.attend(zi, zi);
            Array<T> next_s = block.attend(zs, zs);
            Array<T> next_t = config_.carry == StreamCarry::persistent ? block.attend(zt, zs) : block.attend(zi, zs);
            if (l + 1 < L) {
                if (config_.alignment == Alignment::symmetric) {
                    // The style stream takes a matching self-attention pass so
                    // all three streams stay at equal depth.
                    Array<T> aligned_i = block.attend(next_i, next_t);
                    next_t = block.attend(next_t, next_i);
                    next_i = aligned_i;
                    next_s = block.attend(next_s, next_s);
                } else if (config_.alignment == Alignment::stylized_only) {
                    next_t = block.attend(next_t, next_i);
                }
            }
            zi = std::move(next_i);
            zs = std::move(next_s);
            zt = std::move(next_t);
        }
        return {finish(zi), finish(zs), finish(zt)};
    }

    Array<T> finish(const Array<T>& z) const { return layer_norm(z, final_gain, final_bias); }

    template <class F>
    void visit(F&& f) {
        f("encoder.patch.weight", patch_weight);
        f("encoder.patch.bias", patch_bias);
        f("encoder.position", position);
        for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit("encoder.blocks." + std::to_string(l) + ".", f);
        f("encoder.norm.gain", final_gain);
        f("encoder.norm.bias", final_bias);
    }

    Array<T> patch_weight, patch_bias, position;
    std::vector<SharedAttentionBlock<T>> blocks;
    Array<T> final_gain, final_bias;

   private:
    EncoderConfig config_;
};

struct EncoderParameterCount {
    std::size_t embedding = 0;  // patch projection + positional table
    std::size_t blocks = 0;     // all shared attention blocks
    std::size_t final_norm = 0;
    std::size_t total() const { return embedding + blocks + final_norm; }
};

// Per block: q/k/v/out projections 4(d^2 + d), MLP d*4d + 4d + 4d*d + d,
// two norms 4d; i.e. 12 d^2 + 13 d.
inline EncoderParameterCount parameter_count(const EncoderConfig& c) {
    c.validate();
    const std::size_t d = c.embed_dim;
    EncoderParameterCount n;
    n.embedding = c.patch_dim() * d + d + c.num_tokens() * d;
    n.blocks = c.num_layers * (12 * d * d + 13 * d);
    n.final_norm = 2 * d;
    return n;
}

}  // namespace svit

#pragma once

#include <map>
#include <string>

#include "svit/head.hpp"

namespace svit {

struct ModelConfig {
    std::string preset = "desk";
    EncoderConfig encoder;
    SplitMode split = SplitMode::expand;
    HeadComponents components = HeadComponents::full;

    HeadConfig head() const {
        HeadConfig h = HeadConfig::from(encoder);
        h.split = split;
        h.components = components;
        return h;
    }

    void validate() const {
        encoder.validate();
        head().validate();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named size presets. tiny/small/base share the ViT-B/16 geometry (224px,
// 16px patches, 12 layers) and differ in width; desk is the smallest config
// that exercises every divisibility constraint.
inline ModelConfig model_preset(const std::string& name) {
    ModelConfig m;
    m.preset = name;
    EncoderConfig& e = m.encoder;
    if (name == "desk") {
        e.image_height = e.image_width = 32;
        e.patch_size = 4;
        e.embed_dim = 96;
        e.num_heads = 4;
        e.num_layers = 2;
    } else if (name == "tiny" || name == "small" || name == "base") {
        e.image_height = e.image_width = 224;
        e.patch_size = 16;
        e.num_layers = 12;
        e.embed_dim = name == "tiny" ? 192 : name == "small" ? 384 : 768;
        e.num_heads = name == "tiny" ? 3 : name == "small" ? 6 : 12;
    } else {
        throw ConfigError("unknown model preset '" + name + "' (expected tiny, small, base or desk)");
    }
    e.channels = 3;
    return m;
}

template <class T>
struct StylizeOutputs {
    TokenStreams<T> tokens;
    Array<T> anatomy_recon;  // reconstruction of I
    Array<T> style_recon;    // reconstruction of S
    Array<T> stylized;       // T
};

template <class T>
class StylizingViT {
   public:
    StylizingViT(const ModelConfig& config, std::uint64_t seed)
        : StylizingViT(config, seeded(config, seed)) {}

    StylizingViT(const ModelConfig& config, Rng& rng)
        : config_(config), encoder_(config.encoder, rng), head_(checked_head(config), rng) {}

    const ModelConfig& config() const { return config_; }
    const Encoder<T>& encoder() const { return encoder_; }
    const ReconstructionHead<T>& head() const { return head_; }
    Encoder<T>& encoder() { return encoder_; }
    ReconstructionHead<T>& head() { return head_; }

    Array<T> reconstruct(const Array<T>& tokens) const { return head_.reconstruct(tokens, encoder_.patch_weight); }

    StylizeOutputs<T> forward(const Array<T>& anatomy, const Array<T>& style) const {
        StylizeOutputs<T> out;
        out.tokens = encoder_.encode_pair(anatomy, style);
        out.anatomy_recon = reconstruct(out.tokens.anatomy);
        out.style_recon = reconstruct(out.tokens.style);
        out.stylized = reconstruct(out.tokens.stylized);
        return out;
    }

    Array<T> stylize(const Array<T>& anatomy, const Array<T>& style) const {
        return reconstruct(encoder_.encode_pair(anatomy, style).stylized);
    }

    ParameterList<T> parameters() {
        ParameterList<T> out;
        auto collect = [&out](const std::string& name, Array<T>& a) { out.push_back({name, a}); };
        encoder_.visit(collect);
        head_.visit(collect);
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.array.size();
        return n;
    }

   private:
    static Rng seeded(const ModelConfig& c, std::uint64_t seed) {
        c.validate();
        return Rng(seed);
    }
    StylizingViT(const ModelConfig& config, Rng&& rng) : StylizingViT(config, rng) {}

    static HeadConfig checked_head(const ModelConfig& c) {
        c.validate();
        return c.head();
    }

    ModelConfig config_;
    Encoder<T> encoder_;
    ReconstructionHead<T> head_;
};

}  // namespace svit

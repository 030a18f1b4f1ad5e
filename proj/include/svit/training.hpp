#pragma once

// Self-supervised pairing, the optimization loop, and checkpoints.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "svit/container.hpp"
#include "svit/image.hpp"
#include "svit/log.hpp"
#include "svit/losses.hpp"
#include "svit/model.hpp"

namespace svit {

// ---------------------------------------------------------------- configuration

struct ExtractorConfig {
    VggWidths widths = kDeskVggWidths;
    std::uint64_t seed = 19;
    std::string weights_path;  // optional container of pretrained weights

    friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double base_lr = 1e-3;
    double min_lr = 0.0;
    bool lr_per_iteration = true;  // false: the schedule advances once per epoch
    std::uint64_t seed = 0;
    std::string preset = "desk";
    LossWeights weights;
    AdamWOptions adamw;
    double grad_clip = 0.0;  // max global gradient norm; 0 disables
    ExtractorConfig extractor;

    void validate() const {
        if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
        if (!(base_lr >= 0) || !(min_lr >= 0)) throw ConfigError("train config: learning rates must be non-negative");
        for (double w : {weights.identity, weights.consistency, weights.anatomy, weights.style}) {
            if (!(w >= 0)) throw ConfigError("train config: loss weights must be non-negative");
        }
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) {
    return (dataset_size + batch_size - 1) / batch_size;
}

// ---------------------------------------------------------------- json

inline nlohmann::json to_json(const ModelConfig& m) {
    const auto& e = m.encoder;
    return {{"preset", m.preset},
            {"image_height", e.image_height},
            {"image_width", e.image_width},
            {"patch_size", e.patch_size},
            {"channels", e.channels},
            {"embed_dim", e.embed_dim},
            {"num_layers", e.num_layers},
            {"num_heads", e.num_heads},
            {"carry", to_string(e.carry)},
            {"alignment", to_string(e.alignment)},
            {"split", to_string(m.split)},
            {"components", to_string(m.components)}};
}

inline StreamCarry parse_carry(const std::string& s) {
    if (s == "persistent") return StreamCarry::persistent;
    if (s == "fresh") return StreamCarry::fresh;
    throw ConfigError("unknown stream carry '" + s + "'");
}

inline Alignment parse_alignment(const std::string& s) {
    if (s == "symmetric") return Alignment::symmetric;
    if (s == "stylized_only") return Alignment::stylized_only;
    if (s == "none") return Alignment::none;
    throw ConfigError("unknown alignment '" + s + "'");
}

inline SplitMode parse_split(const std::string& s) {
    if (s == "expand") return SplitMode::expand;
    if (s == "halve") return SplitMode::halve;
    throw ConfigError("unknown split mode '" + s + "'");
}

inline HeadComponents parse_components(const std::string& s) {
    if (s == "encoder_only") return HeadComponents::encoder_only;
    if (s == "mlp") return HeadComponents::mlp;
    if (s == "mlp_dot") return HeadComponents::mlp_dot;
    if (s == "full") return HeadComponents::full;
    throw ConfigError("unknown head components '" + s + "'");
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig m;
    auto& e = m.encoder;
    m.preset = j.at("preset").get<std::string>();
    e.image_height = j.at("image_height").get<std::size_t>();
    e.image_width = j.at("image_width").get<std::size_t>();
    e.patch_size = j.at("patch_size").get<std::size_t>();
    e.channels = j.at("channels").get<std::size_t>();
    e.embed_dim = j.at("embed_dim").get<std::size_t>();
    e.num_layers = j.at("num_layers").get<std::size_t>();
    e.num_heads = j.at("num_heads").get<std::size_t>();
    e.carry = parse_carry(j.at("carry").get<std::string>());
    e.alignment = parse_alignment(j.at("alignment").get<std::string>());
    m.split = parse_split(j.at("split").get<std::string>());
    m.components = parse_components(j.at("components").get<std::string>());
    return m;
}

inline nlohmann::json to_json(const LossWeights& w) {
    return {{"identity", w.identity}, {"consistency", w.consistency}, {"anatomy", w.anatomy}, {"style", w.style}};
}

inline LossWeights loss_weights_from_json(const nlohmann::json& j) {
    return {j.at("identity").get<double>(), j.at("consistency").get<double>(), j.at("anatomy").get<double>(),
            j.at("style").get<double>()};
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"base_lr", c.base_lr},
            {"min_lr", c.min_lr},
            {"lr_per_iteration", c.lr_per_iteration},
            {"seed", c.seed},
            {"preset", c.preset},
            {"weights", to_json(c.weights)},
            {"adamw",
             {{"beta1", c.adamw.beta1}, {"beta2", c.adamw.beta2}, {"eps", c.adamw.eps}, {"weight_decay", c.adamw.weight_decay}}},
            {"grad_clip", c.grad_clip},
            {"extractor",
             {{"widths", c.extractor.widths}, {"seed", c.extractor.seed}, {"weights_path", c.extractor.weights_path}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.base_lr = j.at("base_lr").get<double>();
    c.min_lr = j.at("min_lr").get<double>();
    c.lr_per_iteration = j.at("lr_per_iteration").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.preset = j.at("preset").get<std::string>();
    c.weights = loss_weights_from_json(j.at("weights"));
    const auto& a = j.at("adamw");
    c.adamw = {a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>(),
               a.at("weight_decay").get<double>()};
    c.grad_clip = j.at("grad_clip").get<double>();
    const auto& x = j.at("extractor");
    c.extractor.widths = x.at("widths").get<VggWidths>();
    c.extractor.seed = x.at("seed").get<std::uint64_t>();
    c.extractor.weights_path = x.at("weights_path").get<std::string>();
    return c;
}

// ---------------------------------------------------------------- extractor

// Replaces conv weights by name ("conv1_1.weight", "conv1_1.bias", ...).
// Every conv stage must be present with a matching shape.
template <class T>
void load_extractor_weights(FeatureExtractor<T>& fx, const Container& weights) {
    for (auto& stage : fx.stages()) {
        auto* conv = std::get_if<ConvStage<T>>(&stage);
        if (!conv) continue;
        for (auto [suffix, target] : {std::pair{".weight", &conv->weight}, std::pair{".bias", &conv->bias}}) {
            const auto* src = weights.find(conv->name + suffix);
            if (!src) throw ConfigError("extractor weights: missing '" + conv->name + suffix + "'");
            if (src->shape != target->shape()) {
                throw ConfigError("extractor weights: '" + conv->name + suffix + "' has shape " + to_string(src->shape) +
                                  ", expected " + to_string(target->shape()));
            }
            *target = Array<T>::parameter(src->shape, std::vector<T>(src->values.begin(), src->values.end()), false);
        }
    }
}

template <class T>
Container extractor_weights(const FeatureExtractor<T>& fx) {
    Container c;
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : fx.stages()) stages.push_back(std::visit([](const auto& st) { return st.name; }, s));
    c.meta["stages"] = stages;
    c.meta["taps"] = fx.tap_names();
    for (const auto& p : fx.parameters()) c.arrays.push_back(to_named(p.name, p.array));
    return c;
}

template <class T>
FeatureExtractor<T> make_extractor(const ExtractorConfig& cfg) {
    auto fx = make_vgg19_extractor<T>(cfg.widths, cfg.seed);
    if (!cfg.weights_path.empty()) load_extractor_weights(fx, read_container(cfg.weights_path));
    return fx;
}

// ---------------------------------------------------------------- pairing

inline constexpr int kDerangementTries = 100;

// Style index per anatomy slot with no fixed points for b >= 2: uniform
// rejection sampling, falling back to a cyclic shift after kDerangementTries.
inline std::vector<std::size_t> make_style_permutation(std::size_t b, Rng& rng) {
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (b == 1) {
        log_warning("style pairing: batch of one, anatomy and style image are identical");
        return perm;
    }
    for (int attempt = 0; attempt < kDerangementTries; ++attempt) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        bool fixed = false;
        for (std::size_t i = 0; i < b && !fixed; ++i) fixed = perm[i] == i;
        if (!fixed) return perm;
    }
    log_warning("style pairing: rejection sampling exhausted, using cyclic shift");
    for (std::size_t i = 0; i < b; ++i) perm[i] = (i + 1) % b;
    return perm;
}

struct StylePairs {
    std::vector<Image> anatomy;
    std::vector<Image> style;
    std::vector<std::size_t> permutation;
};

inline StylePairs make_style_pairs(const std::vector<Image>& batch, Rng& rng) {
    if (batch.empty()) throw ContractError("make_style_pairs: empty batch");
    StylePairs p;
    p.anatomy = batch;
    p.permutation = make_style_permutation(batch.size(), rng);
    for (auto i : p.permutation) p.style.push_back(batch[i]);
    return p;
}

// ---------------------------------------------------------------- trainer

struct HistoryRow {
    std::size_t step = 0;
    double lr = 0;
    LossReport loss;
};

inline void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "step,lr,l_identity,l_consistency,l_anatomy,l_style,l_total\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.lr, r.loss.identity,
                      r.loss.consistency, r.loss.anatomy, r.loss.style, r.loss.total);
        f << buf;
    }
}

// Reads a table written by write_history; a missing file yields no rows.
inline std::vector<HistoryRow> read_history(const std::filesystem::path& path) {
    std::vector<HistoryRow> rows;
    std::ifstream f(path);
    if (!f) return rows;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        HistoryRow r;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.lr, &r.loss.identity, &r.loss.consistency,
                        &r.loss.anatomy, &r.loss.style, &r.loss.total) != 7) {
            throw IoError(path.string() + ": malformed history row '" + line + "'");
        }
        rows.push_back(r);
    }
    return rows;
}

// Owns the optimizer and pairing RNG for one model. The model and extractor
// are borrowed and must outlive the trainer.
class Trainer {
   public:
    Trainer(StylizingViT<float>& model, const FeatureExtractor<float>& extractor, TrainConfig config,
            std::size_t steps_per_epoch)
        : model_(model),
          extractor_(extractor),
          config_(std::move(config)),
          steps_per_epoch_(std::max<std::size_t>(1, steps_per_epoch)),
          params_(model.parameters()),
          optimizer_(make_optimizer_state(params_, config_.adamw)),
          pair_rng_(derive_seed(config_.seed, 1)) {
        config_.validate();
    }

    const TrainConfig& config() const { return config_; }
    std::size_t step() const { return step_; }
    Rng& pair_rng() { return pair_rng_; }
    const Rng& pair_rng() const { return pair_rng_; }
    OptimizerState<float>& optimizer() { return optimizer_; }
    const OptimizerState<float>& optimizer() const { return optimizer_; }
    ParameterList<float>& parameters() { return params_; }
    void set_step(std::size_t s) { step_ = s; }

    LrSchedule schedule() const {
        const std::size_t total = config_.lr_per_iteration ? config_.epochs * steps_per_epoch_ : config_.epochs;
        return {config_.base_lr, std::max<std::size_t>(1, total), config_.min_lr};
    }

    double current_lr() const {
        const auto s = schedule();
        const std::size_t t = config_.lr_per_iteration ? step_ : step_ / steps_per_epoch_;
        return cosine_lr(s, std::min(t, s.total_steps));
    }

    // Pairs the batch with a shuffled copy of itself, then trains on it.
    LossReport train_step(const std::vector<Image>& batch) {
        auto pairs = make_style_pairs(batch, pair_rng_);
        return train_step(pairs.anatomy, pairs.style);
    }

    LossReport train_step(const std::vector<Image>& anatomy, const std::vector<Image>& style) {
        if (anatomy.size() != style.size() || anatomy.empty()) {
            throw ContractError("train_step: anatomy and style batches must be non-empty and equally sized");
        }
        const double lr = current_lr();
        const auto b = static_cast<float>(anatomy.size());
        LossReport mean;
        for (std::size_t i = 0; i < anatomy.size(); ++i) {
            const auto I = to_array<float>(anatomy[i]);
            const auto S = to_array<float>(style[i]);
            const auto out = model_.forward(I, S);
            auto terms = total_loss(I, out.anatomy_recon, S, out.style_recon, out.stylized, extractor_, config_.weights);
            check_finite(terms.report);
            backward(terms.total, 1.f / b);
            mean.identity += terms.report.identity / b;
            mean.consistency += terms.report.consistency / b;
            mean.anatomy += terms.report.anatomy / b;
            mean.style += terms.report.style / b;
        }
        mean.total = weighted_total(mean, config_.weights);
        clip_grad_norm(params_, config_.grad_clip);
        adamw_step(params_, optimizer_, lr);
        zero_grad(params_);
        last_lr_ = lr;
        ++step_;
        return mean;
    }

    double last_lr() const { return last_lr_; }

   private:
    void check_finite(const LossReport& r) const {
        const std::pair<const char*, double> terms[] = {
            {"identity", r.identity}, {"consistency", r.consistency}, {"anatomy", r.anatomy}, {"style", r.style},
            {"total", r.total}};
        for (const auto& [name, v] : terms) {
            if (!std::isfinite(v)) {
                throw NumericError("non-finite " + std::string(name) + " loss (" + std::to_string(v) + ") at step " +
                                   std::to_string(step_));
            }
        }
    }

    StylizingViT<float>& model_;
    const FeatureExtractor<float>& extractor_;
    TrainConfig config_;
    std::size_t steps_per_epoch_;
    ParameterList<float> params_;
    OptimizerState<float> optimizer_;
    Rng pair_rng_;
    std::size_t step_ = 0;
    double last_lr_ = 0;
};

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    nlohmann::json run = nlohmann::json::object();
    std::size_t step = 0;
    std::string rng_state;
    std::vector<NamedArray> parameters;
    std::vector<NamedArray> first_moment;
    std::vector<NamedArray> second_moment;
    std::size_t optimizer_step = 0;
};

inline Container to_container(const Checkpoint& ck) {
    Container c;
    c.meta["kind"] = "stylizing_vit_checkpoint";
    c.meta["model"] = to_json(ck.model);
    c.meta["train"] = to_json(ck.train);
    c.meta["run"] = ck.run;
    c.meta["step"] = ck.step;
    c.meta["rng_state"] = ck.rng_state;
    c.meta["optimizer_step"] = ck.optimizer_step;
    for (const auto& a : ck.parameters) c.arrays.push_back(a);
    for (const auto& a : ck.first_moment) c.arrays.push_back({"optim.m." + a.name, a.shape, a.values});
    for (const auto& a : ck.second_moment) c.arrays.push_back({"optim.v." + a.name, a.shape, a.values});
    return c;
}

inline Checkpoint checkpoint_from_container(const Container& c, const std::string& origin) {
    if (c.meta.value("kind", "") != "stylizing_vit_checkpoint") throw IoError(origin + ": not a model checkpoint");
    Checkpoint ck;
    try {
        ck.model = model_config_from_json(c.meta.at("model"));
        ck.train = train_config_from_json(c.meta.at("train"));
        ck.run = c.meta.at("run");
        ck.step = c.meta.at("step").get<std::size_t>();
        ck.rng_state = c.meta.at("rng_state").get<std::string>();
        ck.optimizer_step = c.meta.at("optimizer_step").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(origin + ": malformed checkpoint manifest: " + e.what());
    }
    for (const auto& a : c.arrays) {
        if (a.name.rfind("optim.m.", 0) == 0) {
            ck.first_moment.push_back({a.name.substr(8), a.shape, a.values});
        } else if (a.name.rfind("optim.v.", 0) == 0) {
            ck.second_moment.push_back({a.name.substr(8), a.shape, a.values});
        } else {
            ck.parameters.push_back(a);
        }
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_container(path, to_container(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_container(read_container(path), path.string());
}

inline Checkpoint capture_checkpoint(StylizingViT<float>& model, const Trainer* trainer, const TrainConfig& train,
                                     nlohmann::json run = nlohmann::json::object()) {
    Checkpoint ck;
    ck.model = model.config();
    ck.train = train;
    ck.run = std::move(run);
    const auto params = model.parameters();
    for (const auto& p : params) ck.parameters.push_back(to_named(p.name, p.array));
    if (trainer) {
        ck.step = trainer->step();
        ck.rng_state = trainer->pair_rng().state();
        ck.optimizer_step = trainer->optimizer().step;
        for (std::size_t i = 0; i < params.size(); ++i) {
            ck.first_moment.push_back({params[i].name, params[i].array.shape(), trainer->optimizer().first_moment[i]});
            ck.second_moment.push_back({params[i].name, params[i].array.shape(), trainer->optimizer().second_moment[i]});
        }
    } else {
        ck.rng_state = Rng(derive_seed(train.seed, 1)).state();
    }
    return ck;
}

// Copies checkpoint parameters into a model built from the same config.
template <class T>
void apply_parameters(StylizingViT<T>& model, const Checkpoint& ck) {
    if (!(ck.model == model.config())) {
        throw ConfigError("config conflict: checkpoint model " + to_json(ck.model).dump() + " vs " +
                          to_json(model.config()).dump());
    }
    auto params = model.parameters();
    if (params.size() != ck.parameters.size()) throw ConfigError("config conflict: parameter count differs");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& src = ck.parameters[i];
        if (src.name != params[i].name || src.shape != params[i].array.shape()) {
            throw ConfigError("config conflict: checkpoint parameter '" + src.name + "' " + to_string(src.shape) +
                              " vs model '" + params[i].name + "' " + to_string(params[i].array.shape()));
        }
        auto dst = params[i].array.mutable_data();
        std::copy(src.values.begin(), src.values.end(), dst.begin());
    }
}

// Builds a model from a checkpoint. A non-empty expected_preset must match the
// checkpoint's preset.
inline StylizingViT<float> load_model(const Checkpoint& ck, const std::string& expected_preset = "") {
    if (!expected_preset.empty() && expected_preset != ck.model.preset) {
        throw ConfigError("config conflict: checkpoint was trained with preset '" + ck.model.preset + "', requested '" +
                          expected_preset + "'");
    }
    StylizingViT<float> model(ck.model, 0);
    apply_parameters(model, ck);
    return model;
}

inline void restore_trainer(Trainer& trainer, const Checkpoint& ck) {
    auto& opt = trainer.optimizer();
    if (ck.first_moment.size() != opt.first_moment.size() || ck.second_moment.size() != opt.second_moment.size()) {
        throw ConfigError("config conflict: checkpoint optimizer state does not match the model");
    }
    for (std::size_t i = 0; i < ck.first_moment.size(); ++i) {
        if (ck.first_moment[i].values.size() != opt.first_moment[i].size()) {
            throw ConfigError("config conflict: moment shape mismatch for " + ck.first_moment[i].name);
        }
        opt.first_moment[i] = ck.first_moment[i].values;
        opt.second_moment[i] = ck.second_moment[i].values;
    }
    opt.step = ck.optimizer_step;
    trainer.set_step(ck.step);
    trainer.pair_rng().set_state(ck.rng_state);
}

// ---------------------------------------------------------------- fit

struct FitOptions {
    std::filesystem::path checkpoint_dir;      // empty: no checkpoints written
    const Checkpoint* resume = nullptr;        // continue a run from an epoch boundary
    std::size_t stop_after_epochs = 0;         // 0: run to config.epochs
    nlohmann::json run = nlohmann::json::object();
    ModelConfig model;                         // preset and architecture switches
    bool use_model_override = false;           // true: `model` is used instead of preset(config.preset)
    std::function<void(const HistoryRow&)> on_step;
};

struct FitResult {
    StylizingViT<float> model;
    std::vector<HistoryRow> history;
    Checkpoint final_checkpoint;
};

// Deterministic epoch order over the dataset for a given run seed.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 1000 + epoch));
    rng.shuffle(order);
    return order;
}

inline FitResult fit(const TrainConfig& config, const std::vector<Image>& dataset, const FitOptions& options = {}) {
    config.validate();
    const ModelConfig model_cfg = options.use_model_override ? options.model : model_preset(config.preset);
    StylizingViT<float> model(model_cfg, derive_seed(config.seed, 0));
    const auto extractor = make_extractor<float>(config.extractor);
    const std::size_t spe = steps_per_epoch(dataset.size(), config.batch_size);
    Trainer trainer(model, extractor, config, spe);

    std::size_t start_epoch = 0;
    if (options.resume) {
        apply_parameters(model, *options.resume);
        restore_trainer(trainer, *options.resume);
        if (spe == 0 || options.resume->step % spe) {
            throw ContractError("resume: checkpoint step " + std::to_string(options.resume->step) +
                                " is not at an epoch boundary");
        }
        start_epoch = options.resume->step / spe;
    }

    const std::size_t end_epoch =
        options.stop_after_epochs ? std::min(config.epochs, options.stop_after_epochs) : config.epochs;
    std::vector<HistoryRow> history;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = start_epoch; epoch < end_epoch && !dataset.empty(); ++epoch) {
        const auto order = epoch_order(dataset.size(), config.seed, epoch);
        double epoch_loss = 0;
        for (std::size_t s = 0; s < spe; ++s) {
            std::vector<Image> batch;
            for (std::size_t k = s * config.batch_size; k < std::min(dataset.size(), (s + 1) * config.batch_size); ++k) {
                batch.push_back(dataset[order[k]]);
            }
            HistoryRow row;
            row.step = trainer.step();
            row.loss = trainer.train_step(batch);
            row.lr = trainer.last_lr();
            epoch_loss += row.loss.total / static_cast<double>(spe);
            history.push_back(row);
            if (options.on_step) options.on_step(row);
        }
        if (!options.checkpoint_dir.empty()) {
            const auto ck = capture_checkpoint(model, &trainer, config, options.run);
            save_checkpoint(options.checkpoint_dir / "last.ckpt", ck);
            if (epoch_loss < best) {
                best = epoch_loss;
                save_checkpoint(options.checkpoint_dir / "best.ckpt", ck);
            }
        }
    }
    auto ck = capture_checkpoint(model, &trainer, config, options.run);
    return {std::move(model), std::move(history), std::move(ck)};
}

}  // namespace svit

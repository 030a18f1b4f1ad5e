#pragma once

// Command implementations behind the `svit` tool: data ingestion, style
// banks, train/stylize/augment/tta/eval/ablate/gen-data. Each command reads a
// resolved RunConfig and writes deterministic files for a fixed seed.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "svit/metrics.hpp"
#include "svit/synthetic.hpp"
#include "svit/training.hpp"

namespace svit {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitNumeric = 3 };

struct RunConfig {
    std::string command;
    std::string preset = "desk";
    std::uint64_t seed = 0;

    std::string data;        // image folder (class subfolders allowed)
    std::string styles;      // style image folder
    std::vector<std::string> anatomy_inputs;  // stylize: files or folders
    std::vector<std::string> style_inputs;
    std::string out = "out";
    std::string checkpoint;
    std::string resume;

    // training
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double min_lr = 0.0;
    bool lr_per_iteration = true;
    double grad_clip = 0.0;
    LossWeights weights;
    std::string extractor_weights;

    // synthetic data, used when `data` is empty
    SyntheticDatasetSpec synthetic;

    // ingestion and stylization
    std::string fit = "crop";
    bool pairwise = false;

    // augmentation
    double probability = 0.33;
    double ratio = -1.0;  // < 0: per-sample Bernoulli with `probability`

    // evaluation
    std::string mode = "identical";  // identical | distinct | appendix-c
    std::size_t max_pairs = 50;

    // ablation
    std::vector<std::string> loss_sets;  // e.g. "identity", "identity,consistency,anatomy,style"
    bool component_ladder = false;
};

inline nlohmann::json to_json(const SyntheticDatasetSpec& s) {
    return {{"image_size", s.image_size},         {"train_count", s.train_count},
            {"val_count", s.val_count},           {"test_count", s.test_count},
            {"train_families", s.train_families}, {"val_families", s.val_families},
            {"test_families", s.test_families},   {"seed", s.seed}};
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"command", c.command},
            {"preset", c.preset},
            {"seed", c.seed},
            {"data", c.data},
            {"styles", c.styles},
            {"anatomy_inputs", c.anatomy_inputs},
            {"style_inputs", c.style_inputs},
            {"out", c.out},
            {"checkpoint", c.checkpoint},
            {"resume", c.resume},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"min_lr", c.min_lr},
            {"lr_per_iteration", c.lr_per_iteration},
            {"grad_clip", c.grad_clip},
            {"weights", to_json(c.weights)},
            {"extractor_weights", c.extractor_weights},
            {"synthetic", to_json(c.synthetic)},
            {"fit", c.fit},
            {"pairwise", c.pairwise},
            {"probability", c.probability},
            {"ratio", c.ratio},
            {"mode", c.mode},
            {"max_pairs", c.max_pairs},
            {"loss_sets", c.loss_sets},
            {"component_ladder", c.component_ladder}};
}

inline TrainConfig train_config(const RunConfig& c) {
    TrainConfig t;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.base_lr = c.lr;
    t.min_lr = c.min_lr;
    t.lr_per_iteration = c.lr_per_iteration;
    t.seed = c.seed;
    t.preset = c.preset;
    t.weights = c.weights;
    t.grad_clip = c.grad_clip;
    t.extractor.weights_path = c.extractor_weights;
    return t;
}

inline FitPolicy parse_fit(const std::string& s) {
    if (s == "crop") return FitPolicy::crop;
    if (s == "pad") return FitPolicy::pad;
    throw ConfigError("unknown fit policy '" + s + "' (expected crop or pad)");
}

// ---------------------------------------------------------------- ingestion

struct ImageItem {
    fs::path source;    // absolute or as given
    fs::path relative;  // path below the folder root
    std::string label;  // first directory component below the root, or ""
};

// PNG files below `root`, sorted by relative path.
inline std::vector<ImageItem> list_images(const fs::path& root) {
    std::error_code ec;
    if (!fs::exists(root, ec)) throw IoError("no such file or directory: " + root.string());
    std::vector<ImageItem> items;
    if (fs::is_regular_file(root)) {
        items.push_back({root, root.filename(), ""});
        return items;
    }
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext != ".png") continue;
        ImageItem it;
        it.source = e.path();
        it.relative = fs::relative(e.path(), root);
        it.label = std::distance(it.relative.begin(), it.relative.end()) > 1 ? it.relative.begin()->string() : "";
        items.push_back(std::move(it));
    }
    std::sort(items.begin(), items.end(), [](const ImageItem& a, const ImageItem& b) { return a.relative < b.relative; });
    return items;
}

inline Image load_for_model(const fs::path& path, const EncoderConfig& e, FitPolicy policy) {
    return fit_to(read_png(path), e.image_height, e.image_width, policy);
}

inline std::vector<Image> load_images(const std::vector<ImageItem>& items, const EncoderConfig& e, FitPolicy policy) {
    std::vector<Image> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(load_for_model(it.source, e, policy));
    return out;
}

// Training-split images indexed once; draws are uniform and pre-computed from
// a single seeded generator.
class StyleBank {
   public:
    StyleBank(const fs::path& root, std::uint64_t seed) : items_(list_images(root)), rng_(seed) {
        if (items_.empty()) throw IoError("style bank is empty: " + root.string());
    }

    const std::vector<ImageItem>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    std::vector<std::size_t> assign(std::size_t n) {
        std::vector<std::size_t> out(n);
        for (auto& i : out) i = rng_.index(items_.size());
        return out;
    }

   private:
    std::vector<ImageItem> items_;
    Rng rng_;
};

// ---------------------------------------------------------------- output helpers

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline void write_run_config(const RunConfig& c) { write_text(fs::path(c.out) / "run.json", to_json(c).dump(2) + "\n"); }

struct LoadedModel {
    Checkpoint checkpoint;
    StylizingViT<float> model;
};

inline LoadedModel load_checkpoint_model(const RunConfig& c) {
    if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    auto ck = load_checkpoint(c.checkpoint);
    auto model = load_model(ck, c.preset);
    return {std::move(ck), std::move(model)};
}

class LatencyLog {
   public:
    explicit LatencyLog(std::string what) : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
    ~LatencyLog() {
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
        log_info(what_ + ": " + fmt(ms) + " ms");
    }

   private:
    std::string what_;
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------- gen-data

inline int cmd_gen_data(const RunConfig& c) {
    write_synthetic_dataset(c.synthetic, c.out);
    write_text(fs::path(c.out) / "spec.json", to_json(c.synthetic).dump(2) + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------- train

inline std::vector<Image> training_images(const RunConfig& c) {
    if (c.data.empty()) return images_of(generate_split(c.synthetic, 0));
    const auto items = list_images(c.data);
    if (items.empty()) throw IoError("no PNG images under " + c.data);
    return load_images(items, model_preset(c.preset).encoder, parse_fit(c.fit));
}

inline int cmd_train(const RunConfig& c) {
    const TrainConfig tc = train_config(c);
    const auto data = training_images(c);
    const fs::path out(c.out);
    fs::create_directories(out);
    write_run_config(c);
    std::optional<Checkpoint> resume;
    if (!c.resume.empty()) resume = load_checkpoint(c.resume);
    FitOptions opts;
    opts.checkpoint_dir = out;
    opts.resume = resume ? &*resume : nullptr;
    opts.run = to_json(c);
    auto result = fit(tc, data, opts);
    std::vector<HistoryRow> history;
    if (resume) {
        // Keep the rows recorded before the resume point.
        for (const auto& row : read_history(out / "history.csv")) {
            if (row.step < resume->step) history.push_back(row);
        }
    }
    history.insert(history.end(), result.history.begin(), result.history.end());
    write_history(out / "history.csv", history);
    save_checkpoint(out / "model.ckpt", result.final_checkpoint);
    log_info("trained " + std::to_string(history.size()) + " steps, checkpoint " + (out / "model.ckpt").string());
    return kExitOk;
}

// ---------------------------------------------------------------- stylize

inline std::vector<ImageItem> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<ImageItem> out;
    for (const auto& in : inputs) {
        auto items = list_images(in);
        out.insert(out.end(), items.begin(), items.end());
    }
    return out;
}

inline std::string stem_of(const ImageItem& it) {
    auto p = it.relative;
    p.replace_extension();
    std::string s = p.generic_string();
    std::replace(s.begin(), s.end(), '/', '_');
    return s;
}

inline int cmd_stylize(const RunConfig& c) {
    auto loaded = load_checkpoint_model(c);
    const auto& enc = loaded.model.config().encoder;
    const FitPolicy policy = parse_fit(c.fit);
    const auto anatomy = expand_inputs(c.anatomy_inputs);
    const auto style = expand_inputs(c.style_inputs);
    if (anatomy.empty() || style.empty()) throw IoError("stylize: no anatomy or no style images found");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (c.pairwise) {
        for (std::size_t a = 0; a < anatomy.size(); ++a)
            for (std::size_t s = 0; s < style.size(); ++s) pairs.emplace_back(a, s);
    } else if (style.size() == 1 || style.size() == anatomy.size()) {
        for (std::size_t a = 0; a < anatomy.size(); ++a) pairs.emplace_back(a, style.size() == 1 ? 0 : a);
    } else {
        throw ConfigError("stylize: " + std::to_string(anatomy.size()) + " anatomy vs " + std::to_string(style.size()) +
                          " style images; pass one style, matching counts, or --pairwise");
    }
    const fs::path out(c.out);
    fs::create_directories(out);
    const auto stylize = model_stylizer(loaded.model);
    std::size_t failed = 0;
    LatencyLog timer("stylize " + std::to_string(pairs.size()) + " pairs");
    for (auto [a, s] : pairs) {
        try {
            const Image ia = load_for_model(anatomy[a].source, enc, policy);
            const Image is = load_for_model(style[s].source, enc, policy);
            write_png(out / (stem_of(anatomy[a]) + "__" + stem_of(style[s]) + ".png"), stylize(ia, is));
        } catch (const IoError& e) {
            log_warning(e.what());
            ++failed;
        }
    }
    return failed == pairs.size() ? kExitIo : kExitOk;
}

// ---------------------------------------------------------------- augment

struct ManifestRow {
    std::string output, source, label;
    bool stylized = false;
    std::string style;
};

inline void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
    std::string text = "output,source,label,stylized,style\n";
    for (const auto& r : rows) {
        text += csv_field(r.output) + ',' + csv_field(r.source) + ',' + csv_field(r.label) + ',' +
                (r.stylized ? "1" : "0") + ',' + csv_field(r.style) + '\n';
    }
    write_text(path, text);
}

// Which items are stylized: independent Bernoulli(p) per item, or, in ratio
// mode, exactly round(r * b) items of every consecutive batch of b.
inline std::vector<bool> augmentation_mask(std::size_t n, double p, double ratio, std::size_t batch, Rng& rng) {
    std::vector<bool> mask(n, false);
    if (ratio < 0) {
        if (!(p >= 0 && p <= 1)) throw ConfigError("augment: probability must lie in [0, 1]");
        for (std::size_t i = 0; i < n; ++i) mask[i] = rng.bernoulli(p);
        return mask;
    }
    if (ratio > 1) throw ConfigError("augment: ratio must lie in [0, 1]");
    if (batch == 0) throw ConfigError("augment: batch size must be positive");
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t b = std::min(batch, n - start);
        std::vector<std::size_t> idx(b);
        std::iota(idx.begin(), idx.end(), start);
        rng.shuffle(idx);
        const auto k = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(b)));
        for (std::size_t j = 0; j < k; ++j) mask[idx[j]] = true;
    }
    return mask;
}

inline fs::path stylized_name(const fs::path& relative) {
    fs::path p = relative;
    p.replace_filename(relative.stem().string() + "_stylized.png");
    return p;
}

inline int cmd_augment(const RunConfig& c) {
    if (c.data.empty()) throw ConfigError("augment: --data is required");
    const auto items = list_images(c.data);
    StyleBank bank(c.styles.empty() ? c.data : c.styles, derive_seed(c.seed, 2));
    Rng rng(derive_seed(c.seed, 1));
    const auto mask = augmentation_mask(items.size(), c.probability, c.ratio, c.batch_size, rng);
    const std::size_t wanted = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    const auto assignment = bank.assign(wanted);

    std::optional<LoadedModel> loaded;
    if (wanted) loaded.emplace(load_checkpoint_model(c));
    const FitPolicy policy = parse_fit(c.fit);
    const fs::path out(c.out);
    fs::create_directories(out);
    std::vector<ManifestRow> rows;
    std::size_t next_style = 0;
    LatencyLog timer("augment " + std::to_string(items.size()) + " images");
    for (std::size_t i = 0; i < items.size(); ++i) {
        ManifestRow row;
        row.source = items[i].relative.generic_string();
        row.label = items[i].label;
        if (mask[i]) {
            const auto& style = bank.items()[assignment[next_style++]];
            const auto& enc = loaded->model.config().encoder;
            const Image t = model_stylizer(loaded->model)(load_for_model(items[i].source, enc, policy),
                                                          load_for_model(style.source, enc, policy));
            const auto rel = stylized_name(items[i].relative);
            write_png(out / rel, t);
            row.output = rel.generic_string();
            row.stylized = true;
            row.style = style.relative.generic_string();
        } else {
            const auto dst = out / items[i].relative;
            fs::create_directories(dst.parent_path());
            fs::copy_file(items[i].source, dst, fs::copy_options::overwrite_existing);
            row.output = row.source;
        }
        rows.push_back(std::move(row));
    }
    write_manifest(out / "manifest.csv", rows);
    return kExitOk;
}

// ---------------------------------------------------------------- tta

inline int cmd_tta(const RunConfig& c) {
    if (c.data.empty() || c.styles.empty()) throw ConfigError("tta: --data (test images) and --styles are required");
    const auto items = list_images(c.data);
    if (items.empty()) throw IoError("tta: no test images under " + c.data);
    StyleBank bank(c.styles, derive_seed(c.seed, 2));
    const auto assignment = bank.assign(items.size());
    auto loaded = load_checkpoint_model(c);
    const auto& enc = loaded.model.config().encoder;
    const FitPolicy policy = parse_fit(c.fit);
    const auto stylize = model_stylizer(loaded.model);
    const fs::path out(c.out);
    std::vector<ManifestRow> rows;
    LatencyLog timer("tta " + std::to_string(items.size()) + " images");
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& style = bank.items()[assignment[i]];
        write_png(out / items[i].relative,
                  stylize(load_for_model(items[i].source, enc, policy), load_for_model(style.source, enc, policy)));
        rows.push_back({items[i].relative.generic_string(), items[i].relative.generic_string(), items[i].label, true,
                        style.relative.generic_string()});
    }
    write_manifest(out / "manifest.csv", rows);
    return kExitOk;
}

// ---------------------------------------------------------------- eval

inline std::string metric_table(const std::vector<MetricReport>& reports) {
    std::string text = "label,pairs,psnr,ssim,proxy_fid\n";
    for (const auto& r : reports) {
        text += csv_field(r.label) + ',' + std::to_string(r.pairs) + ',' + (r.has_reconstruction ? fmt(r.psnr) : "") +
                ',' + (r.has_reconstruction ? fmt(r.ssim) : "") + ',' + (r.has_proxy_fid ? fmt(r.proxy_fid) : "") + '\n';
    }
    return text;
}

inline nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json j{{"label", r.label}, {"pairs", r.pairs}};
    if (r.has_reconstruction) {
        j["psnr"] = r.psnr;
        j["ssim"] = r.ssim;
    }
    if (r.has_proxy_fid) {
        j["proxy_fid"] = r.proxy_fid;
        j["proxy_fid_note"] = "Frechet distance over this tool's own extractor features; not comparable to Inception FID";
    }
    return j;
}

inline std::vector<Image> first_n(std::vector<Image> v, std::size_t n) {
    if (n && v.size() > n) v.resize(n);
    return v;
}

inline int cmd_eval(const RunConfig& c) {
    if (c.data.empty()) throw ConfigError("eval: --data is required");
    auto loaded = load_checkpoint_model(c);
    const auto& enc = loaded.model.config().encoder;
    const FitPolicy policy = parse_fit(c.fit);
    const auto stylize = model_stylizer(loaded.model);
    const auto items = list_images(c.data);
    if (items.empty()) throw IoError("eval: no images under " + c.data);
    const auto anatomy = first_n(load_images(items, enc, policy), c.max_pairs);
    const fs::path out(c.out);
    fs::create_directories(out);
    write_run_config(c);

    auto style_images = [&]() {
        if (c.styles.empty()) {
            // Derangement of the anatomy set itself.
            Rng rng(derive_seed(c.seed, 3));
            const auto perm = make_style_permutation(anatomy.size(), rng);
            std::vector<Image> s;
            for (auto i : perm) s.push_back(anatomy[i]);
            return s;
        }
        StyleBank bank(c.styles, derive_seed(c.seed, 2));
        std::vector<Image> s;
        for (auto i : bank.assign(anatomy.size())) s.push_back(load_for_model(bank.items()[i].source, enc, policy));
        return s;
    };

    nlohmann::json report{{"run", to_json(c)}, {"checkpoint_step", loaded.checkpoint.step}};
    if (c.mode == "identical") {
        const auto r = reconstruction_report(stylize, anatomy);
        write_text(out / "metrics.csv", metric_table({r}));
        report["metrics"] = to_json(r);
    } else if (c.mode == "distinct") {
        const auto fx = make_extractor<float>(loaded.checkpoint.train.extractor);
        const auto r = transfer_report(stylize, fx, anatomy, style_images());
        write_text(out / "metrics.csv", metric_table({r}));
        report["metrics"] = to_json(r);
    } else if (c.mode == "appendix-c") {
        const bool untrained = loaded.checkpoint.step == 0;
        const auto spec = ColorTransformSpec::strong(derive_seed(c.seed, 4));
        const auto r = anatomy_preservation_protocol(stylize, anatomy, style_images(), spec, untrained, out / "contact_sheets");
        std::string text = "pair,psnr_stylized,psnr_baseline,pass\n";
        for (const auto& row : r.rows) {
            text += std::to_string(row.index) + ',' + fmt(row.psnr_stylized) + ',' + fmt(row.psnr_baseline) + ',' +
                    (row.pass ? "1" : "0") + '\n';
        }
        write_text(out / "protocol.csv", text);
        report["protocol"] = {{"pairs", r.rows.size()}, {"pass_rate", r.pass_rate}, {"untrained", r.untrained}};
    } else {
        throw ConfigError("eval: unknown mode '" + c.mode + "' (expected identical, distinct or appendix-c)");
    }
    write_text(out / "report.json", report.dump(2) + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------- ablate

struct AblationVariant {
    std::string name;
    LossWeights weights;
    HeadComponents components = HeadComponents::full;
};

struct AblationData {
    std::vector<Image> train;
    std::vector<Image> eval_anatomy;  // validation split
    std::vector<Image> eval_style;    // training-split styles paired with eval_anatomy
};

struct AblationRow {
    AblationVariant variant;
    MetricReport reconstruction;
    MetricReport transfer;
    nlohmann::json config;
};

inline LossWeights select_losses(const std::string& list, const LossWeights& base = {}) {
    LossWeights w{0, 0, 0, 0};
    std::stringstream ss(list);
    std::string item;
    bool any = false;
    while (std::getline(ss, item, ',')) {
        if (item == "identity") w.identity = base.identity;
        else if (item == "consistency") w.consistency = base.consistency;
        else if (item == "anatomy") w.anatomy = base.anatomy;
        else if (item == "style") w.style = base.style;
        else throw ConfigError("ablate: unknown loss '" + item + "'");
        any = true;
    }
    if (!any) throw ConfigError("ablate: empty loss set");
    return w;
}

inline std::vector<AblationVariant> component_ladder() {
    return {{"encoder_only", {}, HeadComponents::encoder_only},
            {"+mlp", {}, HeadComponents::mlp},
            {"+dot_product", {}, HeadComponents::mlp_dot},
            {"+conv", {}, HeadComponents::full}};
}

// Anatomy from the validation split, style drawn from the training split.
inline AblationData ablation_data(const SyntheticDatasetSpec& spec, std::uint64_t seed, std::size_t max_pairs) {
    AblationData d;
    d.train = images_of(generate_split(spec, 0));
    d.eval_anatomy = first_n(images_of(generate_split(spec, 1)), max_pairs);
    Rng rng(derive_seed(seed, 5));
    for (std::size_t i = 0; i < d.eval_anatomy.size(); ++i) d.eval_style.push_back(d.train[rng.index(d.train.size())]);
    return d;
}

inline AblationRow run_ablation_variant(const AblationVariant& v, const TrainConfig& base, const AblationData& data) {
    TrainConfig tc = base;
    tc.weights = v.weights;
    FitOptions opts;
    opts.model = model_preset(tc.preset);
    opts.model.components = v.components;
    opts.use_model_override = true;
    auto result = fit(tc, data.train, opts);
    const auto fx = make_extractor<float>(tc.extractor);
    const auto stylize = model_stylizer(result.model);
    AblationRow row;
    row.variant = v;
    row.reconstruction = reconstruction_report(stylize, data.eval_anatomy);
    row.transfer = transfer_report(stylize, fx, data.eval_anatomy, data.eval_style);
    row.config = {{"name", v.name}, {"train", to_json(tc)}, {"model", to_json(opts.model)}};
    return row;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::string text = "variant,psnr,ssim,proxy_fid,config\n";
    for (const auto& r : rows) {
        text += csv_field(r.variant.name) + ',' + fmt(r.reconstruction.psnr) + ',' + fmt(r.reconstruction.ssim) + ',' +
                fmt(r.transfer.proxy_fid) + ',' + csv_field(r.config.dump()) + '\n';
    }
    return text;
}

inline int cmd_ablate(const RunConfig& c) {
    std::vector<AblationVariant> variants;
    for (const auto& set : c.loss_sets) variants.push_back({set, select_losses(set, c.weights), HeadComponents::full});
    if (c.component_ladder) {
        for (auto v : component_ladder()) {
            v.weights = c.weights;
            variants.push_back(v);
        }
    }
    if (variants.empty()) throw ConfigError("ablate: give at least one --losses set or --components ladder");
    const auto data = ablation_data(c.synthetic, c.seed, c.max_pairs);
    TrainConfig base = train_config(c);
    base.preset = "desk";
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        log_info("ablate: training variant " + v.name);
        rows.push_back(run_ablation_variant(v, base, data));
    }
    const fs::path out(c.out);
    fs::create_directories(out);
    write_run_config(c);
    write_text(out / "ablation.csv", ablation_table(rows));
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        j.push_back({{"variant", r.variant.name},
                     {"reconstruction", to_json(r.reconstruction)},
                     {"transfer", to_json(r.transfer)},
                     {"config", r.config}});
    }
    write_text(out / "ablation.json", nlohmann::json{{"run", to_json(c)}, {"rows", j}}.dump(2) + "\n");
    return kExitOk;
}

// Maps library exceptions onto exit codes.
template <class F>
int run_guarded(F&& f) {
    try {
        return f();
    } catch (const NumericError& e) {
        log_sink()("error", e.what());
        return kExitNumeric;
    } catch (const IoError& e) {
        log_sink()("error", e.what());
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        log_sink()("error", e.what());
        return kExitIo;
    } catch (const ConfigError& e) {
        log_sink()("error", e.what());
        return kExitUsage;
    } catch (const DimensionError& e) {
        log_sink()("error", e.what());
        return kExitUsage;
    } catch (const ContractError& e) {
        log_sink()("error", e.what());
        return kExitUsage;
    }
}

}  // namespace svit

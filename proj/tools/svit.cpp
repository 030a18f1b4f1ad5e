// svit: train, apply and evaluate a stylizing vision transformer.
//
// Options may also come from a key=value file given with --config; values on
// the command line take precedence over the file.

#include <iostream>

#include "CLI11.hpp"
#include "svit/workflows.hpp"

namespace {

struct Cli {
    svit::RunConfig run;
    std::string lr_schedule = "iteration";
    CLI::Option* preset = nullptr;
    CLI::Option* image_size = nullptr;
};

void add_options(CLI::App& app, Cli& cli) {
    auto& c = cli.run;
    cli.preset = app.add_option("--preset", c.preset, "Model size: tiny, small, base or desk")
                     ->check(CLI::IsMember({"tiny", "small", "base", "desk"}));
    app.add_option("--seed", c.seed, "Run seed");
    app.add_option("--data", c.data, "Image folder (class subfolders become labels)");
    app.add_option("--styles", c.styles, "Style image folder (training split)");
    app.add_option("--anatomy", c.anatomy_inputs, "stylize: anatomy images or folders");
    app.add_option("--style", c.style_inputs, "stylize: style images or folders");
    app.add_option("--out,-o", c.out, "Output directory");
    app.add_option("--checkpoint", c.checkpoint, "Model checkpoint");
    app.add_option("--resume", c.resume, "train: continue from this checkpoint");

    app.add_option("--epochs", c.epochs, "Training epochs");
    app.add_option("--batch-size", c.batch_size, "Batch size (also the batch for --ratio)")->check(CLI::PositiveNumber);
    app.add_option("--lr", c.lr, "Base learning rate");
    app.add_option("--min-lr", c.min_lr, "Final learning rate of the cosine schedule");
    app.add_option("--lr-schedule", cli.lr_schedule, "Cosine step unit")->check(CLI::IsMember({"iteration", "epoch"}));
    app.add_option("--grad-clip", c.grad_clip, "Max global gradient norm, 0 disables");
    app.add_option("--w-identity", c.weights.identity, "Identity loss weight");
    app.add_option("--w-consistency", c.weights.consistency, "Consistency loss weight");
    app.add_option("--w-anatomy", c.weights.anatomy, "Anatomy loss weight");
    app.add_option("--w-style", c.weights.style, "Style loss weight");
    app.add_option("--extractor-weights", c.extractor_weights, "Feature extractor weight container");

    app.add_option("--synthetic-seed", c.synthetic.seed, "Synthetic dataset seed");
    cli.image_size = app.add_option("--image-size", c.synthetic.image_size, "Synthetic image size");
    app.add_option("--train-count", c.synthetic.train_count, "Synthetic training images");
    app.add_option("--val-count", c.synthetic.val_count, "Synthetic validation images");
    app.add_option("--test-count", c.synthetic.test_count, "Synthetic test images");

    app.add_option("--fit", c.fit, "Resize policy")->check(CLI::IsMember({"crop", "pad"}));
    app.add_flag("--pairwise", c.pairwise, "stylize: every anatomy with every style");
    app.add_option("--probability,-p", c.probability, "augment: per-image stylization probability")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--ratio,-r", c.ratio, "augment: exact stylized fraction per batch")->check(CLI::Range(0.0, 1.0));
    app.add_option("--mode", c.mode, "eval: identical, distinct or appendix-c")
        ->check(CLI::IsMember({"identical", "distinct", "appendix-c"}));
    app.add_option("--max-pairs", c.max_pairs, "eval/ablate: number of evaluation pairs");
    app.add_option("--losses", c.loss_sets, "ablate: comma-separated loss set, repeatable");
    app.add_flag("--components", c.component_ladder, "ablate: run the four-step head component ladder");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stylizing vision transformer toolkit"};
    app.set_config("--config", "", "key=value configuration file");
    app.require_subcommand(1);
    Cli cli;
    add_options(app, cli);
    const std::vector<std::pair<std::string, std::string>> verbs{
        {"train", "Train a model and write checkpoints and history"},
        {"stylize", "Stylize anatomy images with style images"},
        {"augment", "Stylize a dataset with styles from a style bank"},
        {"tta", "Restyle test images with training styles"},
        {"eval", "Reconstruction, transfer or recolouring metrics"},
        {"ablate", "Train loss and component ablations at desk scale"},
        {"gen-data", "Write the synthetic dataset"},
    };
    for (const auto& [name, help] : verbs) app.add_subcommand(name, help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? svit::kExitOk : svit::kExitUsage;
    }

    auto& c = cli.run;
    c.command = app.get_subcommands().front()->get_name();
    c.lr_per_iteration = cli.lr_schedule == "iteration";
    const bool trains = c.command == "train" || c.command == "ablate";
    // Consumers of a checkpoint only check the preset when one is requested.
    if (!trains && cli.preset->count() == 0) c.preset.clear();
    if (trains && cli.image_size->count() == 0 && c.command == "train") {
        c.synthetic.image_size = svit::model_preset(c.preset).encoder.image_height;
    }

    return svit::run_guarded([&] {
        if (c.command == "train") return svit::cmd_train(c);
        if (c.command == "stylize") return svit::cmd_stylize(c);
        if (c.command == "augment") return svit::cmd_augment(c);
        if (c.command == "tta") return svit::cmd_tta(c);
        if (c.command == "eval") return svit::cmd_eval(c);
        if (c.command == "ablate") return svit::cmd_ablate(c);
        return svit::cmd_gen_data(c);
    });
}

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "contrafeat/errors.hpp"
#include "contrafeat/experiments.hpp"

namespace cf = contrafeat;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run config JSON");
    cmd->add_option("--seed", args.seed, "override config seed");
    cmd->add_option("--out", args.out_dir, "override output directory");
}

cf::RunConfig resolve_config(const CommonArgs& args) {
    cf::RunConfig cfg;
    if (!args.config_path.empty()) cfg = cf::RunConfig::load(args.config_path);
    if (const char* env = std::getenv("CONTRAFEAT_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw cf::ConfigError("CONTRAFEAT_SEED is not a valid integer");
        }
    }
    if (args.seed) cfg.seed = *args.seed;
    if (args.out_dir) cfg.out_dir = *args.out_dir;
    cfg.train.seed = cfg.seed;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrafeat: semantic direction discovery lab"};
    app.require_subcommand(1);

    CommonArgs pca_args, train_args, eval_args, trav_args, mask_args, distill_args;

    CLI::App* pca = app.add_subcommand("pca", "sample the base space and store the PCA basis");
    add_common(pca, pca_args);

    CLI::App* train = app.add_subcommand("train", "train the navigator");
    add_common(train, train_args);
    std::string train_variant, train_mode, frozen_dirs, resume_path;
    bool freeze_attention = false;
    std::optional<int> train_steps;
    train->add_option("--variant", train_variant, "loss variant: bi|pt");
    train->add_option("--mode", train_mode, "loss mode: l2mask|pooled|nofoc");
    train->add_option("--steps", train_steps, "override training steps");
    train->add_option("--frozen-directions", frozen_dirs, "bundle with a 'directions' array");
    train->add_flag("--freeze-attention", freeze_attention, "keep attention frozen uniform");
    train->add_option("--resume", resume_path, "checkpoint bundle to resume from");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with the oracle predictor");
    add_common(eval, eval_args);
    std::string eval_ckpt;
    bool eval_oracle = false;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint bundle directory");
    eval->add_flag("--oracle-directions", eval_oracle, "evaluate the ground-truth direction set");

    CLI::App* trav = app.add_subcommand("traverse", "render traversal strips as PPM files");
    add_common(trav, trav_args);
    std::string trav_ckpt;
    trav->add_option("--checkpoint", trav_ckpt, "checkpoint bundle directory")->required();

    CLI::App* mask = app.add_subcommand("mask-experiment",
                                        "compare loss modes on pure vs mixed semantic pairs");
    add_common(mask, mask_args);

    CLI::App* distill = app.add_subcommand("distill", "train a group VAE on paired images");
    add_common(distill, distill_args);
    std::string distill_ckpt;
    bool distill_oracle = false, distill_plain = false;
    distill->add_option("--checkpoint", distill_ckpt, "checkpoint bundle directory");
    distill->add_flag("--oracle-directions", distill_oracle, "use the ground-truth direction set");
    distill->add_flag("--plain-vae", distill_plain, "disable posterior averaging");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (pca->parsed()) {
            const cf::RunConfig cfg = resolve_config(pca_args);
            const cf::PcaRunResult res = cf::run_pca(cfg);
            std::cout << "pca basis written to " << res.bundle_dir.string() << "\n";
        } else if (train->parsed()) {
            cf::RunConfig cfg = resolve_config(train_args);
            if (!train_variant.empty()) cfg.train.loss.variant = cf::loss_variant_from_string(train_variant);
            if (!train_mode.empty()) cfg.train.loss.mode = cf::loss_mode_from_string(train_mode);
            if (train_steps) cfg.train.steps = *train_steps;
            if (!frozen_dirs.empty()) cfg.frozen_directions_path = frozen_dirs;
            if (freeze_attention) cfg.train.freeze_attention = true;
            std::optional<fs::path> resume;
            if (!resume_path.empty()) resume = resume_path;
            const cf::TrainRunResult res = cf::run_train(cfg, resume);
            std::cout << "checkpoint written to " << res.checkpoint_dir.string() << "\n";
        } else if (eval->parsed()) {
            const cf::RunConfig cfg = resolve_config(eval_args);
            if (!eval_oracle && eval_ckpt.empty())
                throw cf::ConfigError("eval: need --checkpoint or --oracle-directions");
            const cf::EvalRunResult res = cf::run_eval(cfg, eval_ckpt, eval_oracle);
            std::cout << "S_disen=" << res.s_disen << " N_discov=" << res.n_discov << " -> "
                      << res.report_path.string() << "\n";
        } else if (trav->parsed()) {
            const cf::RunConfig cfg = resolve_config(trav_args);
            const auto files = cf::run_traverse(cfg, trav_ckpt);
            std::cout << files.size() << " traversal strips written\n";
        } else if (mask->parsed()) {
            const cf::RunConfig cfg = resolve_config(mask_args);
            const cf::MaskExperimentResult res = cf::run_mask_experiment(cfg);
            for (const auto& [mode, vals] : res.table)
                std::cout << mode << ": pure=" << vals.first << " mixed=" << vals.second << "\n";
        } else if (distill->parsed()) {
            const cf::RunConfig cfg = resolve_config(distill_args);
            if (!distill_oracle && distill_ckpt.empty())
                throw cf::ConfigError("distill: need --checkpoint or --oracle-directions");
            const cf::DistillRunResult res =
                cf::run_distill(cfg, distill_ckpt, distill_oracle, distill_plain);
            std::cout << "MIG=" << res.mig << " FVM=" << res.fvm << " -> "
                      << res.report_path.string() << "\n";
        }
    } catch (const cf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cf::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const cf::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

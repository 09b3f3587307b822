// Command-line front end: data generation, ensemble training, temperature
// calibration, strategy evaluation, OOD detection, and severity sweeps.

#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "desot/experiment.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string mode;
    std::string seeds;
    std::string temp_scaled;
    std::size_t members = 0;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON run configuration");
    cmd->add_option("--out", flags.out_dir, "output directory (overrides config)");
    cmd->add_option("--mode", flags.mode,
                    "restrict to one strategy: sm|sm_single_frame|de|desot|mcdropout");
    cmd->add_option("--members", flags.members, "ensemble size M (overrides config)");
    cmd->add_option("--seeds", flags.seeds, "comma-separated run seeds (overrides config)");
    cmd->add_option("--temp-scaled", flags.temp_scaled, "on|off (overrides config)")
        ->check(CLI::IsMember({"on", "off"}));
}

desot::RunConfig resolve_config(const CommonFlags& flags) {
    desot::RunConfig cfg;
    if (!flags.config_path.empty()) {
        cfg = desot::run_config_from_json_file(flags.config_path);
    }
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.members > 0) cfg.members = flags.members;
    if (!flags.mode.empty()) {
        cfg.strategies = {desot::strategy_from_name(flags.mode)};
    }
    if (!flags.seeds.empty()) {
        cfg.seeds.clear();
        std::stringstream ss(flags.seeds);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            cfg.seeds.push_back(std::stoull(item));
        }
        if (cfg.seeds.empty()) throw std::invalid_argument("--seeds: no seeds given");
    }
    if (!flags.temp_scaled.empty()) cfg.calibration = flags.temp_scaled == "on";
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DESOT: deep ensembles spread over time, with the evaluation stack"};
    app.require_subcommand(1);

    // gen-data
    desot::GenDataConfig gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic glyph datasets");
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
    gen_cmd->add_option("--classes", gen.glyphs.in_dist_classes, "in-distribution class count");
    gen_cmd->add_option("--ood-classes", gen.glyphs.ood_classes, "held-out OOD class count");
    gen_cmd->add_option("--frames", gen.glyphs.in_dist_frames,
                        "in-distribution frames before splitting");
    gen_cmd->add_option("--ood-frames", gen.glyphs.ood_frames, "OOD frames");
    gen_cmd->add_option("--height", gen.glyphs.height, "frame height");
    gen_cmd->add_option("--width", gen.glyphs.width, "frame width");
    gen_cmd->add_option("--tail-exponent", gen.glyphs.tail_exponent,
                        "class count decay exponent");
    gen_cmd->add_option("--seq-len", gen.seq_len, "sequence length T");
    gen_cmd->add_option("--seed", gen.glyphs.seed, "generation seed");
    gen_cmd->add_option("--train-frac", gen.train_frac, "train fraction");
    gen_cmd->add_option("--val-frac", gen.val_frac, "validation fraction");
    gen_cmd->add_option("--min-class-count", gen.min_class_count,
                        "drop classes with fewer train+val samples");
    gen_cmd->add_option("--jitter-translate", gen.jitter.translate_frac,
                        "per-frame translation, fraction of width");
    gen_cmd->add_option("--jitter-scale", gen.jitter.scale_frac, "per-frame scale jitter");
    gen_cmd->add_option("--jitter-noise", gen.jitter.noise_sigma, "per-frame noise sigma");

    CommonFlags train_flags, calibrate_flags, eval_flags, ood_flags, sweep_flags, run_flags;
    CLI::App* train_cmd = app.add_subcommand("train", "train the ensemble members");
    add_common_flags(train_cmd, train_flags);
    CLI::App* calibrate_cmd =
        app.add_subcommand("calibrate", "fit per-strategy temperatures on validation frames");
    add_common_flags(calibrate_cmd, calibrate_flags);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate strategies on the sequence set");
    add_common_flags(eval_cmd, eval_flags);
    CLI::App* ood_cmd = app.add_subcommand("ood", "entropy-threshold OOD detection");
    add_common_flags(ood_cmd, ood_flags);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "augmentation severity sweep");
    add_common_flags(sweep_cmd, sweep_flags);
    CLI::App* run_cmd =
        app.add_subcommand("run", "full pipeline: train, calibrate, eval, ood, sweep");
    add_common_flags(run_cmd, run_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
            e.get_name() == "CallForVersion") {
            return app.exit(e);
        }
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (gen_cmd->parsed()) {
            desot::cmd_gen_data(gen);
        } else if (train_cmd->parsed()) {
            desot::cmd_train(resolve_config(train_flags));
        } else if (calibrate_cmd->parsed()) {
            desot::cmd_calibrate(resolve_config(calibrate_flags));
        } else if (eval_cmd->parsed()) {
            desot::cmd_eval(resolve_config(eval_flags));
        } else if (ood_cmd->parsed()) {
            desot::cmd_ood(resolve_config(ood_flags));
        } else if (sweep_cmd->parsed()) {
            desot::cmd_sweep(resolve_config(sweep_flags));
        } else if (run_cmd->parsed()) {
            desot::run_pipeline(resolve_config(run_flags));
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

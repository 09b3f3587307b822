#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "desot/augment.hpp"
#include "desot/dataset.hpp"
#include "desot/fusion.hpp"
#include "desot/metrics.hpp"
#include "desot/mlp.hpp"
#include "desot/synth.hpp"

namespace desot {

inline constexpr const char* kToolVersion = "desot 0.1.0";

enum class Strategy { sm_single_frame, sm, de, desot, mcdropout };

std::string strategy_name(Strategy strategy);
Strategy strategy_from_name(const std::string& name);

struct DataPaths {
    std::string train;
    std::string val;
    std::string test_frames;
    std::string test_sequences;
    std::string ood_sequences;
};

struct SweepSettings {
    std::vector<AugmentationKind> kinds = all_augmentation_kinds();
    std::vector<std::size_t> severities = {0, 1, 2, 3, 4, 5};
    std::size_t max_severity = 5;
    std::size_t max_sequences = 0;  // 0 = use every sequence
};

struct RunConfig {
    DataPaths data;
    std::size_t members = 5;
    std::size_t seq_len = 11;
    std::vector<std::uint64_t> seeds = {1000, 2000, 3000, 4000, 5000};
    std::vector<Strategy> strategies = {Strategy::sm_single_frame, Strategy::sm,
                                        Strategy::desot, Strategy::de, Strategy::mcdropout};
    std::vector<std::size_t> hidden_dims = {128, 64};
    TrainConfig train;  // per-member seed is filled in by cmd_train
    bool calibration = true;
    std::size_t ece_bins = 15;
    std::size_t brier_bins = 10;
    std::size_t entropy_bins = 30;
    std::size_t minority_max_train_count = 500;
    std::uint64_t ood_split_seed = 7;
    std::uint64_t eval_seed = 99;
    SweepSettings sweep;
    std::string out_dir = "out";
};

RunConfig run_config_from_json_text(const std::string& text, const std::string& origin);
RunConfig run_config_from_json_file(const std::string& path);
// Canonical snapshot used for the manifest and its digest.
std::string run_config_to_json(const RunConfig& cfg);

struct GenDataConfig {
    GlyphDatasetSpec glyphs;
    double train_frac = 0.70;
    double val_frac = 0.15;  // remainder becomes the test split
    std::size_t seq_len = 11;
    JitterParams jitter;
    std::size_t min_class_count = 10;  // applied over train+val
    std::string out_dir = "data";
};

// Writes train.dset, val.dset, test_frames.dset, test_seq.dseq, ood_seq.dseq
// and gen.json into out_dir.
void cmd_gen_data(const GenDataConfig& cfg);

// Trains members seed+0..M-1 (plus the dropout member at seed+M when the
// mcdropout strategy is configured) for every run seed; writes MLPW files and
// manifest.json.
void cmd_train(const RunConfig& cfg);

// Fits one temperature per strategy on the first seed's models using the
// held-out single-frame validation split; de and desot share the joint fit.
void cmd_calibrate(const RunConfig& cfg);

// Evaluates every configured strategy over all seeds on the sequence test set
// and its minority-class subset; writes metrics.csv.
void cmd_eval(const RunConfig& cfg);

// Entropy-threshold OOD detection per strategy, with and without temperature
// scaling; writes ood.csv and entropy_hist_<mode>[_tscaled].csv.
void cmd_ood(const RunConfig& cfg);

// Augmentation-severity sweep on the first seed's models; writes sweep.csv.
void cmd_sweep(const RunConfig& cfg);

// train -> calibrate -> eval -> ood -> sweep.
void run_pipeline(const RunConfig& cfg);

// ---- pieces shared with the test suites --------------------------------------

struct StrategyEval {
    std::vector<PredictionRecord> records;
    CostCounter counter;
};

// Evaluates one strategy over a sequence dataset. members must hold exactly
// the ensemble (size M >= 1); mc_model is required only for mcdropout.
// ood_marker taints every record as OOD (their labels are not comparable to
// the model's label space).
StrategyEval evaluate_strategy(Strategy strategy, std::span<const MlpModel> members,
                               const MlpModel* mc_model, const SequenceDataset& sequences,
                               double temperature, std::uint64_t eval_seed,
                               bool ood_marker = false);

// Exact per-sequence forward-pass cost of a strategy.
std::uint64_t passes_per_sequence(Strategy strategy, std::size_t members, std::size_t seq_len);

}  // namespace desot

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "desot/distribution.hpp"

namespace desot {

struct PredictionRecord {
    CategoricalDist dist;
    std::size_t label = 0;  // meaningful only when ood_marker is false
    std::int64_t group_id = 0;
    bool ood_marker = false;
};

// One row of the per-strategy results table. accuracy/macro_f1/ece live in
// [0,1] here; the CSV layer scales them by 100.
struct EvalReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double ece = 0.0;
    double brier_score = 0.0;
    double brier_reliability = 0.0;
    double mean_entropy = 0.0;
    std::uint64_t forward_passes = 0;
    std::size_t n_samples = 0;
};

// Fraction with argmax(dist) == label; ties break toward the lowest index.
double accuracy(std::span<const PredictionRecord> records);

// Unweighted mean of per-class F1 over classes that occur in the records
// (as a label or as a prediction); zero-denominator F1 counts as 0.
double macro_f1(std::span<const PredictionRecord> records, std::size_t num_classes);

// Expected Calibration Error: top-label confidence in equal-width bins over
// (0,1], ECE = sum_b (n_b/N)*|acc_b - conf_b|.
double ece(std::span<const PredictionRecord> records, std::size_t n_bins);

struct BrierDecomposition {
    double score = 0.0;
    double reliability = 0.0;
    double resolution = 0.0;
    double uncertainty = 0.0;
};

// Multiclass Brier score sum_c (p_c - onehot_c)^2 averaged over records, with
// the per-class binned Murphy decomposition summed over classes. The identity
// REL - RES + UNC = score is exact when forecasts are quantized to bin
// centers; otherwise it holds up to within-bin variance.
BrierDecomposition brier(std::span<const PredictionRecord> records, std::size_t num_classes,
                         std::size_t n_bins = 10);

// -sum p ln p in nats, with 0 ln 0 := 0.
double entropy(const CategoricalDist& dist);

struct EntropyHistogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::uint64_t> counts;
    double mean_entropy = 0.0;
    std::size_t n = 0;
};

// Equal-width bins over [lo, hi]; values outside clamp into the edge bins, so
// counts always sum to the record count.
EntropyHistogram entropy_histogram(std::span<const double> entropies, std::size_t n_bins,
                                   double lo, double hi);
EntropyHistogram entropy_histogram(std::span<const PredictionRecord> records,
                                   std::size_t n_bins, double lo, double hi);

// Bundles the full metric suite for one evaluated strategy.
EvalReport make_report(std::span<const PredictionRecord> records, std::size_t num_classes,
                       std::size_t ece_bins, std::size_t brier_bins,
                       std::uint64_t forward_passes);

}  // namespace desot

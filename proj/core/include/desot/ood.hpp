#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace desot {

struct OodRecord {
    double entropy = 0.0;
    bool is_ood = false;
    std::int64_t group_id = 0;
};

enum class SplitTag { fit, eval };

// Half of the sequences, tagged with its role so fit and eval data cannot be
// mixed up downstream.
struct OodSplit {
    SplitTag tag = SplitTag::fit;
    std::vector<OodRecord> records;
};

// Deterministic 50/50 split by seeded shuffle of the distinct group ids (the
// fit split takes the first ceil(k/2) groups). Throws if either split misses
// one of the two classes.
std::pair<OodSplit, OodSplit> split_halves(std::span<const OodRecord> records,
                                           std::uint64_t seed);

struct ThresholdFit {
    double threshold = 0.0;
    double fit_f1 = 0.0;
    // set when the fit split is inseparable or the best threshold flags
    // everything or nothing
    bool degenerate = false;
};

// Picks the threshold maximizing OOD-detection F1 on the fit split. A record
// counts as flagged when entropy >= threshold; candidates are the midpoints
// of consecutive distinct entropies plus the extremes, so every achievable
// labeling short of flag-nothing is reachable. F1 ties break toward the
// smaller threshold.
ThresholdFit fit_threshold(const OodSplit& fit_split);

struct OodReport {
    double threshold = 0.0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // zero-denominator precision/recall were defined as 0
    bool precision_defaulted = false;
    bool recall_defaulted = false;
};

// Confusion-matrix metrics on the eval split with OOD as the positive class.
OodReport evaluate_detection(const OodSplit& eval_split, double threshold);

}  // namespace desot

#include "desot/ood.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "desot/rng.hpp"

namespace desot {

namespace {

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion count_at(std::span<const OodRecord> records, double threshold) {
    Confusion c;
    for (const OodRecord& r : records) {
        const bool flagged = r.entropy >= threshold;
        if (flagged) {
            (r.is_ood ? c.tp : c.fp) += 1;
        } else {
            (r.is_ood ? c.fn : c.tn) += 1;
        }
    }
    return c;
}

double f1_of(const Confusion& c) {
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    return denom > 0.0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
}

void require_both_classes(std::span<const OodRecord> records, const char* context) {
    bool has_in = false, has_ood = false;
    for (const OodRecord& r : records) {
        (r.is_ood ? has_ood : has_in) = true;
    }
    if (!has_in || !has_ood) {
        throw std::invalid_argument(std::string(context) +
                                    ": need at least one in-distribution and one OOD record");
    }
}

}  // namespace

std::pair<OodSplit, OodSplit> split_halves(std::span<const OodRecord> records,
                                           std::uint64_t seed) {
    if (records.size() < 2) throw std::invalid_argument("split_halves: need >= 2 records");
    require_both_classes(records, "split_halves");

    // distinct group ids in first-appearance order, then a seeded shuffle
    std::vector<std::int64_t> groups;
    std::unordered_map<std::int64_t, std::size_t> seen;
    for (const OodRecord& r : records) {
        if (seen.emplace(r.group_id, groups.size()).second) {
            groups.push_back(r.group_id);
        }
    }
    Rng rng(mix_seed(seed, 0x4f4f4453ull));  // "OODS"
    rng.shuffle(groups);

    const std::size_t fit_groups = (groups.size() + 1) / 2;
    std::unordered_map<std::int64_t, bool> in_fit;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        in_fit[groups[i]] = i < fit_groups;
    }

    OodSplit fit{SplitTag::fit, {}};
    OodSplit eval{SplitTag::eval, {}};
    for (const OodRecord& r : records) {
        (in_fit[r.group_id] ? fit : eval).records.push_back(r);
    }
    if (fit.records.empty() || eval.records.empty()) {
        throw std::invalid_argument("split_halves: degenerate split");
    }
    for (const OodSplit* split : {&fit, &eval}) {
        bool has_in = false, has_ood = false;
        for (const OodRecord& r : split->records) {
            (r.is_ood ? has_ood : has_in) = true;
        }
        if (!has_in || !has_ood) {
            throw std::invalid_argument(
                "split_halves: a split is missing one class; reshuffle with another seed "
                "or provide more sequences");
        }
    }
    return {std::move(fit), std::move(eval)};
}

ThresholdFit fit_threshold(const OodSplit& fit_split) {
    if (fit_split.tag != SplitTag::fit) {
        throw std::invalid_argument("fit_threshold: expected the fit split");
    }
    require_both_classes(fit_split.records, "fit_threshold");

    std::vector<double> values;
    values.reserve(fit_split.records.size());
    for (const OodRecord& r : fit_split.records) {
        if (!std::isfinite(r.entropy)) {
            throw std::invalid_argument("fit_threshold: non-finite entropy");
        }
        values.push_back(r.entropy);
    }
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());

    std::vector<double> candidates;
    candidates.push_back(values.front());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        candidates.push_back(0.5 * (values[i] + values[i + 1]));
    }
    if (values.size() > 1) candidates.push_back(values.back());

    ThresholdFit best;
    best.threshold = candidates.front();
    best.fit_f1 = -1.0;
    for (double tau : candidates) {
        const double f1 = f1_of(count_at(fit_split.records, tau));
        if (f1 > best.fit_f1) {  // strict: ties keep the smaller threshold
            best.fit_f1 = f1;
            best.threshold = tau;
        }
    }
    const Confusion c = count_at(fit_split.records, best.threshold);
    const std::size_t flagged = c.tp + c.fp;
    best.degenerate = flagged == 0 || flagged == fit_split.records.size();
    return best;
}

OodReport evaluate_detection(const OodSplit& eval_split, double threshold) {
    if (eval_split.tag != SplitTag::eval) {
        throw std::invalid_argument("evaluate_detection: expected the eval split");
    }
    if (eval_split.records.empty()) {
        throw std::invalid_argument("evaluate_detection: empty eval split");
    }
    const Confusion c = count_at(eval_split.records, threshold);
    OodReport report;
    report.threshold = threshold;
    report.accuracy = static_cast<double>(c.tp + c.tn) /
                      static_cast<double>(eval_split.records.size());
    if (c.tp + c.fp > 0) {
        report.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    } else {
        report.precision_defaulted = true;
    }
    if (c.tp + c.fn > 0) {
        report.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    } else {
        report.recall_defaulted = true;
    }
    report.f1 = f1_of(c);
    return report;
}

}  // namespace desot

#include "desot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace desot {

namespace {

void check_records(std::span<const PredictionRecord> records, const char* context,
                   bool allow_ood = false) {
    if (records.empty()) {
        throw std::invalid_argument(std::string(context) + ": empty record set");
    }
    for (const PredictionRecord& r : records) {
        check_dist(r.dist, context);
        if (r.ood_marker && !allow_ood) {
            throw std::invalid_argument(std::string(context) +
                                        ": OOD-marked record not allowed here");
        }
    }
}

}  // namespace

double accuracy(std::span<const PredictionRecord> records) {
    check_records(records, "accuracy");
    std::size_t correct = 0;
    for (const PredictionRecord& r : records) {
        if (r.dist.argmax() == r.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

double macro_f1(std::span<const PredictionRecord> records, std::size_t num_classes) {
    check_records(records, "macro_f1");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (const PredictionRecord& r : records) {
        if (r.label >= num_classes) {
            throw std::invalid_argument("macro_f1: label out of range");
        }
        const std::size_t pred = r.dist.argmax();
        if (pred >= num_classes) {
            throw std::invalid_argument("macro_f1: prediction out of range");
        }
        if (pred == r.label) {
            ++tp[r.label];
        } else {
            ++fp[pred];
            ++fn[r.label];
        }
    }
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t true_count = tp[c] + fn[c];
        const std::size_t pred_count = tp[c] + fp[c];
        if (true_count == 0 && pred_count == 0) continue;  // absent from the records
        ++present;
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    return sum / static_cast<double>(present);
}

double ece(std::span<const PredictionRecord> records, std::size_t n_bins) {
    check_records(records, "ece");
    if (n_bins == 0) throw std::invalid_argument("ece: n_bins must be >= 1");
    std::vector<std::size_t> count(n_bins, 0), correct(n_bins, 0);
    std::vector<double> conf_sum(n_bins, 0.0);
    for (const PredictionRecord& r : records) {
        const std::size_t pred = r.dist.argmax();
        const double conf = r.dist.probs[pred];
        // bins partition (0,1]: bin b covers (b/n, (b+1)/n]
        std::size_t bin = 0;
        if (conf > 0.0) {
            bin = static_cast<std::size_t>(
                std::ceil(conf * static_cast<double>(n_bins))) - 1;
            bin = std::min(bin, n_bins - 1);
        }
        count[bin] += 1;
        conf_sum[bin] += conf;
        if (pred == r.label) correct[bin] += 1;
    }
    double total = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        const double nb = static_cast<double>(count[b]);
        const double acc_b = static_cast<double>(correct[b]) / nb;
        const double conf_b = conf_sum[b] / nb;
        total += nb / static_cast<double>(records.size()) * std::abs(acc_b - conf_b);
    }
    return total;
}

BrierDecomposition brier(std::span<const PredictionRecord> records, std::size_t num_classes,
                         std::size_t n_bins) {
    check_records(records, "brier");
    if (n_bins == 0) throw std::invalid_argument("brier: n_bins must be >= 1");
    const double n = static_cast<double>(records.size());

    BrierDecomposition out;
    // raw multiclass score
    for (const PredictionRecord& r : records) {
        if (r.label >= num_classes) throw std::invalid_argument("brier: label out of range");
        for (std::size_t c = 0; c < num_classes; ++c) {
            const double o = r.label == c ? 1.0 : 0.0;
            const double d = r.dist.probs[c] - o;
            out.score += d * d;
        }
    }
    out.score /= n;

    // per-class binned Murphy decomposition, summed over classes
    std::vector<double> fsum(n_bins), osum(n_bins);
    std::vector<std::size_t> cnt(n_bins);
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::fill(fsum.begin(), fsum.end(), 0.0);
        std::fill(osum.begin(), osum.end(), 0.0);
        std::fill(cnt.begin(), cnt.end(), 0);
        double base_rate = 0.0;
        for (const PredictionRecord& r : records) {
            const double p = r.dist.probs[c];
            const double o = r.label == c ? 1.0 : 0.0;
            std::size_t bin = static_cast<std::size_t>(p * static_cast<double>(n_bins));
            bin = std::min(bin, n_bins - 1);
            fsum[bin] += p;
            osum[bin] += o;
            cnt[bin] += 1;
            base_rate += o;
        }
        base_rate /= n;
        for (std::size_t b = 0; b < n_bins; ++b) {
            if (cnt[b] == 0) continue;
            const double nb = static_cast<double>(cnt[b]);
            const double f_bar = fsum[b] / nb;
            const double o_bar = osum[b] / nb;
            out.reliability += nb / n * (f_bar - o_bar) * (f_bar - o_bar);
            out.resolution += nb / n * (o_bar - base_rate) * (o_bar - base_rate);
        }
        out.uncertainty += base_rate * (1.0 - base_rate);
    }
    return out;
}

double entropy(const CategoricalDist& dist) {
    check_dist(dist, "entropy");
    double h = 0.0;
    for (double p : dist.probs) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

EntropyHistogram entropy_histogram(std::span<const double> entropies, std::size_t n_bins,
                                   double lo, double hi) {
    if (entropies.empty()) throw std::invalid_argument("entropy_histogram: empty input");
    if (n_bins == 0) throw std::invalid_argument("entropy_histogram: n_bins must be >= 1");
    if (!(hi > lo)) throw std::invalid_argument("entropy_histogram: empty range");
    EntropyHistogram hist;
    hist.lo = lo;
    hist.hi = hi;
    hist.counts.assign(n_bins, 0);
    hist.n = entropies.size();
    double sum = 0.0;
    const double scale = static_cast<double>(n_bins) / (hi - lo);
    for (double h : entropies) {
        sum += h;
        double pos = (h - lo) * scale;
        pos = std::clamp(pos, 0.0, static_cast<double>(n_bins) - 0.5);
        hist.counts[static_cast<std::size_t>(pos)] += 1;
    }
    hist.mean_entropy = sum / static_cast<double>(entropies.size());
    return hist;
}

EntropyHistogram entropy_histogram(std::span<const PredictionRecord> records,
                                   std::size_t n_bins, double lo, double hi) {
    check_records(records, "entropy_histogram", /*allow_ood=*/true);
    std::vector<double> values;
    values.reserve(records.size());
    for (const PredictionRecord& r : records) {
        values.push_back(entropy(r.dist));
    }
    return entropy_histogram(values, n_bins, lo, hi);
}

EvalReport make_report(std::span<const PredictionRecord> records, std::size_t num_classes,
                       std::size_t ece_bins, std::size_t brier_bins,
                       std::uint64_t forward_passes) {
    EvalReport report;
    report.accuracy = accuracy(records);
    report.macro_f1 = macro_f1(records, num_classes);
    report.ece = ece(records, ece_bins);
    const BrierDecomposition decomp = brier(records, num_classes, brier_bins);
    report.brier_score = decomp.score;
    report.brier_reliability = decomp.reliability;
    double h = 0.0;
    for (const PredictionRecord& r : records) h += entropy(r.dist);
    report.mean_entropy = h / static_cast<double>(records.size());
    report.forward_passes = forward_passes;
    report.n_samples = records.size();
    return report;
}

}  // namespace desot

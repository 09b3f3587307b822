#pragma once

// Independent oracles used by the test suites. Everything here recomputes
// results through a different code path than the library (straight-line
// arithmetic, brute force, exhaustive search) so the tests do not certify the
// implementation with itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "desot/calibration.hpp"
#include "desot/metrics.hpp"
#include "desot/mlp.hpp"
#include "desot/ood.hpp"

namespace oracle {

// Plain matrix-multiply forward pass with long double accumulation; no
// dropout, no shared helpers.
inline std::vector<double> forward_reference(const desot::MlpModel& model,
                                             std::span<const float> x) {
    std::vector<long double> act(x.begin(), x.end());
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const std::size_t in_dim = model.layer_dims[l];
        const std::size_t out_dim = model.layer_dims[l + 1];
        std::vector<long double> next(out_dim);
        for (std::size_t o = 0; o < out_dim; ++o) {
            long double acc = model.biases[l][o];
            for (std::size_t k = 0; k < in_dim; ++k) {
                acc += static_cast<long double>(model.weights[l][o * in_dim + k]) * act[k];
            }
            next[o] = acc;
        }
        if (l + 1 < model.num_layers()) {
            for (long double& v : next) {
                if (v < 0.0L) v = 0.0L;
            }
        }
        act = std::move(next);
    }
    return {act.begin(), act.end()};
}

// Loss of the full model at its current parameters (used for central
// finite differences over every parameter).
inline double full_loss(const desot::MlpModel& model, std::span<const float> x,
                        std::size_t label, desot::ForwardMode mode, std::uint64_t seed) {
    const std::vector<double> logits = desot::forward(model, x, mode, seed);
    return desot::cross_entropy_and_grad(logits, label).first;
}

// Dense grid search for the NLL-minimizing temperature.
inline double grid_search_temperature(const std::vector<desot::MemberLogits>& sets,
                                      const std::vector<std::size_t>& labels,
                                      desot::CalibrationMode mode, double lo, double hi,
                                      std::size_t points) {
    double best_t = lo;
    double best_nll = desot::validation_nll(sets, labels, desot::Temperature{lo}, mode);
    for (std::size_t i = 1; i < points; ++i) {
        const double u = std::log(lo) + (std::log(hi) - std::log(lo)) *
                                            static_cast<double>(i) /
                                            static_cast<double>(points - 1);
        const double t = std::exp(u);
        const double nll = desot::validation_nll(sets, labels, desot::Temperature{t}, mode);
        if (nll < best_nll) {
            best_nll = nll;
            best_t = t;
        }
    }
    return best_t;
}

// Exhaustive OOD threshold search: every candidate that can change the
// flagged-iff-entropy>=tau labeling, F1 ties broken toward the smaller
// threshold. Mirrors the contract, not the implementation.
inline std::pair<double, double> exhaustive_threshold(
    std::span<const desot::OodRecord> records) {
    std::vector<double> values;
    for (const desot::OodRecord& r : records) values.push_back(r.entropy);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<double> candidates;
    for (std::size_t i = 0; i < values.size(); ++i) {
        candidates.push_back(values[i]);
        if (i + 1 < values.size()) candidates.push_back(0.5 * (values[i] + values[i + 1]));
    }
    double best_tau = candidates.front();
    double best_f1 = -1.0;
    for (double tau : candidates) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const desot::OodRecord& r : records) {
            const bool flagged = r.entropy >= tau;
            if (flagged && r.is_ood) ++tp;
            if (flagged && !r.is_ood) ++fp;
            if (!flagged && r.is_ood) ++fn;
        }
        const double denom = static_cast<double>(2 * tp + fp + fn);
        const double f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
        if (f1 > best_f1) {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    return {best_tau, best_f1};
}

// Brute-force Murphy decomposition, independently binned and accumulated.
inline desot::BrierDecomposition brier_brute(std::span<const desot::PredictionRecord> records,
                                             std::size_t num_classes, std::size_t n_bins) {
    desot::BrierDecomposition out;
    const double n = static_cast<double>(records.size());
    for (const desot::PredictionRecord& r : records) {
        for (std::size_t c = 0; c < num_classes; ++c) {
            const double d = r.dist.probs[c] - (r.label == c ? 1.0 : 0.0);
            out.score += d * d / n;
        }
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<std::vector<double>> bin_f(n_bins), bin_o(n_bins);
        double base = 0.0;
        for (const desot::PredictionRecord& r : records) {
            const double p = r.dist.probs[c];
            const double o = r.label == c ? 1.0 : 0.0;
            std::size_t b = std::min(static_cast<std::size_t>(p * static_cast<double>(n_bins)),
                                     n_bins - 1);
            bin_f[b].push_back(p);
            bin_o[b].push_back(o);
            base += o / n;
        }
        for (std::size_t b = 0; b < n_bins; ++b) {
            if (bin_f[b].empty()) continue;
            double f_bar = 0.0, o_bar = 0.0;
            for (double v : bin_f[b]) f_bar += v;
            for (double v : bin_o[b]) o_bar += v;
            f_bar /= static_cast<double>(bin_f[b].size());
            o_bar /= static_cast<double>(bin_o[b].size());
            const double w = static_cast<double>(bin_f[b].size()) / n;
            out.reliability += w * (f_bar - o_bar) * (f_bar - o_bar);
            out.resolution += w * (o_bar - base) * (o_bar - base);
        }
        out.uncertainty += base * (1.0 - base);
    }
    return out;
}

// Perceptron convergence check: returns true when the point set is linearly
// separable (finds a separating hyperplane within the iteration budget).
inline bool perceptron_separable(const std::vector<std::vector<double>>& points,
                                 const std::vector<int>& labels, std::size_t max_epochs = 2000) {
    const std::size_t dim = points.front().size();
    std::vector<double> w(dim + 1, 0.0);
    for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
        bool any_error = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double s = w[dim];
            for (std::size_t k = 0; k < dim; ++k) s += w[k] * points[i][k];
            const int y = labels[i] == 1 ? 1 : -1;
            if (y * s <= 0.0) {
                any_error = true;
                for (std::size_t k = 0; k < dim; ++k) w[k] += y * points[i][k];
                w[dim] += y;
            }
        }
        if (!any_error) return true;
    }
    return false;
}

}  // namespace oracle

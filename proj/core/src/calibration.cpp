#include "desot/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "desot/mlp.hpp"

namespace desot {

namespace {

double log_sum_exp(std::span<const double> values) {
    double max_v = -std::numeric_limits<double>::infinity();
    for (double v : values) max_v = std::max(max_v, v);
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - max_v);
    return max_v + std::log(sum);
}

// -log softmax(z/T)[y], computed in log space.
double scaled_nll_single(std::span<const double> logits, std::size_t label, double temp) {
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temp;
    return log_sum_exp(scaled) - scaled[label];
}

void check_inputs(const std::vector<MemberLogits>& logit_sets,
                  const std::vector<std::size_t>& labels, CalibrationMode mode) {
    if (logit_sets.empty()) throw std::invalid_argument("validation_nll: empty validation set");
    if (logit_sets.size() != labels.size()) {
        throw std::invalid_argument("validation_nll: logits/labels size mismatch");
    }
    const std::size_t members = logit_sets.front().size();
    for (std::size_t i = 0; i < logit_sets.size(); ++i) {
        const MemberLogits& sample = logit_sets[i];
        if (sample.empty() || sample.size() != members) {
            throw std::invalid_argument("validation_nll: ragged member logits at sample " +
                                        std::to_string(i));
        }
        if (mode == CalibrationMode::single && members != 1) {
            throw std::invalid_argument("validation_nll: single mode expects one logit "
                                        "vector per sample");
        }
        for (const auto& logits : sample) {
            if (logits.size() != sample.front().size()) {
                throw std::invalid_argument("validation_nll: class count mismatch");
            }
            if (labels[i] >= logits.size()) {
                throw std::invalid_argument("validation_nll: label out of range at sample " +
                                            std::to_string(i));
            }
            for (double v : logits) {
                if (!std::isfinite(v)) {
                    throw std::invalid_argument("validation_nll: non-finite logit");
                }
            }
        }
    }
}

}  // namespace

CategoricalDist apply_temperature(std::span<const double> logits, Temperature temp) {
    if (!(temp.value > 0.0) || !std::isfinite(temp.value)) {
        throw std::invalid_argument("apply_temperature: temperature must be positive");
    }
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temp.value;
    return softmax(scaled);
}

double validation_nll(const std::vector<MemberLogits>& logit_sets,
                      const std::vector<std::size_t>& labels, Temperature temp,
                      CalibrationMode mode) {
    if (!(temp.value > 0.0) || !std::isfinite(temp.value)) {
        throw std::invalid_argument("validation_nll: temperature must be positive");
    }
    check_inputs(logit_sets, labels, mode);

    double total = 0.0;
    if (mode == CalibrationMode::single) {
        for (std::size_t i = 0; i < logit_sets.size(); ++i) {
            total += scaled_nll_single(logit_sets[i][0], labels[i], temp.value);
        }
    } else {
        // log p[y] = LSE_m(log softmax_m(z/T)[y]) - log M, kept in log space so
        // confident ensembles at small T do not underflow.
        std::vector<double> member_log_probs;
        for (std::size_t i = 0; i < logit_sets.size(); ++i) {
            const MemberLogits& sample = logit_sets[i];
            member_log_probs.resize(sample.size());
            for (std::size_t m = 0; m < sample.size(); ++m) {
                member_log_probs[m] = -scaled_nll_single(sample[m], labels[i], temp.value);
            }
            total -= log_sum_exp(member_log_probs) -
                     std::log(static_cast<double>(sample.size()));
        }
    }
    return total / static_cast<double>(logit_sets.size());
}

TemperatureFit fit_temperature(const std::vector<MemberLogits>& logit_sets,
                               const std::vector<std::size_t>& labels, CalibrationMode mode) {
    check_inputs(logit_sets, labels, mode);

    auto objective = [&](double log_temp) {
        const double nll =
            validation_nll(logit_sets, labels, Temperature{std::exp(log_temp)}, mode);
        if (!std::isfinite(nll)) {
            throw std::runtime_error("fit_temperature: non-finite NLL at T=" +
                                     std::to_string(std::exp(log_temp)));
        }
        return nll;
    };

    const double lo = std::log(kTempSearchLo);
    const double hi = std::log(kTempSearchHi);
    constexpr double kTol = 1e-4;
    constexpr double kInvPhi = 0.6180339887498949;

    double a = lo, b = hi;
    double c = b - kInvPhi * (b - a);
    double d = a + kInvPhi * (b - a);
    double fc = objective(c);
    double fd = objective(d);
    while (b - a > kTol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - kInvPhi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + kInvPhi * (b - a);
            fd = objective(d);
        }
    }
    const double log_best = 0.5 * (a + b);

    TemperatureFit fit;
    fit.temperature.value = std::exp(log_best);
    fit.nll = objective(log_best);
    fit.nll_at_unit = objective(0.0);
    if (fit.nll_at_unit <= fit.nll) {
        fit.temperature.value = 1.0;
        fit.nll = fit.nll_at_unit;
    }
    fit.clamped = log_best - lo < 2.0 * kTol || hi - log_best < 2.0 * kTol;
    if (fit.clamped) {
        std::cerr << "warning: fitted temperature " << fit.temperature.value
                  << " sits at a search bound [" << kTempSearchLo << ", " << kTempSearchHi
                  << "]\n";
    }
    return fit;
}

}  // namespace desot

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "desot/distribution.hpp"

namespace desot {

struct Temperature {
    double value = 1.0;
};

// Per-sample logits, one vector per ensemble member.
using MemberLogits = std::vector<std::vector<double>>;

enum class CalibrationMode {
    single,          // one logit vector per sample
    joint_ensemble,  // one shared temperature across all members
};

// softmax(logits / temp).
CategoricalDist apply_temperature(std::span<const double> logits, Temperature temp);

// Mean negative log-likelihood of the validation set at the given temperature.
// single: -log softmax(z/T)[y]. joint_ensemble: the ensemble is treated as a
// single model, p = mean over members of softmax(z_m/T), then -log p[y].
double validation_nll(const std::vector<MemberLogits>& logit_sets,
                      const std::vector<std::size_t>& labels, Temperature temp,
                      CalibrationMode mode);

struct TemperatureFit {
    Temperature temperature;
    double nll = 0.0;          // at the fitted temperature
    double nll_at_unit = 0.0;  // at T = 1
    bool clamped = false;      // landed on a search bound
};

inline constexpr double kTempSearchLo = 0.05;
inline constexpr double kTempSearchHi = 20.0;

// Golden-section search on log-temperature over [0.05, 20], absolute
// tolerance 1e-4 in log space. The result is never worse than T=1 on the
// fitting split.
TemperatureFit fit_temperature(const std::vector<MemberLogits>& logit_sets,
                               const std::vector<std::size_t>& labels, CalibrationMode mode);

}  // namespace desot

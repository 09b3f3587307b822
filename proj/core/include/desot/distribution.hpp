#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace desot {

// Probability vector over the class set. Valid instances have entries in
// [0, 1] summing to 1 within 1e-9.
struct CategoricalDist {
    std::vector<double> probs;

    std::size_t size() const { return probs.size(); }

    bool valid(double tol = 1e-9) const {
        if (probs.empty()) return false;
        double sum = 0.0;
        for (double p : probs) {
            if (!std::isfinite(p) || p < 0.0 || p > 1.0 + tol) return false;
            sum += p;
        }
        return std::abs(sum - 1.0) <= tol;
    }

    // Argmax with ties broken toward the lowest class index.
    std::size_t argmax() const {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.size(); ++c) {
            if (probs[c] > probs[best]) best = c;
        }
        return best;
    }
};

inline void check_dist(const CategoricalDist& d, const char* context) {
    if (!d.valid()) {
        throw std::invalid_argument(std::string(context) + ": invalid categorical distribution");
    }
}

}  // namespace desot

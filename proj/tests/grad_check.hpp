#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cehr/tensor.hpp"

namespace cehr::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

/// Compares the reverse-mode gradient of `loss` w.r.t. every entry of each
/// input (or at most `max_entries_per_input` randomly chosen ones) against
/// (f(x+h) - f(x-h)) / 2h.
///
/// Relative error per entry is |a - n| / max(|a|, |n|, floor); the floor
/// keeps entries whose true gradient is ~0 from dividing round-off by zero.
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> inputs, double h,
                                       double floor = 1e-6, std::size_t max_entries_per_input = 0,
                                       unsigned seed = 0) {
    for (auto& t : inputs) t.zero_grad();
    const Tensor out = loss();
    out.backward();

    std::mt19937 rng(seed);
    GradCheckResult result;
    for (auto& t : inputs) {
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        std::vector<std::size_t> idx(t.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (max_entries_per_input && idx.size() > max_entries_per_input) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(max_entries_per_input);
        }
        auto values = t.mutable_values();
        for (std::size_t i : idx) {
            const double saved = values[i];
            double plus = 0.0, minus = 0.0;
            {
                NoGradGuard guard;
                values[i] = saved + h;
                plus = loss().item();
                values[i] = saved - h;
                minus = loss().item();
            }
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic[i] - numeric) / denom);
            ++result.entries;
        }
    }
    return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace cehr::testing

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cehr/tensor.hpp"

namespace cehr {

/// Named, ordered collection of trainable leaves. Order is insertion order,
/// which fixes serialization and optimizer iteration.
class ParameterSet {
   public:
    Tensor& add(const std::string& name, Tensor t);
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t scalar_count() const;
    void zero_grad();
    /// Deep copy: fresh leaves with the same values.
    ParameterSet clone() const;

   private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

struct AdamState {
    std::int64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update over every parameter, using the gradients
/// currently accumulated on them.
void adam_step(ParameterSet& params, AdamState& state, double lr);

/// Lower-level form: explicit parameter/gradient buffers.
void adam_step(std::vector<std::span<double>> params, const std::vector<std::span<const double>>& grads,
               AdamState& state, double lr);

struct LrSchedule {
    double initial_lr = 2e-4;
    double eta_min = 0.0;
    int period_epochs = 1;
};

/// eta_min + (initial - eta_min) * (1 + cos(pi * epoch / period)) / 2.
double cosine_lr(const LrSchedule& schedule, int epoch);

}  // namespace cehr

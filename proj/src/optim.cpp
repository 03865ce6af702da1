#include "cehr/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cehr {

Tensor& ParameterSet::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("parameter already exists: " + name);
    if (!t.requires_grad()) t = Tensor::from_data(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

const Tensor& ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return items_[it->second].second;
}

Tensor& ParameterSet::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return items_[it->second].second;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

ParameterSet ParameterSet::clone() const {
    ParameterSet out;
    for (const auto& [name, t] : items_) {
        out.add(name, Tensor::from_data(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true));
    }
    return out;
}

void adam_step(std::vector<std::span<double>> params, const std::vector<std::span<const double>>& grads,
               AdamState& state, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state built for other parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || state.m[i].size() != params[i].size()) {
            throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i));
        }
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const double g = grads[i][j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            params[i][j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

void adam_step(ParameterSet& params, AdamState& state, double lr) {
    std::vector<std::span<double>> p;
    std::vector<std::span<const double>> g;
    for (auto& [name, t] : params.items()) {
        Tensor handle = t;  // shares the node
        p.push_back(handle.mutable_values());
        g.push_back(t.grad());
    }
    adam_step(std::move(p), g, state, lr);
}

double cosine_lr(const LrSchedule& schedule, int epoch) {
    if (schedule.period_epochs < 1) throw std::invalid_argument("cosine_lr: period must be >= 1");
    if (epoch < 0 || epoch > schedule.period_epochs) {
        throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(schedule.period_epochs) + "]");
    }
    const double ratio = static_cast<double>(epoch) / schedule.period_epochs;
    return schedule.eta_min +
           (schedule.initial_lr - schedule.eta_min) * (1.0 + std::cos(std::numbers::pi * ratio)) / 2.0;
}

}  // namespace cehr

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "svit/array.hpp"

namespace svit {

template <class T>
struct Parameter {
    std::string name;
    Array<T> array;  // trainable leaf: value plus accumulated gradient
};

template <class T>
using ParameterList = std::vector<Parameter<T>>;

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    friend bool operator==(const AdamWOptions&, const AdamWOptions&) = default;
};

template <class T>
struct OptimizerState {
    AdamWOptions options;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::size_t step = 0;
};

template <class T>
OptimizerState<T> make_optimizer_state(const ParameterList<T>& params, AdamWOptions options = {}) {
    OptimizerState<T> s;
    s.options = options;
    for (const auto& p : params) {
        s.first_moment.emplace_back(p.array.size(), T(0));
        s.second_moment.emplace_back(p.array.size(), T(0));
    }
    return s;
}

// One AdamW update: decoupled decay, then the bias-corrected Adam step.
template <class T>
void adamw_step(ParameterList<T>& params, OptimizerState<T>& state, double lr) {
    if (state.first_moment.size() != params.size()) {
        throw DimensionError("optimizer state tracks " + std::to_string(state.first_moment.size()) +
                             " parameters, model has " + std::to_string(params.size()));
    }
    const auto& o = state.options;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
    const T decay = static_cast<T>(1.0 - lr * o.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& arr = params[i].array;
        if (!arr.requires_grad()) continue;
        auto w = arr.mutable_data();
        auto g = arr.mutable_grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.size() != w.size()) throw DimensionError("moment shape mismatch for " + params[i].name);
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const double mhat = static_cast<double>(m[j]) / c1;
            const double vhat = static_cast<double>(v[j]) / c2;
            w[j] *= decay;
            w[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + o.eps));
        }
    }
}

template <class T>
void zero_grad(ParameterList<T>& params) {
    for (auto& p : params) p.array.zero_grad();
}

template <class T>
double grad_norm(const ParameterList<T>& params) {
    double s = 0;
    for (const auto& p : params) {
        for (T g : p.array.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(s);
}

template <class T>
void clip_grad_norm(ParameterList<T>& params, double max_norm) {
    const double n = grad_norm(params);
    if (max_norm <= 0 || n <= max_norm) return;
    const T k = static_cast<T>(max_norm / n);
    for (auto& p : params) {
        if (!p.array.requires_grad()) continue;
        for (T& g : p.array.mutable_grad()) g *= k;
    }
}

struct LrSchedule {
    double base_lr = 1e-3;
    std::size_t total_steps = 1;
    double min_lr = 0.0;
};

// Cosine annealing from base_lr at step 0 to min_lr at total_steps.
inline double cosine_lr(const LrSchedule& s, std::size_t step) {
    if (s.total_steps == 0) throw ContractError("cosine_lr: total_steps must be positive");
    if (step > s.total_steps) {
        throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(s.total_steps) + "]");
    }
    const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
    return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace svit

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "echomamba/tensor.hpp"

namespace echomamba {

// Bias-corrected Adam; moment buffers mirror the parameter layout.
template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m, v;

    void reset(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& [name, p] : params) {
            (void)name;
            m.emplace_back(p.values().size(), T(0));
            v.emplace_back(p.values().size(), T(0));
        }
    }
};

template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state) {
    if (state.m.size() != params.size()) state.reset(params);
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, p] = params[pi];
        if (!p.has_grad())
            throw ContractError("adam_step: parameter '" + name + "' has no gradient");
        auto& g = p.grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        auto& w = p.values();
        const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            w[i] -= static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace echomamba

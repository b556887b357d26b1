#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "echomamba/tensor.hpp"

namespace echomamba {

struct GradCheckReport {
    bool ok = true;
    double max_rel_err = 0.0;
    std::string worst;  // "<param>[i]" of the worst element

    void merge(const GradCheckReport& other) {
        if (other.max_rel_err > max_rel_err) {
            max_rel_err = other.max_rel_err;
            worst = other.worst;
        }
        ok = ok && other.ok;
    }
};

// Central-difference gradient check, 64-bit only: finite-difference noise at
// 32 bits drowns the signal. `forward` must be a pure function of the given
// parameter tensors (reseed any rng it uses on every call).
inline GradCheckReport check_gradients(
    const std::function<Tensor<double>()>& forward,
    const std::vector<std::pair<std::string, Tensor<double>>>& params, double h = 1e-5,
    double tol = 1e-4) {
    for (auto& [name, p] : params) {
        (void)name;
        const_cast<Tensor<double>&>(p).drop_grad();
    }
    // analytic gradients
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> loss = forward();
        backward(loss, tape);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) {
        (void)name;
        analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.values().size(), 0.0));
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double> p = params[pi].second;
        for (std::size_t i = 0; i < p.values().size(); ++i) {
            const double orig = p.values()[i];
            p.values()[i] = orig + h;
            const double fp = forward().item();
            p.values()[i] = orig - h;
            const double fm = forward().item();
            p.values()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[pi][i];
            // The 1e-3 floor turns the criterion absolute (~1e-7) for
            // vanishing gradients, where central differences only see
            // rounding noise.
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
            const double rel = std::fabs(fd - an) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = params[pi].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.ok = report.max_rel_err < tol;
    return report;
}

}  // namespace echomamba

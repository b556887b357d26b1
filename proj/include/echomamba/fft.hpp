#pragma once

#include <cmath>
#include <complex>
#include <memory>
#include <cstdint>
#include <vector>

#include "echomamba/errors.hpp"

namespace echomamba {

namespace fft_detail {

constexpr double kPi = 3.14159265358979323846;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 DIT, forward sign convention e^{-2pi i k m / n}.
inline void fft_pow2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Precomputed chirp and convolution kernel for one Bluestein length,
// reused across calls (one forward pass issues thousands of same-length
// transforms).
struct BluesteinPlan {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<std::complex<double>> chirp;      // b_k = exp(i pi k^2 / n)
    std::vector<std::complex<double>> kernel_fft; // FFT of the extended chirp
    std::vector<std::complex<double>> work;

    explicit BluesteinPlan(std::size_t length) : n(length) {
        m = next_pow2(2 * n - 1);
        chirp.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            // k^2 taken mod 2n keeps the angle argument small and exact
            const std::size_t idx = static_cast<std::size_t>(
                (static_cast<unsigned long long>(k) * k) % (2ull * n));
            const double ang = kPi * static_cast<double>(idx) / static_cast<double>(n);
            chirp[k] = std::complex<double>(std::cos(ang), std::sin(ang));
        }
        kernel_fft.assign(m, {0.0, 0.0});
        kernel_fft[0] = chirp[0];
        for (std::size_t k = 1; k < n; ++k) kernel_fft[k] = kernel_fft[m - k] = chirp[k];
        fft_pow2(kernel_fft);
        work.assign(m, {0.0, 0.0});
    }
};

inline BluesteinPlan& bluestein_plan(std::size_t n) {
    thread_local std::vector<std::unique_ptr<BluesteinPlan>> cache;
    for (auto& p : cache)
        if (p->n == n) return *p;
    cache.push_back(std::make_unique<BluesteinPlan>(n));
    return *cache.back();
}

// Arbitrary-length DFT via the Bluestein chirp-z reduction to a pow2 FFT.
inline void dft_bluestein(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    BluesteinPlan& plan = bluestein_plan(n);
    const std::size_t m = plan.m;
    auto& fa = plan.work;
    std::fill(fa.begin(), fa.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * std::conj(plan.chirp[k]);
    fft_pow2(fa);
    for (std::size_t i = 0; i < m; ++i) fa[i] *= plan.kernel_fft[i];
    // inverse pow2 fft via conjugation
    for (auto& v : fa) v = std::conj(v);
    fft_pow2(fa);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = std::conj(fa[k]) * inv_m * std::conj(plan.chirp[k]);
}

}  // namespace fft_detail

// Forward DFT: X_m = sum_k x_k e^{-2pi i k m / n}. Radix-2 when the length is
// a power of two, Bluestein otherwise.
inline void dft(std::vector<std::complex<double>>& a) {
    if (a.size() <= 1) return;
    if (fft_detail::is_pow2(a.size()))
        fft_detail::fft_pow2(a);
    else
        fft_detail::dft_bluestein(a);
}

// Inverse DFT with 1/n normalization so idft(dft(x)) == x.
inline void idft(std::vector<std::complex<double>>& a) {
    if (a.size() <= 1) return;
    for (auto& v : a) v = std::conj(v);
    dft(a);
    const double inv_n = 1.0 / static_cast<double>(a.size());
    for (auto& v : a) v = std::conj(v) * inv_n;
}

}  // namespace echomamba

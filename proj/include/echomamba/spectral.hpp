#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "echomamba/fft.hpp"
#include "echomamba/nn.hpp"
#include "echomamba/rng.hpp"
#include "echomamba/tensor.hpp"

namespace echomamba {

// Half-spectrum complex array (Hermitian symmetry of real-input transforms
// makes the other half redundant).
template <typename T>
struct ComplexTensor {
    Shape shape;
    std::vector<T> real;
    std::vector<T> imag;

    static ComplexTensor zeros(Shape s) {
        ComplexTensor c;
        const auto n = static_cast<std::size_t>(numel_of(s));
        c.shape = std::move(s);
        c.real.assign(n, T(0));
        c.imag.assign(n, T(0));
        return c;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(real.size()); }
};

// Real FFT along the sequence axis of a [B x L x D] tensor; returns the
// half spectrum [B x (L/2+1) x D].
template <typename T>
ComplexTensor<T> rfft(const Tensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("rfft needs [B x L x D], got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    if (L < 1) throw ShapeError("rfft needs L >= 1");
    const std::int64_t M = L / 2 + 1;
    ComplexTensor<T> out = ComplexTensor<T>::zeros({B, M, D});
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(L));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < D; ++d) {
            for (std::int64_t t = 0; t < L; ++t)
                buf[static_cast<std::size_t>(t)] = {
                    static_cast<double>(x.values()[static_cast<std::size_t>((b * L + t) * D + d)]), 0.0};
            dft(buf);
            for (std::int64_t m = 0; m < M; ++m) {
                const auto o = static_cast<std::size_t>((b * M + m) * D + d);
                out.real[o] = static_cast<T>(buf[static_cast<std::size_t>(m)].real());
                out.imag[o] = static_cast<T>(buf[static_cast<std::size_t>(m)].imag());
            }
        }
    return out;
}

// Inverse real FFT with 1/L normalization: irfft(rfft(x), L) == x. The half
// spectrum is Hermitian-extended as given, so any imaginary parts at the DC
// and Nyquist bins drop out of the (real) result.
template <typename T>
Tensor<T> irfft(const ComplexTensor<T>& spec, std::int64_t L) {
    if (spec.shape.size() != 3)
        throw ShapeError("irfft needs [B x bins x D], got " + shape_str(spec.shape));
    const std::int64_t B = spec.shape[0], M = spec.shape[1], D = spec.shape[2];
    if (M != L / 2 + 1)
        throw ShapeError("irfft bin count " + std::to_string(M) + " does not match L = " +
                         std::to_string(L) + " (want " + std::to_string(L / 2 + 1) + ")");
    Tensor<T> out = Tensor<T>::zeros({B, L, D});
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(L));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < D; ++d) {
            for (std::int64_t m = 0; m < M; ++m) {
                const auto o = static_cast<std::size_t>((b * M + m) * D + d);
                buf[static_cast<std::size_t>(m)] = {static_cast<double>(spec.real[o]),
                                                    static_cast<double>(spec.imag[o])};
            }
            for (std::int64_t m = M; m < L; ++m)
                buf[static_cast<std::size_t>(m)] = std::conj(buf[static_cast<std::size_t>(L - m)]);
            idft(buf);
            for (std::int64_t t = 0; t < L; ++t)
                out.values()[static_cast<std::size_t>((b * L + t) * D + d)] =
                    static_cast<T>(buf[static_cast<std::size_t>(t)].real());
        }
    return out;
}

namespace detail {

// Shared kernel of the spectral branch: per (batch, channel) compute
// irfft(K ⊙ rfft(x)) with K Hermitian-extended. Plain buffers, no tape.
template <typename T>
void spectral_apply_raw(const T* x, T* y, const T* k_re, const T* k_im, std::int64_t B,
                        std::int64_t L, std::int64_t D) {
    const std::int64_t M = L / 2 + 1;
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(L));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < D; ++d) {
            for (std::int64_t t = 0; t < L; ++t)
                buf[static_cast<std::size_t>(t)] = {
                    static_cast<double>(x[(b * L + t) * D + d]), 0.0};
            dft(buf);
            for (std::int64_t m = 0; m < L; ++m) {
                const std::int64_t half = (m < M) ? m : L - m;
                std::complex<double> k(static_cast<double>(k_re[half * D + d]),
                                       static_cast<double>(k_im[half * D + d]));
                if (m >= M) k = std::conj(k);
                buf[static_cast<std::size_t>(m)] *= k;
            }
            idft(buf);
            for (std::int64_t t = 0; t < L; ++t)
                y[(b * L + t) * D + d] = static_cast<T>(buf[static_cast<std::size_t>(t)].real());
        }
}

}  // namespace detail

// Differentiable filtered branch irfft(K ⊙ rfft(x)): gradients flow into x
// and into the real and imaginary parts of K.
template <typename T>
Tensor<T> spectral_apply(const Tensor<T>& x, const Tensor<T>& k_re, const Tensor<T>& k_im) {
    if (x.rank() != 3)
        throw ShapeError("spectral_apply needs [B x L x D], got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    const std::int64_t M = L / 2 + 1;
    if (k_re.shape() != Shape{M, D} || k_im.shape() != Shape{M, D})
        throw ShapeError("filter coefficients " + shape_str(k_re.shape()) +
                         " do not match sequence length " + std::to_string(L) + " (want " +
                         shape_str({M, D}) + ")");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    detail::spectral_apply_raw(x.data(), out.data(), k_re.data(), k_im.data(), B, L, D);
    detail::finalize(out, "spectral_apply");

    if (detail::want_grad<T>({&x, &k_re, &k_im})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, kre = k_re, kim = k_im, oi = out;
        const bool gx_on = x.requires_grad();
        const bool gk_on = k_re.requires_grad() || k_im.requires_grad();
        Tape<T>::active()->record([xi, kre, kim, oi, B, L, D, M, gx_on, gk_on]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            if (gx_on) {
                // adjoint of a circular convolution is the conjugate filter
                std::vector<T> neg_im(kim.values());
                for (auto& v : neg_im) v = -v;
                std::vector<T> dx(static_cast<std::size_t>(B * L * D));
                detail::spectral_apply_raw(go, dx.data(), kre.data(), neg_im.data(), B, L, D);
                auto& gx = xi.grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dx[i];
            }
            if (gk_on) {
                T* gkr = kre.grad().data();
                T* gki = kim.grad().data();
                std::vector<std::complex<double>> xs(static_cast<std::size_t>(L));
                std::vector<std::complex<double>> gs(static_cast<std::size_t>(L));
                for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t d = 0; d < D; ++d) {
                        for (std::int64_t t = 0; t < L; ++t) {
                            xs[static_cast<std::size_t>(t)] = {
                                static_cast<double>(xi.values()[static_cast<std::size_t>((b * L + t) * D + d)]),
                                0.0};
                            gs[static_cast<std::size_t>(t)] = {
                                static_cast<double>(go[(b * L + t) * D + d]), 0.0};
                        }
                        dft(xs);
                        dft(gs);
                        for (std::int64_t m = 0; m < M; ++m) {
                            const bool degenerate = (m == 0) || (L % 2 == 0 && m == L / 2);
                            const double w =
                                (degenerate ? 1.0 : 2.0) / static_cast<double>(L);
                            const std::complex<double> dk =
                                w * std::conj(xs[static_cast<std::size_t>(m)]) *
                                gs[static_cast<std::size_t>(m)];
                            gkr[m * D + d] += static_cast<T>(dk.real());
                            if (!degenerate) gki[m * D + d] += static_cast<T>(dk.imag());
                        }
                    }
            }
        });
    }
    return out;
}

// Learnable frequency-domain filter with residual, dropout and layer norm.
template <typename T>
struct SpectralFilterLayer {
    Tensor<T> k_re;  // [(l_max/2+1) x D]
    Tensor<T> k_im;
    LayerNormParams<T> norm;
    double dropout_rate = 0.0;
    std::int64_t l_max = 0;

    static SpectralFilterLayer init(std::int64_t l_max, std::int64_t dim, double dropout_rate,
                                    Rng& rng) {
        SpectralFilterLayer f;
        const std::int64_t bins = l_max / 2 + 1;
        f.k_re = Tensor<T>::zeros({bins, dim});
        f.k_im = Tensor<T>::zeros({bins, dim});
        init_normal(f.k_re, rng, 0.0, 0.02);
        init_normal(f.k_im, rng, 0.0, 0.02);
        f.k_re.set_requires_grad(true);
        f.k_im.set_requires_grad(true);
        f.norm = LayerNormParams<T>::init(dim);
        f.dropout_rate = dropout_rate;
        f.l_max = l_max;
        return f;
    }

    ComplexTensor<T> coefficients() const {
        ComplexTensor<T> c;
        c.shape = k_re.shape();
        c.real = k_re.values();
        c.imag = k_im.values();
        return c;
    }
};

// LayerNorm(F + Dropout(irfft(K ⊙ rfft(F)))). `apply_norm` is a test hook
// that swaps the final norm for identity.
template <typename T>
Tensor<T> filter_layer_forward(const Tensor<T>& f, const SpectralFilterLayer<T>& layer,
                               bool training, Rng& rng, bool apply_norm = true) {
    if (f.dim(1) != layer.l_max)
        throw ShapeError("filter layer built for L_max = " + std::to_string(layer.l_max) +
                         ", got sequence length " + std::to_string(f.dim(1)));
    Tensor<T> branch = spectral_apply(f, layer.k_re, layer.k_im);
    branch = dropout(branch, layer.dropout_rate, training, rng);
    Tensor<T> res = add(f, branch);
    return apply_norm ? layer_norm(res, layer.norm) : res;
}

}  // namespace echomamba

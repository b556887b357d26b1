#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "echomamba/rng.hpp"
#include "echomamba/tensor.hpp"

namespace echomamba {

template <typename T>
constexpr T default_layer_norm_eps() {
    if constexpr (sizeof(T) == 8)
        return T(1e-12);
    else
        return T(1e-5);
}

template <typename T>
void init_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void init_normal(Tensor<T>& t, Rng& rng, double mean, double stddev) {
    for (auto& v : t.values()) v = static_cast<T>(rng.normal(mean, stddev));
}

template <typename T>
struct LinearLayer {
    Tensor<T> weight;  // [in x out]
    Tensor<T> bias;    // [out]

    static LinearLayer init(std::int64_t in, std::int64_t out, Rng& rng) {
        LinearLayer l;
        l.weight = Tensor<T>::zeros({in, out});
        l.bias = Tensor<T>::zeros({out});
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        init_uniform(l.weight, rng, -bound, bound);
        init_uniform(l.bias, rng, -bound, bound);
        l.weight.set_requires_grad(true);
        l.bias.set_requires_grad(true);
        return l;
    }

    std::int64_t in_dim() const { return weight.dim(0); }
    std::int64_t out_dim() const { return weight.dim(1); }
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearLayer<T>& l) {
    return add(matmul(x, l.weight), l.bias);
}

// Row 0 is the padding item; it stays trainable but is masked at prediction.
template <typename T>
struct EmbeddingTable {
    Tensor<T> matrix;  // [(|V|+1) x D]

    static EmbeddingTable init(std::int64_t vocab, std::int64_t dim, Rng& rng) {
        EmbeddingTable e;
        e.matrix = Tensor<T>::zeros({vocab + 1, dim});
        init_normal(e.matrix, rng, 0.0, 0.02);
        e.matrix.set_requires_grad(true);
        return e;
    }

    std::int64_t vocab() const { return matrix.dim(0) - 1; }
    std::int64_t dim() const { return matrix.dim(1); }
};

// Row-gather with scatter-add gradient into the table.
template <typename T>
Tensor<T> embed(const std::vector<std::int64_t>& ids, std::int64_t B, std::int64_t L,
                const EmbeddingTable<T>& table) {
    if (static_cast<std::int64_t>(ids.size()) != B * L)
        throw ShapeError("embed: id count " + std::to_string(ids.size()) + " != B*L = " +
                         std::to_string(B * L));
    const std::int64_t rows = table.matrix.dim(0);
    const std::int64_t D = table.matrix.dim(1);
    Tensor<T> out = Tensor<T>::zeros({B, L, D});
    const T* tab = table.matrix.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < B * L; ++i) {
        const std::int64_t id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= rows)
            throw IndexError("embed: item id " + std::to_string(id) + " outside [0, " +
                             std::to_string(rows - 1) + "]");
        std::copy_n(tab + id * D, D, po + i * D);
    }
    detail::finalize(out, "embed");
    if (detail::want_grad<T>({&table.matrix})) {
        out.set_requires_grad(true);
        Tensor<T> mat = table.matrix, oi = out;
        Tape<T>::active()->record([mat, oi, ids, B, L, D]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            T* gm = mat.grad().data();
            for (std::int64_t i = 0; i < B * L; ++i) {
                const std::int64_t id = ids[static_cast<std::size_t>(i)];
                for (std::int64_t d = 0; d < D; ++d) gm[id * D + d] += go[i * D + d];
            }
        });
    }
    return out;
}

template <typename T>
struct LayerNormParams {
    Tensor<T> gain;   // [D]
    Tensor<T> shift;  // [D]
    T epsilon = default_layer_norm_eps<T>();

    static LayerNormParams init(std::int64_t dim, T eps = default_layer_norm_eps<T>()) {
        if (!(eps > T(0))) throw ContractError("layer norm epsilon must be positive");
        LayerNormParams p;
        p.gain = Tensor<T>::full({dim}, T(1));
        p.shift = Tensor<T>::zeros({dim});
        p.epsilon = eps;
        p.gain.set_requires_grad(true);
        p.shift.set_requires_grad(true);
        return p;
    }
};

// Normalize the last dimension to zero mean / unit variance, then affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
    const std::int64_t D = x.dim(-1);
    if (D != p.gain.dim(0))
        throw ShapeError("layer_norm: feature dim " + shape_str(x.shape()) +
                         " does not match params " + shape_str(p.gain.shape()));
    const std::int64_t rows = x.numel() / D;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    const T* pg = p.gain.data();
    const T* pb = p.shift.data();
    T* po = out.data();
    const T eps = p.epsilon;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * D;
        T mu = T(0);
        for (std::int64_t j = 0; j < D; ++j) mu += row[j];
        mu /= static_cast<T>(D);
        T var = T(0);
        for (std::int64_t j = 0; j < D; ++j) {
            const T c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(D);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < D; ++j)
            po[r * D + j] = pg[j] * ((row[j] - mu) * inv) + pb[j];
    }
    detail::finalize(out, "layer_norm");
    if (detail::want_grad<T>({&x, &p.gain, &p.shift})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, gi = p.gain, bi = p.shift, oi = out;
        const bool gx_on = x.requires_grad();
        const bool gp_on = p.gain.requires_grad();
        const bool gb_on = p.shift.requires_grad();
        Tape<T>::active()->record([xi, gi, bi, oi, rows, D, eps, gx_on, gp_on, gb_on]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            const T* px = xi.data();
            const T* pg = gi.data();
            T* gx = gx_on ? xi.grad().data() : nullptr;
            T* gg = gp_on ? gi.grad().data() : nullptr;
            T* gb = gb_on ? bi.grad().data() : nullptr;
            std::vector<T> xhat(static_cast<std::size_t>(D));
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* row = px + r * D;
                const T* dy = go + r * D;
                T mu = T(0);
                for (std::int64_t j = 0; j < D; ++j) mu += row[j];
                mu /= static_cast<T>(D);
                T var = T(0);
                for (std::int64_t j = 0; j < D; ++j) {
                    const T c = row[j] - mu;
                    var += c * c;
                }
                var /= static_cast<T>(D);
                const T inv = T(1) / std::sqrt(var + eps);
                for (std::int64_t j = 0; j < D; ++j) xhat[static_cast<std::size_t>(j)] = (row[j] - mu) * inv;
                if (gb)
                    for (std::int64_t j = 0; j < D; ++j) gb[j] += dy[j];
                if (gg)
                    for (std::int64_t j = 0; j < D; ++j) gg[j] += dy[j] * xhat[static_cast<std::size_t>(j)];
                if (gx) {
                    T mean_g = T(0), mean_gx = T(0);
                    for (std::int64_t j = 0; j < D; ++j) {
                        const T g = dy[j] * pg[j];
                        mean_g += g;
                        mean_gx += g * xhat[static_cast<std::size_t>(j)];
                    }
                    mean_g /= static_cast<T>(D);
                    mean_gx /= static_cast<T>(D);
                    for (std::int64_t j = 0; j < D; ++j) {
                        const T g = dy[j] * pg[j];
                        gx[r * D + j] += inv * (g - mean_g - xhat[static_cast<std::size_t>(j)] * mean_gx);
                    }
                }
            }
        });
    }
    return out;
}

// Inverted dropout: survivors scaled by 1/(1-rate) so eval needs no rescaling.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ContractError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const T inv_keep = T(1.0 / (1.0 - rate));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    std::vector<T> mask(x.values().size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.bernoulli(rate) ? T(0) : inv_keep;
    for (std::size_t i = 0; i < mask.size(); ++i) out.values()[i] = x.values()[i] * mask[i];
    detail::finalize(out, "dropout");
    if (detail::want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi, mask = std::move(mask)]() mutable {
            if (!oi.has_grad()) return;
            auto& gx = xi.grad();
            const auto& go = oi.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * mask[i];
        });
    }
    return out;
}

// (xW1 + b1) ⊙ σ(xW2 + b2), composed from engine primitives.
template <typename T>
Tensor<T> glu(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
              const Tensor<T>& b2) {
    Tensor<T> lin = add(matmul(x, w1), b1);
    Tensor<T> gate = sigmoid(add(matmul(x, w2), b2));
    return mul(lin, gate);
}

template <typename T>
struct GluParams {
    Tensor<T> w1, b1, w2, b2;

    static GluParams init(std::int64_t in, std::int64_t out, Rng& rng) {
        GluParams g;
        LinearLayer<T> l1 = LinearLayer<T>::init(in, out, rng);
        LinearLayer<T> l2 = LinearLayer<T>::init(in, out, rng);
        g.w1 = l1.weight;
        g.b1 = l1.bias;
        g.w2 = l2.weight;
        g.b2 = l2.bias;
        return g;
    }
};

template <typename T>
Tensor<T> glu(const Tensor<T>& x, const GluParams<T>& p) {
    return glu(x, p.w1, p.b1, p.w2, p.b2);
}

// Causal per-channel convolution: output at t sees positions <= t only
// (left zero-padding of K-1).
template <typename T>
struct Conv1DDepthwise {
    Tensor<T> kernels;  // [C x K]
    Tensor<T> bias;     // [C]

    static Conv1DDepthwise init(std::int64_t channels, std::int64_t k, Rng& rng) {
        Conv1DDepthwise c;
        c.kernels = Tensor<T>::zeros({channels, k});
        c.bias = Tensor<T>::zeros({channels});
        const double bound = 1.0 / std::sqrt(static_cast<double>(k));
        init_uniform(c.kernels, rng, -bound, bound);
        init_uniform(c.bias, rng, -bound, bound);
        c.kernels.set_requires_grad(true);
        c.bias.set_requires_grad(true);
        return c;
    }

    std::int64_t channels() const { return kernels.dim(0); }
    std::int64_t kernel_size() const { return kernels.dim(1); }
};

// out[b,t,c] = bias[c] + sum_j k[c,j] * x[b, t-(K-1)+j, c]
template <typename T>
Tensor<T> conv1d_depthwise(const Tensor<T>& x, const Conv1DDepthwise<T>& conv) {
    if (x.rank() != 3)
        throw ShapeError("conv1d_depthwise needs [B x L x C] input, got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
    if (C != conv.channels())
        throw ShapeError("conv1d_depthwise channel mismatch: input " + shape_str(x.shape()) +
                         " vs kernels " + shape_str(conv.kernels.shape()));
    const std::int64_t K = conv.kernel_size();
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    const T* pk = conv.kernels.data();
    const T* pb = conv.bias.data();
    T* po = out.data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < L; ++t)
            for (std::int64_t c = 0; c < C; ++c) {
                T acc = pb[c];
                const std::int64_t j0 = std::max<std::int64_t>(0, (K - 1) - t);
                for (std::int64_t j = j0; j < K; ++j)
                    acc += pk[c * K + j] * px[(b * L + (t - (K - 1) + j)) * C + c];
                po[(b * L + t) * C + c] = acc;
            }
    detail::finalize(out, "conv1d_depthwise");
    if (detail::want_grad<T>({&x, &conv.kernels, &conv.bias})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, ki = conv.kernels, bi = conv.bias, oi = out;
        const bool gx_on = x.requires_grad();
        const bool gk_on = conv.kernels.requires_grad();
        const bool gb_on = conv.bias.requires_grad();
        Tape<T>::active()->record([xi, ki, bi, oi, B, L, C, K, gx_on, gk_on, gb_on]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            const T* px = xi.data();
            const T* pk = ki.data();
            T* gx = gx_on ? xi.grad().data() : nullptr;
            T* gk = gk_on ? ki.grad().data() : nullptr;
            T* gb = gb_on ? bi.grad().data() : nullptr;
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t t = 0; t < L; ++t)
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T g = go[(b * L + t) * C + c];
                        if (gb) gb[c] += g;
                        const std::int64_t j0 = std::max<std::int64_t>(0, (K - 1) - t);
                        for (std::int64_t j = j0; j < K; ++j) {
                            const std::int64_t src = (b * L + (t - (K - 1) + j)) * C + c;
                            if (gk) gk[c * K + j] += g * px[src];
                            if (gx) gx[src] += g * pk[c * K + j];
                        }
                    }
        });
    }
    return out;
}

}  // namespace echomamba

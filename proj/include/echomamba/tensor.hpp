#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "echomamba/errors.hpp"

namespace echomamba {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

// Toggles a finite-value scan after every forward op. Off by default.
inline bool& finite_check_flag() {
    static bool enabled = false;
    return enabled;
}
inline void set_finite_checks(bool on) { finite_check_flag() = on; }

// Dense n-d array with optional gradient buffer. Value-semantic handle to
// shared storage: copies alias the same data, so parameter tensors can be
// captured by tape closures and updated in place by the optimizer.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return Tensor(std::move(shape), std::vector<T>());
    }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape), std::vector<T>());
        std::fill(t.values().begin(), t.values().end(), value);
        return t;
    }

    static Tensor scalar(T value) { return full({}, value); }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = std::move(shape);
        t.s_->values = std::move(values);
        return t;
    }

    bool defined() const { return static_cast<bool>(s_); }

    const Shape& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    std::int64_t dim(int i) const {
        const int r = rank();
        if (i < 0) i += r;
        if (i < 0 || i >= r)
            throw IndexError("dim index " + std::to_string(i) + " out of range for rank " +
                             std::to_string(r));
        return s_->shape[static_cast<std::size_t>(i)];
    }
    std::int64_t numel() const { return static_cast<std::int64_t>(s_->values.size()); }

    std::vector<T>& values() { return s_->values; }
    const std::vector<T>& values() const { return s_->values; }
    T* data() { return s_->values.data(); }
    const T* data() const { return s_->values.data(); }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool b) { s_->requires_grad = b; }

    bool has_grad() const { return !s_->grad.empty(); }
    std::vector<T>& grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
        return s_->grad;
    }
    const std::vector<T>& grad() const {
        if (s_->grad.empty())
            throw ContractError("gradient requested but never populated");
        return s_->grad;
    }
    void zero_grad() {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }
    void drop_grad() { s_->grad.clear(); }

    T item() const {
        if (numel() != 1)
            throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return s_->values[0];
    }

    std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw IndexError("index rank mismatch for shape " + shape_str(shape()));
        std::int64_t flat = 0;
        int d = 0;
        for (auto i : idx) {
            const auto s = s_->shape[static_cast<std::size_t>(d)];
            if (i < 0 || i >= s)
                throw IndexError("index " + std::to_string(i) + " out of bounds for dim " +
                                 std::to_string(d) + " of shape " + shape_str(shape()));
            flat = flat * s + i;
            ++d;
        }
        return flat;
    }
    T at(std::initializer_list<std::int64_t> idx) const {
        return s_->values[static_cast<std::size_t>(flat_index(idx))];
    }
    void set(std::initializer_list<std::int64_t> idx, T v) {
        s_->values[static_cast<std::size_t>(flat_index(idx))] = v;
    }

    // Deep copy (fresh storage, no grad, requires_grad preserved).
    Tensor clone() const {
        Tensor t = from_data(s_->shape, s_->values);
        t.s_->requires_grad = s_->requires_grad;
        return t;
    }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

private:
    struct Storage {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;  // empty until first use
        bool requires_grad = false;
    };

    Tensor(Shape shape, std::vector<T>&&) {
        s_ = std::make_shared<Storage>();
        s_->values.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
        s_->shape = std::move(shape);
    }

    std::shared_ptr<Storage> s_;
};

// Ordered record of executed differentiable ops; backward visits them in
// exact reverse order. One tape per forward pass, confined to one thread.
template <typename T>
class Tape {
public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    void run_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    static Tape*& active_slot() {
        thread_local Tape* active = nullptr;
        return active;
    }
    static Tape* active() { return active_slot(); }

private:
    std::vector<std::function<void()>> nodes_;
};

// RAII activation of a tape on the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::active_slot()) {
        Tape<T>::active_slot() = &tape;
    }
    ~TapeScope() { Tape<T>::active_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

namespace detail {

template <typename T>
bool want_grad(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape<T>::active() == nullptr) return false;
    for (const auto* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

template <typename T>
void finalize(Tensor<T>& out, const char* op_name) {
    if (!finite_check_flag()) return;
    for (T v : out.values())
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by op '") + op_name + "'");
}

// Padded strides: align `shape` to the trailing dims of out_shape, stride 0
// where the input dim is 1 (broadcast) or absent.
inline std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out_shape) {
    const int out_rank = static_cast<int>(out_shape.size());
    const int in_rank = static_cast<int>(shape.size());
    std::vector<std::int64_t> real(in_rank, 1);
    for (int i = in_rank - 2; i >= 0; --i)
        real[static_cast<std::size_t>(i)] =
            real[static_cast<std::size_t>(i + 1)] * shape[static_cast<std::size_t>(i + 1)];
    std::vector<std::int64_t> padded(out_rank, 0);
    for (int i = 0; i < in_rank; ++i) {
        const int od = out_rank - in_rank + i;
        const auto s = shape[static_cast<std::size_t>(i)];
        if (s == out_shape[static_cast<std::size_t>(od)])
            padded[static_cast<std::size_t>(od)] = (s == 1) ? 0 : real[static_cast<std::size_t>(i)];
        else if (s == 1)
            padded[static_cast<std::size_t>(od)] = 0;
        else
            throw ShapeError("shapes not broadcastable: " + shape_str(shape) + " vs " +
                             shape_str(out_shape));
    }
    return padded;
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Shape out(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const std::int64_t da = (i < r - ra) ? 1 : a[static_cast<std::size_t>(i - (r - ra))];
        const std::int64_t db = (i < r - rb) ? 1 : b[static_cast<std::size_t>(i - (r - rb))];
        if (da == db || da == 1 || db == 1)
            out[static_cast<std::size_t>(i)] = std::max(da, db);
        else
            throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    }
    return out;
}

// Odometer over out_shape driving two input offsets.
template <typename F>
void for_each_pair(const Shape& out_shape, const std::vector<std::int64_t>& sa,
                   const std::vector<std::int64_t>& sb, F&& fn) {
    const int rank = static_cast<int>(out_shape.size());
    const std::int64_t n = numel_of(out_shape);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    std::int64_t a_off = 0, b_off = 0;
    for (std::int64_t flat = 0; flat < n; ++flat) {
        fn(flat, a_off, b_off);
        for (int d = rank - 1; d >= 0; --d) {
            const auto ds = static_cast<std::size_t>(d);
            ++idx[ds];
            a_off += sa[ds];
            b_off += sb[ds];
            if (idx[ds] < out_shape[ds]) break;
            a_off -= sa[ds] * out_shape[ds];
            b_off -= sb[ds] * out_shape[ds];
            idx[ds] = 0;
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
    if (x > T(30)) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

namespace detail {

// fwd: value -> value; dfdx: (x, y) -> local derivative.
template <typename T, typename Fwd, typename Dfdx>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Dfdx dfdx) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const std::size_t n = x.values().size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = fwd(x.values()[i]);
    finalize(out, name);
    if (want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi, dfdx]() mutable {
            if (!oi.has_grad()) return;
            auto& gx = xi.grad();
            const auto& go = oi.grad();
            const std::size_t m = gx.size();
            for (std::size_t i = 0; i < m; ++i)
                gx[i] += go[i] * dfdx(xi.values()[i], oi.values()[i]);
        });
    }
    return out;
}

enum class BinKind { Add, Sub, Mul };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinKind kind, const char* name) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    switch (kind) {
        case BinKind::Add:
            for_each_pair(out_shape, sa, sb,
                          [&](std::int64_t f, std::int64_t i, std::int64_t j) { po[f] = pa[i] + pb[j]; });
            break;
        case BinKind::Sub:
            for_each_pair(out_shape, sa, sb,
                          [&](std::int64_t f, std::int64_t i, std::int64_t j) { po[f] = pa[i] - pb[j]; });
            break;
        case BinKind::Mul:
            for_each_pair(out_shape, sa, sb,
                          [&](std::int64_t f, std::int64_t i, std::int64_t j) { po[f] = pa[i] * pb[j]; });
            break;
    }
    finalize(out, name);
    if (want_grad<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> ai = a, bi = b, oi = out;
        const bool ga = a.requires_grad(), gb = b.requires_grad();
        Tape<T>::active()->record([ai, bi, oi, sa, sb, out_shape, kind, ga, gb]() mutable {
            if (!oi.has_grad()) return;
            const auto& go = oi.grad();
            T* grad_a = ga ? ai.grad().data() : nullptr;
            T* grad_b = gb ? bi.grad().data() : nullptr;
            const T* va = ai.data();
            const T* vb = bi.data();
            for_each_pair(out_shape, sa, sb, [&](std::int64_t f, std::int64_t i, std::int64_t j) {
                const T g = go[static_cast<std::size_t>(f)];
                switch (kind) {
                    case BinKind::Add:
                        if (grad_a) grad_a[i] += g;
                        if (grad_b) grad_b[j] += g;
                        break;
                    case BinKind::Sub:
                        if (grad_a) grad_a[i] += g;
                        if (grad_b) grad_b[j] -= g;
                        break;
                    case BinKind::Mul:
                        if (grad_a) grad_a[i] += g * vb[j];
                        if (grad_b) grad_b[j] += g * va[i];
                        break;
                }
            });
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, detail::BinKind::Add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, detail::BinKind::Sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, detail::BinKind::Mul, "mul");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x, "sigmoid", [](T v) { return stable_sigmoid(v); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::unary_op(
        x, "silu", [](T v) { return v * stable_sigmoid(v); },
        [](T v, T) {
            const T s = stable_sigmoid(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary_op(
        x, "softplus", [](T v) { return stable_softplus(v); },
        [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary_op(
        x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::unary_op(
        x, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
    return detail::unary_op(
        x, "mul_scalar", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary_op(
        x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Matrix multiply, batch dims broadcast, gradient dA = dC*B^T, dB = A^T*dC
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const std::int64_t m = a.dim(-2), k = a.dim(-1);
    const std::int64_t k2 = b.dim(-2), n = b.dim(-1);
    if (k != k2)
        throw ShapeError("matmul inner dims disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    const Shape batch = detail::broadcast_shapes(a_batch, b_batch);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out = Tensor<T>::zeros(out_shape);

    auto sa = detail::broadcast_strides(a_batch, batch);
    auto sb = detail::broadcast_strides(b_batch, batch);
    // scale batch strides to whole-matrix blocks
    for (auto& s : sa) s *= m * k;
    for (auto& s : sb) s *= k * n;

    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    detail::for_each_pair(batch, sa, sb, [&](std::int64_t f, std::int64_t i, std::int64_t j) {
        detail::gemm_acc(pa + i, pb + j, po + f * m * n, m, k, n);
    });
    detail::finalize(out, "matmul");

    if (detail::want_grad<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> ai = a, bi = b, oi = out;
        const bool ga = a.requires_grad(), gb = b.requires_grad();
        Tape<T>::active()->record([ai, bi, oi, sa, sb, batch, m, k, n, ga, gb]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            const T* va = ai.data();
            const T* vb = bi.data();
            T* gra = ga ? ai.grad().data() : nullptr;
            T* grb = gb ? bi.grad().data() : nullptr;
            detail::for_each_pair(batch, sa, sb, [&](std::int64_t f, std::int64_t i, std::int64_t j) {
                const T* dc = go + f * m * n;
                if (gra) {
                    // dA[i,p] += sum_j dC[i,j] * B[p,j]
                    for (std::int64_t r = 0; r < m; ++r)
                        for (std::int64_t p = 0; p < k; ++p) {
                            T acc = T(0);
                            const T* dcrow = dc + r * n;
                            const T* brow = vb + j + p * n;
                            for (std::int64_t c = 0; c < n; ++c) acc += dcrow[c] * brow[c];
                            gra[i + r * k + p] += acc;
                        }
                }
                if (grb) {
                    // dB[p,c] += sum_r A[r,p] * dC[r,c]
                    for (std::int64_t r = 0; r < m; ++r) {
                        const T* arow = va + i + r * k;
                        const T* dcrow = dc + r * n;
                        for (std::int64_t p = 0; p < k; ++p) {
                            const T av = arow[p];
                            if (av == T(0)) continue;
                            T* gbrow = grb + j + p * n;
                            for (std::int64_t c = 0; c < n; ++c) gbrow[c] += av * dcrow[c];
                        }
                    }
                }
            });
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> reduce_impl(const Tensor<T>& x, int axis, bool is_mean, bool whole, const char* name) {
    Shape out_shape;
    std::int64_t outer = 1, red = 1, inner = 1;
    if (whole) {
        red = x.numel();
    } else {
        const int r = x.rank();
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r)
            throw IndexError("reduce axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(x.shape()));
        for (int i = 0; i < r; ++i) {
            const auto d = x.shape()[static_cast<std::size_t>(i)];
            if (i < axis)
                outer *= d;
            else if (i == axis)
                red = d;
            else
                inner *= d;
            if (i != axis) out_shape.push_back(d);
        }
    }
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const T* px = x.data();
    T* po = out.data();
    const T scale = is_mean ? T(1) / static_cast<T>(red) : T(1);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            T acc = T(0);
            for (std::int64_t rr = 0; rr < red; ++rr) acc += px[(o * red + rr) * inner + in];
            po[o * inner + in] = acc * scale;
        }
    finalize(out, name);
    if (want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi, outer, red, inner, scale]() mutable {
            if (!oi.has_grad()) return;
            const auto& go = oi.grad();
            auto& gx = xi.grad();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    const T g = go[static_cast<std::size_t>(o * inner + in)] * scale;
                    for (std::int64_t rr = 0; rr < red; ++rr)
                        gx[static_cast<std::size_t>((o * red + rr) * inner + in)] += g;
                }
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    return detail::reduce_impl(x, 0, false, true, "sum");
}
template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis) {
    return detail::reduce_impl(x, axis, false, false, "sum");
}
template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return detail::reduce_impl(x, 0, true, true, "mean");
}
template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis) {
    return detail::reduce_impl(x, axis, true, false, "mean");
}

// ---------------------------------------------------------------------------
// Shape / layout ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), x.values());
    if (detail::want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi]() mutable {
            if (!oi.has_grad()) return;
            auto& gx = xi.grad();
            const auto& go = oi.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose2d needs rank 2, got " + shape_str(x.shape()));
    const std::int64_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros({c, r});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.values()[static_cast<std::size_t>(j * r + i)] =
            x.values()[static_cast<std::size_t>(i * c + j)];
    if (detail::want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi, r, c]() mutable {
            if (!oi.has_grad()) return;
            auto& gx = xi.grad();
            const auto& go = oi.grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j)
                    gx[static_cast<std::size_t>(i * c + j)] += go[static_cast<std::size_t>(j * r + i)];
        });
    }
    return out;
}

// Concatenate along the last dimension; all leading dims must agree.
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw ShapeError("concat_last rank mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (int i = 0; i < a.rank() - 1; ++i)
        if (a.shape()[static_cast<std::size_t>(i)] != b.shape()[static_cast<std::size_t>(i)])
            throw ShapeError("concat_last leading dims disagree: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const std::int64_t la = a.dim(-1), lb = b.dim(-1);
    const std::int64_t rows = a.numel() / la;
    Shape out_shape = a.shape();
    out_shape.back() = la + lb;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(a.data() + r * la, la, out.data() + r * (la + lb));
        std::copy_n(b.data() + r * lb, lb, out.data() + r * (la + lb) + la);
    }
    if (detail::want_grad<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> ai = a, bi = b, oi = out;
        const bool ga = a.requires_grad(), gb = b.requires_grad();
        Tape<T>::active()->record([ai, bi, oi, rows, la, lb, ga, gb]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            for (std::int64_t r = 0; r < rows; ++r) {
                if (ga) {
                    T* gx = ai.grad().data();
                    for (std::int64_t i = 0; i < la; ++i) gx[r * la + i] += go[r * (la + lb) + i];
                }
                if (gb) {
                    T* gx = bi.grad().data();
                    for (std::int64_t i = 0; i < lb; ++i) gx[r * lb + i] += go[r * (la + lb) + la + i];
                }
            }
        });
    }
    return out;
}

// Columns [offset, offset+len) of the last dimension.
template <typename T>
Tensor<T> narrow_last(const Tensor<T>& x, std::int64_t offset, std::int64_t len) {
    const std::int64_t last = x.dim(-1);
    if (offset < 0 || len < 1 || offset + len > last)
        throw IndexError("narrow_last [" + std::to_string(offset) + ", " +
                         std::to_string(offset + len) + ") out of range for " +
                         shape_str(x.shape()));
    const std::int64_t rows = x.numel() / last;
    Shape out_shape = x.shape();
    out_shape.back() = len;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    for (std::int64_t r = 0; r < rows; ++r)
        std::copy_n(x.data() + r * last + offset, len, out.data() + r * len);
    if (detail::want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi, rows, last, offset, len]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            T* gx = xi.grad().data();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t i = 0; i < len; ++i) gx[r * last + offset + i] += go[r * len + i];
        });
    }
    return out;
}

// x[:, t, :] for a rank-3 tensor.
template <typename T>
Tensor<T> select_time(const Tensor<T>& x, std::int64_t t) {
    if (x.rank() != 3) throw ShapeError("select_time needs rank 3, got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
    if (t < 0 || t >= L)
        throw IndexError("select_time position " + std::to_string(t) + " out of range [0, " +
                         std::to_string(L) + ")");
    Tensor<T> out = Tensor<T>::zeros({B, D});
    for (std::int64_t b = 0; b < B; ++b)
        std::copy_n(x.data() + (b * L + t) * D, D, out.data() + b * D);
    if (detail::want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi, B, L, D, t]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            T* gx = xi.grad().data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t d = 0; d < D; ++d) gx[(b * L + t) * D + d] += go[b * D + d];
        });
    }
    return out;
}

// Overwrite one column of the last dim with a constant; no gradient flows
// through the masked column.
template <typename T>
Tensor<T> mask_last_dim_index(const Tensor<T>& x, std::int64_t index, T value) {
    const std::int64_t last = x.dim(-1);
    if (index < 0 || index >= last)
        throw IndexError("mask index " + std::to_string(index) + " out of range for " +
                         shape_str(x.shape()));
    Tensor<T> out = x.clone();
    out.set_requires_grad(false);
    const std::int64_t rows = x.numel() / last;
    for (std::int64_t r = 0; r < rows; ++r) out.values()[static_cast<std::size_t>(r * last + index)] = value;
    if (detail::want_grad<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> xi = x, oi = out;
        Tape<T>::active()->record([xi, oi, rows, last, index]() mutable {
            if (!oi.has_grad()) return;
            const T* go = oi.grad().data();
            T* gx = xi.grad().data();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t i = 0; i < last; ++i)
                    if (i != index) gx[r * last + i] += go[r * last + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse; the tape is
// cleared afterwards (single use per forward pass).
template <typename T>
void backward(Tensor<T>& loss, Tape<T>& tape) {
    if (loss.numel() != 1)
        throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (tape.empty()) throw ContractError("backward on an empty tape");
    loss.grad()[0] += T(1);
    tape.run_backward();
    tape.clear();
}

}  // namespace echomamba

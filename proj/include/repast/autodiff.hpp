#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive applied to Var handles in creation order,
// which is already a topological order, so backward() is a single reverse
// sweep. Matrix products go through Eigen's GEMM kernels.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "repast/eigen.hpp"
#include "repast/tensor.hpp"

namespace repast {

template <class T>
class Tape;

/// Handle to a node on a Tape.
template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return value().dim(i); }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const { return tape->requires_grad(id); }
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// When false, ops store values only and record no backward closures.
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
        return {this, push(std::move(v), requires_grad && grad_enabled_, nullptr, "leaf")};
    }
    Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

    /// Records an op result. `bw` is only kept if some input requires grad.
    std::size_t push(Tensor<T> value, bool requires_grad, Backward bw, const char* op) {
        if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
        nodes_.push_back(Node{std::move(value), {}, requires_grad, requires_grad ? std::move(bw) : nullptr, op});
        return nodes_.size() - 1;
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient buffer for a node, zero-initialised on first touch.
    Tensor<T>& grad_ref(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    /// Gradient of the last backward() with respect to `v`; zeros if none reached it.
    Tensor<T> grad(const Var<T>& v) const {
        const Node& n = nodes_.at(v.id);
        if (n.grad.shape() != n.value.shape()) return Tensor<T>(n.value.shape());
        return n.grad;
    }

    void backward(const Var<T>& loss) {
        if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
        if (loss.value().size() != 1 || loss.value().rank() != 0)
            throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
        if (consumed_) throw std::logic_error("backward: tape already consumed");
        consumed_ = true;
        grad_ref(loss.id)[0] = T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.size() == 0) continue;
            n.backward(*this, i);
            n.backward = nullptr;
            if (!n.grad.all_finite()) throw NumericError(std::string("non-finite gradient at ") + n.op);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad;
        Backward backward;
        const char* op;
    };

    std::deque<Node> nodes_;
    bool grad_enabled_ = true;
    bool consumed_ = false;
};

namespace detail {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
    if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
    return *a.tape;
}

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const MatR<T>>;
template <class T>
using MMap = Eigen::Map<MatR<T>>;

template <class T, class F, class DF>
Var<T> unary(const Var<T>& x, const char* op, F f, DF df) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    const bool rg = x.requires_grad();
    const std::size_t xid = x.id;
    auto id = tape.push(std::move(out), rg,
                        [xid, df](Tape<T>& t, std::size_t self) {
                            const Tensor<T>& g = t.grad_ref(self);
                            const Tensor<T>& xv = t.value(xid);
                            const Tensor<T>& yv = t.value(self);
                            Tensor<T>& gx = t.grad_ref(xid);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
                        },
                        op);
    return {&tape, id};
}

enum class BinaryKind { add, sub, mul };

template <class T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinaryKind kind, const char* op) {
    Tape<T>& tape = same_tape(a, b);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    const Shape out_shape = broadcast_shapes(av.shape(), bv.shape());
    const Shape sa = broadcast_strides(av.shape(), out_shape);
    const Shape sb = broadcast_strides(bv.shape(), out_shape);
    Tensor<T> out(out_shape);
    T* o = out.data().data();
    const T* pa = av.data().data();
    const T* pb = bv.data().data();
    switch (kind) {
        case BinaryKind::add:
            for_each_broadcast(out_shape, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) { o[k] = pa[i] + pb[j]; });
            break;
        case BinaryKind::sub:
            for_each_broadcast(out_shape, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) { o[k] = pa[i] - pb[j]; });
            break;
        case BinaryKind::mul:
            for_each_broadcast(out_shape, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) { o[k] = pa[i] * pb[j]; });
            break;
    }
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t aid = a.id, bid = b.id;
    auto id = tape.push(
        std::move(out), ra || rb,
        [=](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad_ref(self);
            const T* pg = g.data().data();
            const Shape& os = g.shape();
            if (ra) {
                T* ga = t.grad_ref(aid).data().data();
                const T* pbv = t.value(bid).data().data();
                for_each_broadcast(os, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) {
                    ga[i] += kind == BinaryKind::mul ? pg[k] * pbv[j] : pg[k];
                });
            }
            if (rb) {
                T* gb = t.grad_ref(bid).data().data();
                const T* pav = t.value(aid).data().data();
                for_each_broadcast(os, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) {
                    gb[j] += kind == BinaryKind::mul ? pg[k] * pav[i] : kind == BinaryKind::sub ? -pg[k] : pg[k];
                });
            }
        },
        op);
    return {&tape, id};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) { return detail::binary(a, b, detail::BinaryKind::add, "add"); }
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) { return detail::binary(a, b, detail::BinaryKind::sub, "sub"); }
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) { return detail::binary(a, b, detail::BinaryKind::mul, "mul"); }

template <class T>
Var<T> scale(const Var<T>& x, T c) {
    return detail::unary(x, "scale", [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
Var<T> square(const Var<T>& x) {
    return detail::unary(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    return detail::unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(const Var<T>& x) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return detail::unary(
        x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary(
        x, "sigmoid",
        [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> sin(const Var<T>& x) {
    return detail::unary(x, "sin", [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <class T>
Var<T> cos(const Var<T>& x) {
    return detail::unary(x, "cos", [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& x) {
    Tape<T>& tape = *x.tape;
    T s = 0;
    for (T v : x.value().data()) s += v;
    const std::size_t xid = x.id;
    auto id = tape.push(Tensor<T>::scalar(s), x.requires_grad(),
                        [xid](Tape<T>& t, std::size_t self) {
                            const T g = t.grad_ref(self)[0];
                            for (T& v : t.grad_ref(xid).data()) v += g;
                        },
                        "sum");
    return {&tape, id};
}

template <class T>
Var<T> mean(const Var<T>& x) {
    if (x.size() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Mean over one axis; the axis is removed from the result.
template <class T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("mean_axis: axis out of range for " + to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    if (len == 0) throw ShapeError("mean_axis over empty axis");
    Shape os = s;
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    const T inv = T(1) / static_cast<T>(len);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < len; ++a)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + a) * inner + i];
    for (T& v : out.data()) v *= inv;
    const std::size_t xid = x.id;
    Tape<T>& tape = *x.tape;
    auto id = tape.push(std::move(out), x.requires_grad(),
                        [=](Tape<T>& t, std::size_t self) {
                            const Tensor<T>& g = t.grad_ref(self);
                            Tensor<T>& gx = t.grad_ref(xid);
                            for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t a = 0; a < len; ++a)
                                    for (std::size_t i = 0; i < inner; ++i)
                                        gx[(o * len + a) * inner + i] += g[o * inner + i] * inv;
                        },
                        "mean_axis");
    return {&tape, id};
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
    Tensor<T> out = x.value().reshaped(std::move(s));
    const std::size_t xid = x.id;
    auto id = x.tape->push(std::move(out), x.requires_grad(),
                           [xid](Tape<T>& t, std::size_t self) {
                               const Tensor<T>& g = t.grad_ref(self);
                               Tensor<T>& gx = t.grad_ref(xid);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           },
                           "reshape");
    return {x.tape, id};
}

namespace detail {

/// Calls f(out_offset, in_offset) for a permutation of axes.
template <class F>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& axes, F&& f) {
    const std::size_t r = in_shape.size();
    const Shape in_st = strides_of(in_shape);
    Shape out_shape(r), st(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[axes[i]];
        st[i] = in_st[axes[i]];
    }
    const Shape zero(r, 0);
    for_each_broadcast(out_shape, st, zero, [&](std::size_t k, std::size_t i, std::size_t) { f(k, i); });
}

}  // namespace detail

/// Reorders axes: result axis i is input axis axes[i].
template <class T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> axes) {
    const Shape& s = x.shape();
    if (axes.size() != s.size()) throw ShapeError("permute: axis count mismatch for " + to_string(s));
    std::vector<bool> seen(s.size(), false);
    for (std::size_t a : axes) {
        if (a >= s.size() || seen[a]) throw ShapeError("permute: invalid axis list");
        seen[a] = true;
    }
    Shape os(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) os[i] = s[axes[i]];
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    detail::for_each_permuted(s, axes, [&](std::size_t k, std::size_t i) { out[k] = xv[i]; });
    const std::size_t xid = x.id;
    const Shape in_shape = s;
    auto id = x.tape->push(std::move(out), x.requires_grad(),
                           [=](Tape<T>& t, std::size_t self) {
                               const Tensor<T>& g = t.grad_ref(self);
                               Tensor<T>& gx = t.grad_ref(xid);
                               detail::for_each_permuted(in_shape, axes, [&](std::size_t k, std::size_t i) { gx[i] += g[k]; });
                           },
                           "permute");
    return {x.tape, id};
}

/// Concatenation along the last axis; leading extents must agree.
template <class T>
Var<T> concat_last(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_last of nothing");
    Tape<T>& tape = *xs[0].tape;
    Shape lead = xs[0].shape();
    if (lead.empty()) throw ShapeError("concat_last needs rank >= 1");
    lead.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    bool rg = false;
    for (const auto& x : xs) {
        if (x.tape != &tape) throw std::invalid_argument("concat_last: operands on different tapes");
        Shape l = x.shape();
        if (l.empty()) throw ShapeError("concat_last needs rank >= 1");
        widths.push_back(l.back());
        l.pop_back();
        if (l != lead) throw ShapeError("concat_last: leading extents differ: " + to_string(x.shape()));
        total += widths.back();
        rg = rg || x.requires_grad();
    }
    const std::size_t rows = numel(lead);
    Shape os = lead;
    os.push_back(total);
    Tensor<T> out(os);
    std::size_t col = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const Tensor<T>& v = xs[k].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data().data() + r * widths[k], widths[k], out.data().data() + r * total + col);
        col += widths[k];
    }
    std::vector<std::size_t> ids;
    for (const auto& x : xs) ids.push_back(x.id);
    auto id = tape.push(std::move(out), rg,
                        [=](Tape<T>& t, std::size_t self) {
                            const Tensor<T>& g = t.grad_ref(self);
                            std::size_t c = 0;
                            for (std::size_t k = 0; k < ids.size(); ++k) {
                                if (t.requires_grad(ids[k])) {
                                    Tensor<T>& gx = t.grad_ref(ids[k]);
                                    for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                            gx[r * widths[k] + j] += g[r * total + c + j];
                                }
                                c += widths[k];
                            }
                        },
                        "concat_last");
    return {&tape, id};
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product a[..., m, k] x b[..., k, n] with broadcast batch axes.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    Tape<T>& tape = detail::same_tape(a, b);
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(as) + " and " + to_string(bs));
    const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
    if (bs[bs.size() - 2] != k)
        throw ShapeError("matmul inner dimension mismatch: " + to_string(as) + " x " + to_string(bs) + " (" +
                         std::to_string(k) + " vs " + std::to_string(bs[bs.size() - 2]) + ")");
    const Shape ab(as.begin(), as.end() - 2), bb(bs.begin(), bs.end() - 2);
    const Shape batch = broadcast_shapes(ab, bb);
    const Shape sa = broadcast_strides(ab, batch), sb = broadcast_strides(bb, batch);
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    Tensor<T> out(os);
    const T* pa = a.value().data().data();
    const T* pb = b.value().data().data();
    T* po = out.data().data();
    using detail::CMap;
    using detail::MMap;
    for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        MMap<T> c(po + o * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        c.noalias() = CMap<T>(pa + i * m * k, m, k) * CMap<T>(pb + j * k * n, k, n);
    });
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t aid = a.id, bid = b.id;
    auto id = tape.push(std::move(out), ra || rb,
                        [=](Tape<T>& t, std::size_t self) {
                            const T* g = t.grad_ref(self).data().data();
                            const T* av = t.value(aid).data().data();
                            const T* bv = t.value(bid).data().data();
                            T* ga = ra ? t.grad_ref(aid).data().data() : nullptr;
                            T* gb = rb ? t.grad_ref(bid).data().data() : nullptr;
                            for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
                                CMap<T> gm(g + o * m * n, m, n);
                                if (ra) MMap<T>(ga + i * m * k, m, k).noalias() += gm * CMap<T>(bv + j * k * n, k, n).transpose();
                                if (rb) MMap<T>(gb + j * k * n, k, n).noalias() += CMap<T>(av + i * m * k, m, k).transpose() * gm;
                            });
                        },
                        "matmul");
    return {&tape, id};
}

// ---------------------------------------------------------------------------
// Neural-network primitives

/// softmax(scale * x) along the last axis, stabilised by max subtraction.
template <class T>
Var<T> softmax_lastdim(const Var<T>& x, T scale_factor = T(1)) {
    if (!(scale_factor > T(0))) throw std::invalid_argument("softmax_lastdim: scale must be positive");
    const Tensor<T>& xv = x.value();
    if (xv.rank() == 0 || xv.shape().back() == 0) throw ShapeError("softmax_lastdim needs a non-empty last axis");
    const std::size_t len = xv.shape().back();
    const std::size_t rows = xv.size() / len;
    Tensor<T> out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data().data() + r * len;
        T* o = out.data().data() + r * len;
        T mx = in[0];
        for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[j]);
        T s = 0;
        for (std::size_t j = 0; j < len; ++j) {
            o[j] = std::exp(scale_factor * (in[j] - mx));
            s += o[j];
        }
        const T inv = T(1) / s;
        for (std::size_t j = 0; j < len; ++j) o[j] *= inv;
    }
    const std::size_t xid = x.id;
    auto id = x.tape->push(std::move(out), x.requires_grad(),
                           [=](Tape<T>& t, std::size_t self) {
                               const Tensor<T>& g = t.grad_ref(self);
                               const Tensor<T>& y = t.value(self);
                               Tensor<T>& gx = t.grad_ref(xid);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const std::size_t base = r * len;
                                   T dot = 0;
                                   for (std::size_t j = 0; j < len; ++j) dot += g[base + j] * y[base + j];
                                   for (std::size_t j = 0; j < len; ++j)
                                       gx[base + j] += scale_factor * y[base + j] * (g[base + j] - dot);
                               }
                           },
                           "softmax_lastdim");
    return {x.tape, id};
}

/// Normalises the last axis to zero mean / unit variance, then applies gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
    if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
    const Tensor<T>& xv = x.value();
    if (xv.rank() == 0) throw ShapeError("layer_norm needs rank >= 1");
    const std::size_t d = xv.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
    const std::size_t rows = xv.size() / d;
    Tensor<T> out(xv.shape());
    std::vector<T> xhat(xv.size()), rstd(rows);
    const T* g = gain.value().data().data();
    const T* b = bias.value().data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data().data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<T>(d);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (in[j] - mu) * rstd[r];
            out[r * d + j] = xhat[r * d + j] * g[j] + b[j];
        }
    }
    Tape<T>& tape = *x.tape;
    const std::size_t xid = x.id, gid = gain.id, bid = bias.id;
    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    auto id = tape.push(std::move(out), rg,
                        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
                            const Tensor<T>& gy = t.grad_ref(self);
                            const T* gv = t.value(gid).data().data();
                            const bool rx = t.requires_grad(xid);
                            T* gx = rx ? t.grad_ref(xid).data().data() : nullptr;
                            T* gg = t.requires_grad(gid) ? t.grad_ref(gid).data().data() : nullptr;
                            T* gb = t.requires_grad(bid) ? t.grad_ref(bid).data().data() : nullptr;
                            std::vector<T> dxhat(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                                T m1 = 0, m2 = 0;
                                for (std::size_t j = 0; j < d; ++j) {
                                    const T dy = gy[r * d + j];
                                    if (gg) gg[j] += dy * xhat[r * d + j];
                                    if (gb) gb[j] += dy;
                                    dxhat[j] = dy * gv[j];
                                    m1 += dxhat[j];
                                    m2 += dxhat[j] * xhat[r * d + j];
                                }
                                if (!rx) continue;
                                m1 /= static_cast<T>(d);
                                m2 /= static_cast<T>(d);
                                for (std::size_t j = 0; j < d; ++j)
                                    gx[r * d + j] += rstd[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
                            }
                        },
                        "layer_norm");
    return {&tape, id};
}

/// Same-padded 2D convolution, NHWC input [b,h,w,cin], kernel [kh,kw,cin,cout].
/// Output extents are ceil(h/stride) x ceil(w/stride); extra padding goes to the bottom/right.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride) {
    Tape<T>& tape = detail::same_tape(x, kernel);
    const Shape& xs = x.shape();
    const Shape& ks = kernel.shape();
    if (xs.size() != 4 || ks.size() != 4) throw ShapeError("conv2d expects [b,h,w,c] input and [kh,kw,cin,cout] kernel");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    const std::size_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
    const std::size_t KH = ks[0], KW = ks[1], CO = ks[3];
    if (ks[2] != C)
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(C) + ", kernel expects " + std::to_string(ks[2]));
    if (KH % 2 == 0 || KW % 2 == 0) throw ShapeError("conv2d kernel extents must be odd");
    const std::size_t OH = (H + stride - 1) / stride, OW = (W + stride - 1) / stride;
    const std::size_t pad_h = ((OH - 1) * stride + KH > H ? (OH - 1) * stride + KH - H : 0) / 2;
    const std::size_t pad_w = ((OW - 1) * stride + KW > W ? (OW - 1) * stride + KW - W : 0) / 2;
    const std::size_t rows = B * OH * OW, cols_w = KH * KW * C;

    // im2col; out-of-image taps stay zero.
    auto im2col = [=](const T* in, T* cols) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    T* row = cols + ((b * OH + oy) * OW + ox) * cols_w;
                    for (std::size_t ky = 0; ky < KH; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad_h);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t kx = 0; kx < KW; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad_w);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            std::copy_n(in + ((b * H + iy) * W + ix) * C, C, row + (ky * KW + kx) * C);
                        }
                    }
                }
    };
    std::vector<T> cols(rows * cols_w, T(0));
    im2col(x.value().data().data(), cols.data());
    Tensor<T> out(Shape{B, OH, OW, CO});
    using detail::CMap;
    using detail::MMap;
    MMap<T>(out.data().data(), rows, CO).noalias() =
        CMap<T>(cols.data(), rows, cols_w) * CMap<T>(kernel.value().data().data(), cols_w, CO);
    const std::size_t xid = x.id, kid = kernel.id;
    const bool rg = x.requires_grad() || kernel.requires_grad();
    auto id = tape.push(std::move(out), rg,
                        [=, cols = std::move(cols)](Tape<T>& t, std::size_t self) {
                            CMap<T> g(t.grad_ref(self).data().data(), rows, CO);
                            if (t.requires_grad(kid))
                                MMap<T>(t.grad_ref(kid).data().data(), cols_w, CO).noalias() +=
                                    CMap<T>(cols.data(), rows, cols_w).transpose() * g;
                            if (!t.requires_grad(xid)) return;
                            std::vector<T> dcols(rows * cols_w);
                            MMap<T>(dcols.data(), rows, cols_w).noalias() =
                                g * CMap<T>(t.value(kid).data().data(), cols_w, CO).transpose();
                            T* gx = t.grad_ref(xid).data().data();
                            for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t oy = 0; oy < OH; ++oy)
                                    for (std::size_t ox = 0; ox < OW; ++ox) {
                                        const T* row = dcols.data() + ((b * OH + oy) * OW + ox) * cols_w;
                                        for (std::size_t ky = 0; ky < KH; ++ky) {
                                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad_h);
                                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                            for (std::size_t kx = 0; kx < KW; ++kx) {
                                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad_w);
                                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                                T* dst = gx + ((b * H + iy) * W + ix) * C;
                                                const T* src = row + (ky * KW + kx) * C;
                                                for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                                            }
                                        }
                                    }
                        },
                        "conv2d");
    return {&tape, id};
}

/// Mean squared error over all components.
template <class T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse_loss shape mismatch: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    return mean(square(sub(pred, target)));
}

/// Affine map x W + b over the last axis of x.
/// Leading axes of x are flattened so the product is one GEMM.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const Shape& xs = x.shape();
    if (xs.size() <= 2) return add(matmul(x, w), b);
    Shape out = xs;
    out.back() = w.shape().back();
    const Var<T> flat = reshape(x, Shape{x.size() / xs.back(), xs.back()});
    return reshape(add(matmul(flat, w), b), std::move(out));
}

}  // namespace repast

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <vector>

#include "remo/errors.hpp"
#include "remo/kernels.hpp"
#include "remo/params.hpp"
#include "remo/tensor.hpp"

namespace remo {

template <class T>
struct Var {
    int id = -1;
};

// Reverse-mode tape. Rebuilt per forward pass; ops record a closure that
// scatters output gradient onto input gradients. Backward visits ops in
// exact reverse creation order.
template <class T>
class Graph {
public:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        bool needs_grad = false;
        std::function<void(Graph&)> back;
    };

    Var<T> constant(TensorT<T> v) { return push(std::move(v), false, nullptr); }

    // Leaf that wants a gradient but is not bound to a store (test inputs).
    Var<T> leaf(TensorT<T> v) { return push(std::move(v), true, nullptr); }

    Var<T> param(ParamStoreT<T>& store, const std::string& name) {
        auto* e = &store.at(name);
        auto it = param_cache_.find(e);
        if (it != param_cache_.end()) return Var<T>{it->second};
        Var<T> v = push(e->value, true, nullptr);
        bindings_.push_back({v.id, e});
        param_cache_[e] = v.id;
        return v;
    }

    // Parameter used as a constant; no gradient flows (frozen modules).
    Var<T> frozen(ParamStoreT<T>& store, const std::string& name) {
        auto* e = &store.at(name);
        auto it = frozen_cache_.find(e);
        if (it != frozen_cache_.end()) return Var<T>{it->second};
        Var<T> v = constant(e->value);
        frozen_cache_[e] = v.id;
        return v;
    }

    const TensorT<T>& val(Var<T> v) const { return nodes_[v.id].value; }
    TensorT<T>& grad(Var<T> v) { return nodes_[v.id].grad; }
    bool needs(Var<T> v) const { return nodes_[v.id].needs_grad; }

    double scalar(Var<T> v) const {
        if (val(v).numel() != 1) throw DataError("scalar() on tensor " + val(v).shape_str());
        return static_cast<double>(val(v).data[0]);
    }

    // Op constructor: the backward closure receives the op's own node id so
    // it can read the output gradient.
    Var<T> make(TensorT<T> value, bool needs_grad, std::function<void(Graph&, int)> back) {
        std::function<void(Graph&)> b = nullptr;
        const int id = static_cast<int>(nodes_.size());
        if (needs_grad && back)
            b = [back = std::move(back), id](Graph<T>& g) { back(g, id); };
        return push(std::move(value), needs_grad, std::move(b));
    }

    const TensorT<T>& out_grad(int id) const { return nodes_[id].grad; }

    // Accumulates into bound ParamStore gradients. Non-scalar loss is a
    // contract violation; non-finite loss means NaN crossed the tape boundary.
    void backward(Var<T> loss) {
        if (val(loss).numel() != 1)
            throw DataError("backward: loss must be scalar, got " + val(loss).shape_str());
        if (!std::isfinite(static_cast<double>(val(loss).data[0])))
            throw NumericError("backward: non-finite loss at tape boundary");
        for (int i = 0; i <= loss.id; ++i)
            if (nodes_[i].needs_grad) nodes_[i].grad = TensorT<T>(nodes_[i].value.shape, T(0));
        if (!nodes_[loss.id].needs_grad)
            throw DataError("backward: loss does not depend on any differentiable input");
        nodes_[loss.id].grad.data[0] = T(1);
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(*this);
        for (auto& [id, entry] : bindings_) {
            if (id > loss.id) continue;  // created after the loss node
            auto& g = nodes_[id].grad;
            for (size_t k = 0; k < g.data.size(); ++k) entry->grad.data[k] += g.data[k];
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    Var<T> push(TensorT<T> value, bool needs_grad, std::function<void(Graph&)> back) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.back = needs_grad ? std::move(back) : nullptr;
        nodes_.push_back(std::move(n));
        return Var<T>{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<int, typename ParamStoreT<T>::Entry*>> bindings_;
    std::unordered_map<const void*, int> param_cache_;
    std::unordered_map<const void*, int> frozen_cache_;
};

// ---------------------------------------------------------------------------
// Ops. Shapes validated at construction; every op records its backward rule.
// Elementwise loops stay serial; matmul/mix go through the kernels layer.
// All gradient accumulation is guarded by needs() since constants never get
// grad storage.
// ---------------------------------------------------------------------------
namespace ops {

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!same_shape(a.shape, b.shape))
        throw DataError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <class T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "add");
    TensorT<T> out(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        if (gr.needs(a)) {
            auto& da = gr.grad(a);
            for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i];
        }
        if (gr.needs(b)) {
            auto& db = gr.grad(b);
            for (size_t i = 0; i < dy.data.size(); ++i) db.data[i] += dy.data[i];
        }
    });
}

template <class T>
Var<T> sub(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "sub");
    TensorT<T> out(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] - bv.data[i];
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        if (gr.needs(a)) {
            auto& da = gr.grad(a);
            for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i];
        }
        if (gr.needs(b)) {
            auto& db = gr.grad(b);
            for (size_t i = 0; i < dy.data.size(); ++i) db.data[i] -= dy.data[i];
        }
    });
}

template <class T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "mul");
    TensorT<T> out(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &av2 = gr.val(a), &bv2 = gr.val(b);
        if (gr.needs(a)) {
            auto& da = gr.grad(a);
            for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i] * bv2.data[i];
        }
        if (gr.needs(b)) {
            auto& db = gr.grad(b);
            for (size_t i = 0; i < dy.data.size(); ++i) db.data[i] += dy.data[i] * av2.data[i];
        }
    });
}

// y = s*x + c, scalars baked in
template <class T>
Var<T> affine(Graph<T>& g, Var<T> x, double s, double c) {
    const auto& xv = g.val(x);
    TensorT<T> out(xv.shape);
    const T ts = static_cast<T>(s), tc = static_cast<T>(c);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ts * xv.data[i] + tc;
    return g.make(std::move(out), g.needs(x), [x, s](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        auto& dx = gr.grad(x);
        const T ts2 = static_cast<T>(s);
        for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += ts2 * dy.data[i];
    });
}

template <class T>
Var<T> scale(Graph<T>& g, Var<T> x, double s) { return affine(g, x, s, 0.0); }

// Broadcast a (1,C) row vector over the rows of x:(R,C).
template <class T>
Var<T> add_rowvec(Graph<T>& g, Var<T> x, Var<T> v) {
    const auto &xv = g.val(x), &vv = g.val(v);
    const int R = xv.rows(), C = xv.cols();
    if (static_cast<int>(vv.numel()) != C)
        throw DataError("add_rowvec: vector " + vv.shape_str() + " vs cols " + std::to_string(C));
    TensorT<T> out(xv.shape);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out.data[static_cast<size_t>(r) * C + c] = xv.data[static_cast<size_t>(r) * C + c] + vv.data[c];
    return g.make(std::move(out), g.needs(x) || g.needs(v), [x, v, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        if (gr.needs(x)) {
            auto& dx = gr.grad(x);
            for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
        }
        if (gr.needs(v)) {
            auto& dv = gr.grad(v);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) dv.data[c] += dy.data[static_cast<size_t>(r) * C + c];
        }
    });
}

template <class T>
Var<T> mul_rowvec(Graph<T>& g, Var<T> x, Var<T> v) {
    const auto &xv = g.val(x), &vv = g.val(v);
    const int R = xv.rows(), C = xv.cols();
    if (static_cast<int>(vv.numel()) != C)
        throw DataError("mul_rowvec: vector " + vv.shape_str() + " vs cols " + std::to_string(C));
    TensorT<T> out(xv.shape);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out.data[static_cast<size_t>(r) * C + c] = xv.data[static_cast<size_t>(r) * C + c] * vv.data[c];
    return g.make(std::move(out), g.needs(x) || g.needs(v), [x, v, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &xv2 = gr.val(x), &vv2 = gr.val(v);
        if (gr.needs(x)) {
            auto& dx = gr.grad(x);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    dx.data[static_cast<size_t>(r) * C + c] += dy.data[static_cast<size_t>(r) * C + c] * vv2.data[c];
        }
        if (gr.needs(v)) {
            auto& dv = gr.grad(v);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    dv.data[c] += dy.data[static_cast<size_t>(r) * C + c] * xv2.data[static_cast<size_t>(r) * C + c];
        }
    });
}

// Broadcast a (R,1) column vector over the columns of x:(R,C).
template <class T>
Var<T> add_colvec(Graph<T>& g, Var<T> x, Var<T> v) {
    const auto &xv = g.val(x), &vv = g.val(v);
    const int R = xv.rows(), C = xv.cols();
    if (static_cast<int>(vv.numel()) != R)
        throw DataError("add_colvec: vector " + vv.shape_str() + " vs rows " + std::to_string(R));
    TensorT<T> out(xv.shape);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out.data[static_cast<size_t>(r) * C + c] = xv.data[static_cast<size_t>(r) * C + c] + vv.data[r];
    return g.make(std::move(out), g.needs(x) || g.needs(v), [x, v, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        if (gr.needs(x)) {
            auto& dx = gr.grad(x);
            for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
        }
        if (gr.needs(v)) {
            auto& dv = gr.grad(v);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) dv.data[r] += dy.data[static_cast<size_t>(r) * C + c];
        }
    });
}

template <class T>
Var<T> mul_colvec(Graph<T>& g, Var<T> x, Var<T> v) {
    const auto &xv = g.val(x), &vv = g.val(v);
    const int R = xv.rows(), C = xv.cols();
    if (static_cast<int>(vv.numel()) != R)
        throw DataError("mul_colvec: vector " + vv.shape_str() + " vs rows " + std::to_string(R));
    TensorT<T> out(xv.shape);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out.data[static_cast<size_t>(r) * C + c] = xv.data[static_cast<size_t>(r) * C + c] * vv.data[r];
    return g.make(std::move(out), g.needs(x) || g.needs(v), [x, v, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &xv2 = gr.val(x), &vv2 = gr.val(v);
        if (gr.needs(x)) {
            auto& dx = gr.grad(x);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    dx.data[static_cast<size_t>(r) * C + c] += dy.data[static_cast<size_t>(r) * C + c] * vv2.data[r];
        }
        if (gr.needs(v)) {
            auto& dv = gr.grad(v);
            for (int r = 0; r < R; ++r) {
                T acc = T(0);
                for (int c = 0; c < C; ++c)
                    acc += dy.data[static_cast<size_t>(r) * C + c] * xv2.data[static_cast<size_t>(r) * C + c];
                dv.data[r] += acc;
            }
        }
    });
}

// Row r of x:(B*V,C) scaled by v[r % V]; used for skinning weights.
template <class T>
Var<T> mul_colvec_tiled(Graph<T>& g, Var<T> x, Var<T> v) {
    const auto &xv = g.val(x), &vv = g.val(v);
    const int R = xv.rows(), C = xv.cols(), V = static_cast<int>(vv.numel());
    if (V == 0 || R % V != 0)
        throw DataError("mul_colvec_tiled: rows " + std::to_string(R) + " not a multiple of " + std::to_string(V));
    TensorT<T> out(xv.shape);
    for (int r = 0; r < R; ++r) {
        const T w = vv.data[r % V];
        for (int c = 0; c < C; ++c)
            out.data[static_cast<size_t>(r) * C + c] = xv.data[static_cast<size_t>(r) * C + c] * w;
    }
    return g.make(std::move(out), g.needs(x) || g.needs(v), [x, v, R, C, V](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &xv2 = gr.val(x), &vv2 = gr.val(v);
        if (gr.needs(x)) {
            auto& dx = gr.grad(x);
            for (int r = 0; r < R; ++r) {
                const T w = vv2.data[r % V];
                for (int c = 0; c < C; ++c)
                    dx.data[static_cast<size_t>(r) * C + c] += dy.data[static_cast<size_t>(r) * C + c] * w;
            }
        }
        if (gr.needs(v)) {
            auto& dv = gr.grad(v);
            for (int r = 0; r < R; ++r) {
                T acc = T(0);
                for (int c = 0; c < C; ++c)
                    acc += dy.data[static_cast<size_t>(r) * C + c] * xv2.data[static_cast<size_t>(r) * C + c];
                dv.data[r % V] += acc;
            }
        }
    });
}

// y[b*V+v,:] = w[v] * t[b,:]  (per-joint translation term of LBS)
template <class T>
Var<T> outer_rows(Graph<T>& g, Var<T> t, Var<T> w) {
    const auto &tv = g.val(t), &wv = g.val(w);
    const int B = tv.rows(), C = tv.cols(), V = static_cast<int>(wv.numel());
    TensorT<T> out({B * V, C});
    for (int b = 0; b < B; ++b)
        for (int v = 0; v < V; ++v)
            for (int c = 0; c < C; ++c)
                out.data[(static_cast<size_t>(b) * V + v) * C + c] = wv.data[v] * tv.data[static_cast<size_t>(b) * C + c];
    return g.make(std::move(out), g.needs(t) || g.needs(w), [t, w, B, C, V](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &tv2 = gr.val(t), &wv2 = gr.val(w);
        if (gr.needs(t)) {
            auto& dt = gr.grad(t);
            for (int b = 0; b < B; ++b)
                for (int v = 0; v < V; ++v)
                    for (int c = 0; c < C; ++c)
                        dt.data[static_cast<size_t>(b) * C + c] += wv2.data[v] * dy.data[(static_cast<size_t>(b) * V + v) * C + c];
        }
        if (gr.needs(w)) {
            auto& dw = gr.grad(w);
            for (int v = 0; v < V; ++v) {
                T acc = T(0);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c)
                        acc += tv2.data[static_cast<size_t>(b) * C + c] * dy.data[(static_cast<size_t>(b) * V + v) * C + c];
                dw.data[v] += acc;
            }
        }
    });
}

template <class T>
Var<T> rowsum(Graph<T>& g, Var<T> x) {
    const auto& xv = g.val(x);
    const int R = xv.rows(), C = xv.cols();
    TensorT<T> out({R, 1});
    for (int r = 0; r < R; ++r) {
        T acc = T(0);
        for (int c = 0; c < C; ++c) acc += xv.data[static_cast<size_t>(r) * C + c];
        out.data[r] = acc;
    }
    return g.make(std::move(out), g.needs(x), [x, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        auto& dx = gr.grad(x);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) dx.data[static_cast<size_t>(r) * C + c] += dy.data[r];
    });
}

template <class T>
Var<T> sum(Graph<T>& g, Var<T> x) {
    const auto& xv = g.val(x);
    T acc = T(0);
    for (T v : xv.data) acc += v;
    TensorT<T> out({1, 1});
    out.data[0] = acc;
    return g.make(std::move(out), g.needs(x), [x](Graph<T>& gr, int self) {
        const T dy = gr.out_grad(self).data[0];
        auto& dx = gr.grad(x);
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy;
    });
}

template <class T>
Var<T> mean(Graph<T>& g, Var<T> x) {
    return scale(g, sum(g, x), 1.0 / static_cast<double>(g.val(x).numel()));
}

template <class T, class F, class DF>
Var<T> unary(Graph<T>& g, Var<T> x, F f, DF df) {
    const auto& xv = g.val(x);
    TensorT<T> out(xv.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(xv.data[i]);
    return g.make(std::move(out), g.needs(x), [x, df](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto& xv2 = gr.val(x);
        const auto& yv = gr.val(Var<T>{self});
        auto& dx = gr.grad(x);
        for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i] * df(xv2.data[i], yv.data[i]);
    });
}

template <class T>
Var<T> sigmoid(Graph<T>& g, Var<T> x) {
    return unary(g, x,
                 [](T v) { return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); },
                 [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh_(Graph<T>& g, Var<T> x) {
    return unary(g, x, [](T v) { return static_cast<T>(std::tanh(static_cast<double>(v))); },
                 [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> relu(Graph<T>& g, Var<T> x) {
    return unary(g, x, [](T v) { return v > T(0) ? v : T(0); },
                 [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> sqrt_(Graph<T>& g, Var<T> x) {
    return unary(g, x, [](T v) { return static_cast<T>(std::sqrt(static_cast<double>(v))); },
                 [](T, T y) { return static_cast<T>(0.5 / static_cast<double>(y)); });
}

template <class T>
Var<T> recip(Graph<T>& g, Var<T> x) {
    return unary(g, x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

template <class T>
Var<T> acos_(Graph<T>& g, Var<T> x) {
    return unary(g, x, [](T v) { return static_cast<T>(std::acos(static_cast<double>(v))); },
                 [](T v, T) {
                     return static_cast<T>(-1.0 / std::sqrt(std::max(1.0 - static_cast<double>(v) * static_cast<double>(v), 1e-12)));
                 });
}

template <class T>
Var<T> sin_(Graph<T>& g, Var<T> x) {
    return unary(g, x, [](T v) { return static_cast<T>(std::sin(static_cast<double>(v))); },
                 [](T v, T) { return static_cast<T>(std::cos(static_cast<double>(v))); });
}

// Pass-through gradient strictly inside [lo,hi], zero outside.
template <class T>
Var<T> clamp(Graph<T>& g, Var<T> x, double lo, double hi) {
    const T tlo = static_cast<T>(lo), thi = static_cast<T>(hi);
    return unary(g, x, [tlo, thi](T v) { return std::min(std::max(v, tlo), thi); },
                 [tlo, thi](T v, T) { return (v > tlo && v < thi) ? T(1) : T(0); });
}

template <class T>
Var<T> matmul(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    const int M = av.rows(), K = av.cols(), K2 = bv.rows(), N = bv.cols();
    if (K != K2)
        throw DataError("matmul: inner dimensions differ, " + av.shape_str() + " x " + bv.shape_str());
    TensorT<T> out({M, N});
    kernels::matmul(av.data.data(), bv.data.data(), out.data.data(), M, K, N);
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b, M, K, N](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &av2 = gr.val(a), &bv2 = gr.val(b);
        if (gr.needs(a)) {
            TensorT<T> da({M, K});
            kernels::matmul_nt(dy.data.data(), bv2.data.data(), da.data.data(), M, N, K);
            auto& ga = gr.grad(a);
            for (size_t i = 0; i < da.data.size(); ++i) ga.data[i] += da.data[i];
        }
        if (gr.needs(b)) {
            TensorT<T> db({K, N});
            kernels::matmul_tn(av2.data.data(), dy.data.data(), db.data.data(), K, M, N);
            auto& gb = gr.grad(b);
            for (size_t i = 0; i < db.data.size(); ++i) gb.data[i] += db.data[i];
        }
    });
}

// y = a * b^T for a:(M,K), b:(N,K) — attention scores.
template <class T>
Var<T> matmul_nt(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    const int M = av.rows(), K = av.cols(), N = bv.rows();
    if (K != bv.cols())
        throw DataError("matmul_nt: inner dimensions differ, " + av.shape_str() + " x " + bv.shape_str() + "^T");
    TensorT<T> out({M, N});
    kernels::matmul_nt(av.data.data(), bv.data.data(), out.data.data(), M, K, N);
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b, M, K, N](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &av2 = gr.val(a), &bv2 = gr.val(b);
        if (gr.needs(a)) {  // da = dy * b
            TensorT<T> da({M, K});
            kernels::matmul(dy.data.data(), bv2.data.data(), da.data.data(), M, N, K);
            auto& ga = gr.grad(a);
            for (size_t i = 0; i < da.data.size(); ++i) ga.data[i] += da.data[i];
        }
        if (gr.needs(b)) {  // db = dy^T * a
            TensorT<T> db({N, K});
            kernels::matmul_tn(dy.data.data(), av2.data.data(), db.data.data(), N, M, K);
            auto& gb = gr.grad(b);
            for (size_t i = 0; i < db.data.size(); ++i) gb.data[i] += db.data[i];
        }
    });
}

// Frame mixing: x is B groups of n_in rows; y[b,m,:] = sum_n w[m,n] x[b,n,:].
template <class T>
Var<T> mix(Graph<T>& g, Var<T> w, Var<T> x, int n_in) {
    const auto &wv = g.val(w), &xv = g.val(x);
    if (wv.cols() != n_in)
        throw DataError("mix: weight " + wv.shape_str() + " vs group " + std::to_string(n_in));
    const int R = xv.rows(), C = xv.cols();
    if (n_in <= 0 || R % n_in != 0)
        throw DataError("mix: rows " + std::to_string(R) + " not a multiple of group " + std::to_string(n_in));
    const int B = R / n_in, n_out = wv.rows();
    TensorT<T> out({B * n_out, C});
    kernels::mix_rows(wv.data.data(), xv.data.data(), out.data.data(), B, n_out, n_in, C);
    return g.make(std::move(out), g.needs(w) || g.needs(x), [w, x, B, n_out, n_in, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &wv2 = gr.val(w), &xv2 = gr.val(x);
        if (gr.needs(w)) {
            kernels::mix_rows_accum_w(dy.data.data(), xv2.data.data(), gr.grad(w).data.data(),
                                      B, n_out, n_in, C);
        }
        if (gr.needs(x)) {  // dx[b,n,:] = sum_m w[m,n] dy[b,m,:]
            TensorT<T> wt({n_in, n_out});
            for (int m = 0; m < n_out; ++m)
                for (int n = 0; n < n_in; ++n)
                    wt.data[static_cast<size_t>(n) * n_out + m] = wv2.data[static_cast<size_t>(m) * n_in + n];
            TensorT<T> dx({B * n_in, C});
            kernels::mix_rows(wt.data.data(), dy.data.data(), dx.data.data(), B, n_in, n_out, C);
            auto& gx = gr.grad(x);
            for (size_t i = 0; i < dx.data.size(); ++i) gx.data[i] += dx.data[i];
        }
    });
}

template <class T>
Var<T> concat_cols(Graph<T>& g, const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw DataError("concat_cols: empty input");
    const int R = g.val(xs[0]).rows();
    int C = 0;
    bool ng = false;
    for (auto v : xs) {
        if (g.val(v).rows() != R) throw DataError("concat_cols: row mismatch");
        C += g.val(v).cols();
        ng = ng || g.needs(v);
    }
    TensorT<T> out({R, C});
    int off = 0;
    for (auto v : xs) {
        const auto& xv = g.val(v);
        const int c = xv.cols();
        for (int r = 0; r < R; ++r)
            std::copy(xv.data.begin() + static_cast<size_t>(r) * c, xv.data.begin() + static_cast<size_t>(r + 1) * c,
                      out.data.begin() + static_cast<size_t>(r) * C + off);
        off += c;
    }
    auto xs_copy = xs;
    return g.make(std::move(out), ng, [xs_copy, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        int off2 = 0;
        for (auto v : xs_copy) {
            const int c = gr.val(v).cols();
            if (gr.needs(v)) {
                auto& dv = gr.grad(v);
                for (int r = 0; r < R; ++r)
                    for (int k = 0; k < c; ++k)
                        dv.data[static_cast<size_t>(r) * c + k] += dy.data[static_cast<size_t>(r) * C + off2 + k];
            }
            off2 += c;
        }
    });
}

template <class T>
Var<T> slice_cols(Graph<T>& g, Var<T> x, int c0, int len) {
    const auto& xv = g.val(x);
    const int R = xv.rows(), C = xv.cols();
    if (c0 < 0 || len <= 0 || c0 + len > C)
        throw DataError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c0 + len) + ") of " + xv.shape_str());
    TensorT<T> out({R, len});
    for (int r = 0; r < R; ++r)
        std::copy(xv.data.begin() + static_cast<size_t>(r) * C + c0,
                  xv.data.begin() + static_cast<size_t>(r) * C + c0 + len,
                  out.data.begin() + static_cast<size_t>(r) * len);
    return g.make(std::move(out), g.needs(x), [x, c0, len, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        auto& dx = gr.grad(x);
        for (int r = 0; r < R; ++r)
            for (int k = 0; k < len; ++k)
                dx.data[static_cast<size_t>(r) * C + c0 + k] += dy.data[static_cast<size_t>(r) * len + k];
    });
}

template <class T>
Var<T> concat_rows(Graph<T>& g, const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw DataError("concat_rows: empty input");
    const int C = g.val(xs[0]).cols();
    int R = 0;
    bool ng = false;
    for (auto v : xs) {
        if (g.val(v).cols() != C) throw DataError("concat_rows: column mismatch");
        R += g.val(v).rows();
        ng = ng || g.needs(v);
    }
    TensorT<T> out({R, C});
    size_t off = 0;
    for (auto v : xs) {
        const auto& xv = g.val(v);
        std::copy(xv.data.begin(), xv.data.end(), out.data.begin() + off);
        off += xv.data.size();
    }
    auto xs_copy = xs;
    return g.make(std::move(out), ng, [xs_copy](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        size_t off2 = 0;
        for (auto v : xs_copy) {
            const size_t n = gr.val(v).numel();
            if (gr.needs(v)) {
                auto& dv = gr.grad(v);
                for (size_t i = 0; i < n; ++i) dv.data[i] += dy.data[off2 + i];
            }
            off2 += n;
        }
    });
}

template <class T>
Var<T> slice_rows(Graph<T>& g, Var<T> x, int r0, int len) {
    const auto& xv = g.val(x);
    const int R = xv.rows(), C = xv.cols();
    if (r0 < 0 || len <= 0 || r0 + len > R)
        throw DataError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r0 + len) + ") of " + xv.shape_str());
    TensorT<T> out({len, C});
    std::copy(xv.data.begin() + static_cast<size_t>(r0) * C, xv.data.begin() + static_cast<size_t>(r0 + len) * C,
              out.data.begin());
    return g.make(std::move(out), g.needs(x), [x, r0, len, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        auto& dx = gr.grad(x);
        for (size_t i = 0; i < dy.data.size(); ++i) dx.data[static_cast<size_t>(r0) * C + i] += dy.data[i];
    });
}

// Rows picked by index; duplicates accumulate in backward (used by padding).
template <class T>
Var<T> gather_rows(Graph<T>& g, Var<T> x, std::vector<int> idx) {
    const auto& xv = g.val(x);
    const int R = xv.rows(), C = xv.cols();
    for (int i : idx)
        if (i < 0 || i >= R) throw DataError("gather_rows: index " + std::to_string(i) + " out of " + std::to_string(R));
    TensorT<T> out({static_cast<int>(idx.size()), C});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(xv.data.begin() + static_cast<size_t>(idx[r]) * C,
                  xv.data.begin() + static_cast<size_t>(idx[r] + 1) * C, out.data.begin() + r * C);
    return g.make(std::move(out), g.needs(x), [x, idx = std::move(idx), C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        auto& dx = gr.grad(x);
        for (size_t r = 0; r < idx.size(); ++r)
            for (int c = 0; c < C; ++c)
                dx.data[static_cast<size_t>(idx[r]) * C + c] += dy.data[r * C + c];
    });
}

// Copy with a new shape (same element count).
template <class T>
Var<T> reshape(Graph<T>& g, Var<T> x, std::vector<int> shape) {
    const auto& xv = g.val(x);
    if (TensorT<T>::numel_of(shape) != xv.numel())
        throw DataError("reshape: " + xv.shape_str() + " to " + TensorT<T>::shape_str(shape));
    TensorT<T> out(std::move(shape), xv.data);
    return g.make(std::move(out), g.needs(x), [x](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        auto& dx = gr.grad(x);
        for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
    });
}

// Per-row select: rows where mask!=0 come from a, the rest from b.
template <class T>
Var<T> select_rows(Graph<T>& g, const std::vector<char>& mask, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "select_rows");
    const int R = av.rows(), C = av.cols();
    if (static_cast<int>(mask.size()) != R) throw DataError("select_rows: mask size mismatch");
    TensorT<T> out(av.shape);
    for (int r = 0; r < R; ++r) {
        const auto& src = mask[r] ? av : bv;
        std::copy(src.data.begin() + static_cast<size_t>(r) * C, src.data.begin() + static_cast<size_t>(r + 1) * C,
                  out.data.begin() + static_cast<size_t>(r) * C);
    }
    return g.make(std::move(out), g.needs(a) || g.needs(b), [mask, a, b, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        for (int r = 0; r < R; ++r) {
            Var<T> tgt = mask[r] ? a : b;
            if (!gr.needs(tgt)) continue;
            auto& d = gr.grad(tgt);
            for (int c = 0; c < C; ++c) d.data[static_cast<size_t>(r) * C + c] += dy.data[static_cast<size_t>(r) * C + c];
        }
    });
}

// Numerically stable softmax over the last axis, fused backward.
template <class T>
Var<T> softmax_rows(Graph<T>& g, Var<T> x) {
    const auto& xv = g.val(x);
    const int R = xv.rows(), C = xv.cols();
    TensorT<T> out(xv.shape);
    for (int r = 0; r < R; ++r) {
        const T* xr = xv.data.data() + static_cast<size_t>(r) * C;
        T* yr = out.data.data() + static_cast<size_t>(r) * C;
        T mx = xr[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
        if (!std::isfinite(static_cast<double>(mx)))
            throw NumericError("softmax: non-finite input at row " + std::to_string(r));
        T s = T(0);
        for (int c = 0; c < C; ++c) {
            yr[c] = static_cast<T>(std::exp(static_cast<double>(xr[c] - mx)));
            s += yr[c];
        }
        for (int c = 0; c < C; ++c) yr[c] /= s;
    }
    return g.make(std::move(out), g.needs(x), [x, R, C](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto& yv = gr.val(Var<T>{self});
        auto& dx = gr.grad(x);
        for (int r = 0; r < R; ++r) {
            const T* yr = yv.data.data() + static_cast<size_t>(r) * C;
            const T* dyr = dy.data.data() + static_cast<size_t>(r) * C;
            T dot = T(0);
            for (int c = 0; c < C; ++c) dot += dyr[c] * yr[c];
            for (int c = 0; c < C; ++c)
                dx.data[static_cast<size_t>(r) * C + c] += yr[c] * (dyr[c] - dot);
        }
    });
}

// Mean absolute difference (L1). Sign subgradient; zero at ties.
template <class T>
Var<T> l1_loss(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "l1_loss");
    double acc = 0;
    for (size_t i = 0; i < av.data.size(); ++i)
        acc += std::abs(static_cast<double>(av.data[i]) - static_cast<double>(bv.data[i]));
    const double n = static_cast<double>(av.numel());
    TensorT<T> out({1, 1});
    out.data[0] = static_cast<T>(acc / n);
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b, n](Graph<T>& gr, int self) {
        const T dy = gr.out_grad(self).data[0];
        const auto &av2 = gr.val(a), &bv2 = gr.val(b);
        const T unit = static_cast<T>(static_cast<double>(dy) / n);
        for (size_t i = 0; i < av2.data.size(); ++i) {
            const T d = av2.data[i] - bv2.data[i];
            const T s = d > T(0) ? unit : (d < T(0) ? -unit : T(0));
            if (gr.needs(a)) gr.grad(a).data[i] += s;
            if (gr.needs(b)) gr.grad(b).data[i] -= s;
        }
    });
}

// Mean squared difference.
template <class T>
Var<T> mse_loss(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "mse_loss");
    double acc = 0;
    for (size_t i = 0; i < av.data.size(); ++i) {
        const double d = static_cast<double>(av.data[i]) - static_cast<double>(bv.data[i]);
        acc += d * d;
    }
    const double n = static_cast<double>(av.numel());
    TensorT<T> out({1, 1});
    out.data[0] = static_cast<T>(acc / n);
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b, n](Graph<T>& gr, int self) {
        const T dy = gr.out_grad(self).data[0];
        const auto &av2 = gr.val(a), &bv2 = gr.val(b);
        const double k = 2.0 * static_cast<double>(dy) / n;
        for (size_t i = 0; i < av2.data.size(); ++i) {
            const T d = static_cast<T>(k * (static_cast<double>(av2.data[i]) - static_cast<double>(bv2.data[i])));
            if (gr.needs(a)) gr.grad(a).data[i] += d;
            if (gr.needs(b)) gr.grad(b).data[i] -= d;
        }
    });
}

// Rowwise cross product for (R,3) tensors.
template <class T>
Var<T> cross_rows(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "cross_rows");
    if (av.cols() != 3) throw DataError("cross_rows: needs (R,3), got " + av.shape_str());
    const int R = av.rows();
    TensorT<T> out(av.shape);
    auto cross = [](const T* u, const T* v, T* w) {
        w[0] = u[1] * v[2] - u[2] * v[1];
        w[1] = u[2] * v[0] - u[0] * v[2];
        w[2] = u[0] * v[1] - u[1] * v[0];
    };
    for (int r = 0; r < R; ++r)
        cross(av.data.data() + 3 * static_cast<size_t>(r), bv.data.data() + 3 * static_cast<size_t>(r),
              out.data.data() + 3 * static_cast<size_t>(r));
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b, R, cross](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &av2 = gr.val(a), &bv2 = gr.val(b);
        // d/da (a x b) applied to dy is dy x b... with sign: grad_a = b x dy? Use components:
        // y0=a1 b2 - a2 b1 ; dL/da1 += dy0*b2 ; dL/da2 -= dy0*b1 ; etc. -> grad_a = b x dy_vec? check:
        // (b x dy)_1 = b2*dy3 - b3*dy2. dL/da1 = dy2*(-b3)?? safer: explicit accumulation below.
        for (int r = 0; r < R; ++r) {
            const T* u = av2.data.data() + 3 * static_cast<size_t>(r);
            const T* v = bv2.data.data() + 3 * static_cast<size_t>(r);
            const T* d = dy.data.data() + 3 * static_cast<size_t>(r);
            if (gr.needs(a)) {
                T* da = gr.grad(a).data.data() + 3 * static_cast<size_t>(r);
                da[0] += v[1] * d[2] - v[2] * d[1];
                da[1] += v[2] * d[0] - v[0] * d[2];
                da[2] += v[0] * d[1] - v[1] * d[0];
            }
            if (gr.needs(b)) {
                T* db = gr.grad(b).data.data() + 3 * static_cast<size_t>(r);
                db[0] += u[2] * d[1] - u[1] * d[2];
                db[1] += u[0] * d[2] - u[2] * d[0];
                db[2] += u[1] * d[0] - u[0] * d[1];
            }
        }
    });
}

// Rowwise 3x3 matrix product on (R,9) row-major matrices: C = A*B.
template <class T>
Var<T> matmul3_rows(Graph<T>& g, Var<T> a, Var<T> b) {
    const auto &av = g.val(a), &bv = g.val(b);
    check_same_shape(av, bv, "matmul3_rows");
    if (av.cols() != 9) throw DataError("matmul3_rows: needs (R,9), got " + av.shape_str());
    const int R = av.rows();
    TensorT<T> out(av.shape);
    for (int r = 0; r < R; ++r) {
        const T* A = av.data.data() + 9 * static_cast<size_t>(r);
        const T* B = bv.data.data() + 9 * static_cast<size_t>(r);
        T* C = out.data.data() + 9 * static_cast<size_t>(r);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                T acc = T(0);
                for (int k = 0; k < 3; ++k) acc += A[3 * i + k] * B[3 * k + j];
                C[3 * i + j] = acc;
            }
    }
    return g.make(std::move(out), g.needs(a) || g.needs(b), [a, b, R](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &av2 = gr.val(a), &bv2 = gr.val(b);
        for (int r = 0; r < R; ++r) {
            const T* A = av2.data.data() + 9 * static_cast<size_t>(r);
            const T* B = bv2.data.data() + 9 * static_cast<size_t>(r);
            const T* D = dy.data.data() + 9 * static_cast<size_t>(r);
            if (gr.needs(a)) {  // dA = D * B^T
                T* dA = gr.grad(a).data.data() + 9 * static_cast<size_t>(r);
                for (int i = 0; i < 3; ++i)
                    for (int k = 0; k < 3; ++k) {
                        T acc = T(0);
                        for (int j = 0; j < 3; ++j) acc += D[3 * i + j] * B[3 * k + j];
                        dA[3 * i + k] += acc;
                    }
            }
            if (gr.needs(b)) {  // dB = A^T * D
                T* dB = gr.grad(b).data.data() + 9 * static_cast<size_t>(r);
                for (int k = 0; k < 3; ++k)
                    for (int j = 0; j < 3; ++j) {
                        T acc = T(0);
                        for (int i = 0; i < 3; ++i) acc += A[3 * i + k] * D[3 * i + j];
                        dB[3 * k + j] += acc;
                    }
            }
        }
    });
}

// y[r] = R_{r/group} * v[r] for rot:(B,9), v:(B*group,3).
template <class T>
Var<T> rotate_rows(Graph<T>& g, Var<T> rot, Var<T> v, int group = 1) {
    const auto &rv = g.val(rot), &vv = g.val(v);
    if (rv.cols() != 9) throw DataError("rotate_rows: rot needs (B,9), got " + rv.shape_str());
    if (vv.cols() != 3) throw DataError("rotate_rows: v needs (R,3), got " + vv.shape_str());
    const int B = rv.rows(), R = vv.rows();
    if (group <= 0 || R != B * group)
        throw DataError("rotate_rows: rows " + std::to_string(R) + " vs " + std::to_string(B) + "x" + std::to_string(group));
    TensorT<T> out(vv.shape);
    for (int r = 0; r < R; ++r) {
        const T* M = rv.data.data() + 9 * static_cast<size_t>(r / group);
        const T* x = vv.data.data() + 3 * static_cast<size_t>(r);
        T* y = out.data.data() + 3 * static_cast<size_t>(r);
        for (int i = 0; i < 3; ++i) y[i] = M[3 * i] * x[0] + M[3 * i + 1] * x[1] + M[3 * i + 2] * x[2];
    }
    return g.make(std::move(out), g.needs(rot) || g.needs(v), [rot, v, R, group](Graph<T>& gr, int self) {
        const auto& dy = gr.out_grad(self);
        const auto &rv2 = gr.val(rot), &vv2 = gr.val(v);
        for (int r = 0; r < R; ++r) {
            const T* M = rv2.data.data() + 9 * static_cast<size_t>(r / group);
            const T* x = vv2.data.data() + 3 * static_cast<size_t>(r);
            const T* d = dy.data.data() + 3 * static_cast<size_t>(r);
            if (gr.needs(rot)) {
                T* dM = gr.grad(rot).data.data() + 9 * static_cast<size_t>(r / group);
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) dM[3 * i + j] += d[i] * x[j];
            }
            if (gr.needs(v)) {
                T* dx = gr.grad(v).data.data() + 3 * static_cast<size_t>(r);
                for (int j = 0; j < 3; ++j)
                    dx[j] += M[j] * d[0] + M[3 + j] * d[1] + M[6 + j] * d[2];
            }
        }
    });
}

}  // namespace ops
}  // namespace remo

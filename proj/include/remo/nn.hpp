#pragma once

#include <string>
#include <vector>

#include "remo/graph.hpp"

namespace remo::nn {

using ops::add;
using ops::add_rowvec;
using ops::matmul;

template <class T>
TensorT<T> uniform_init(Rng rng, std::vector<int> shape, double bound) {
    TensorT<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

// Every parameter draws from an rng forked on its own name, so values do not
// depend on registration order.
template <class T>
void register_linear(ParamStoreT<T>& s, const std::string& name, int in, int out,
                     const Rng& base, const std::vector<double>& bias_pattern = {}) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    s.add(name + ".w", uniform_init<T>(base.fork(name + ".w"), {in, out}, bound));
    TensorT<T> b({1, out}, T(0));
    if (!bias_pattern.empty()) {
        if (out % static_cast<int>(bias_pattern.size()) != 0)
            throw ConfigError("bias pattern does not tile " + name);
        for (int i = 0; i < out; ++i) b.data[i] = static_cast<T>(bias_pattern[i % bias_pattern.size()]);
    }
    s.add(name + ".b", std::move(b));
}

template <class T>
Var<T> linear(Graph<T>& g, ParamStoreT<T>& s, const std::string& name, Var<T> x, bool frozen = false) {
    Var<T> w = frozen ? g.frozen(s, name + ".w") : g.param(s, name + ".w");
    Var<T> b = frozen ? g.frozen(s, name + ".b") : g.param(s, name + ".b");
    return add_rowvec(g, matmul(g, x, w), b);
}

template <class T>
void register_layer_norm(ParamStoreT<T>& s, const std::string& name, int dim) {
    s.add(name + ".gain", TensorT<T>({1, dim}, T(1)));
    s.add(name + ".bias", TensorT<T>({1, dim}, T(0)));
}

// Zero-mean unit-variance over the last axis (eps added to the variance),
// then affine. Composite of primitive ops, so the gradient comes for free.
template <class T>
Var<T> layer_norm(Graph<T>& g, Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5) {
    const int C = g.val(x).cols();
    if (C < 1) throw DataError("layer_norm: empty rows");
    if (static_cast<int>(g.val(gain).numel()) != C || static_cast<int>(g.val(bias).numel()) != C)
        throw DataError("layer_norm: gain/bias length " + g.val(gain).shape_str() + " vs axis " + std::to_string(C));
    using namespace ops;
    Var<T> mu = scale(g, rowsum(g, x), 1.0 / C);
    Var<T> xc = add_colvec(g, x, scale(g, mu, -1.0));
    Var<T> var = scale(g, rowsum(g, mul(g, xc, xc)), 1.0 / C);
    Var<T> inv = recip(g, sqrt_(g, affine(g, var, 1.0, eps)));
    Var<T> y = mul_colvec(g, xc, inv);
    return add_rowvec(g, mul_rowvec(g, y, gain), bias);
}

template <class T>
Var<T> layer_norm(Graph<T>& g, ParamStoreT<T>& s, const std::string& name, Var<T> x, bool frozen = false) {
    Var<T> gain = frozen ? g.frozen(s, name + ".gain") : g.param(s, name + ".gain");
    Var<T> bias = frozen ? g.frozen(s, name + ".bias") : g.param(s, name + ".bias");
    return layer_norm(g, x, gain, bias);
}

// --- recurrent cells -------------------------------------------------------
// Gate blocks live in one fused weight per input so a cell is two matmuls.

template <class T>
void register_gru(ParamStoreT<T>& s, const std::string& name, int in, int hidden, const Rng& base) {
    const double bx = 1.0 / std::sqrt(static_cast<double>(in));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
    s.add(name + ".wx", uniform_init<T>(base.fork(name + ".wx"), {in, 3 * hidden}, bx));
    s.add(name + ".wh", uniform_init<T>(base.fork(name + ".wh"), {hidden, 3 * hidden}, bh));
    s.add(name + ".b", TensorT<T>({1, 3 * hidden}, T(0)));
}

// gates ordered [r, z, n]
template <class T>
Var<T> gru_step(Graph<T>& g, ParamStoreT<T>& s, const std::string& name, Var<T> x, Var<T> h,
                int hidden, bool frozen = false) {
    using namespace ops;
    Var<T> wx = frozen ? g.frozen(s, name + ".wx") : g.param(s, name + ".wx");
    Var<T> wh = frozen ? g.frozen(s, name + ".wh") : g.param(s, name + ".wh");
    Var<T> b = frozen ? g.frozen(s, name + ".b") : g.param(s, name + ".b");
    Var<T> gx = add_rowvec(g, matmul(g, x, wx), b);
    Var<T> gh = matmul(g, h, wh);
    Var<T> r = sigmoid(g, add(g, slice_cols(g, gx, 0, hidden), slice_cols(g, gh, 0, hidden)));
    Var<T> z = sigmoid(g, add(g, slice_cols(g, gx, hidden, hidden), slice_cols(g, gh, hidden, hidden)));
    Var<T> n = tanh_(g, add(g, slice_cols(g, gx, 2 * hidden, hidden),
                            mul(g, r, slice_cols(g, gh, 2 * hidden, hidden))));
    // h' = (1-z)*n + z*h
    return add(g, mul(g, affine(g, z, -1.0, 1.0), n), mul(g, z, h));
}

template <class T>
void register_lstm(ParamStoreT<T>& s, const std::string& name, int in, int hidden, const Rng& base) {
    const double bx = 1.0 / std::sqrt(static_cast<double>(in));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
    s.add(name + ".wx", uniform_init<T>(base.fork(name + ".wx"), {in, 4 * hidden}, bx));
    s.add(name + ".wh", uniform_init<T>(base.fork(name + ".wh"), {hidden, 4 * hidden}, bh));
    s.add(name + ".b", TensorT<T>({1, 4 * hidden}, T(0)));
}

template <class T>
struct LstmState {
    Var<T> h, c;
};

// gates ordered [i, f, g, o]
template <class T>
LstmState<T> lstm_step(Graph<T>& g, ParamStoreT<T>& s, const std::string& name, Var<T> x,
                       LstmState<T> st, int hidden, bool frozen = false) {
    using namespace ops;
    Var<T> wx = frozen ? g.frozen(s, name + ".wx") : g.param(s, name + ".wx");
    Var<T> wh = frozen ? g.frozen(s, name + ".wh") : g.param(s, name + ".wh");
    Var<T> b = frozen ? g.frozen(s, name + ".b") : g.param(s, name + ".b");
    Var<T> gates = add(g, add_rowvec(g, matmul(g, x, wx), b), matmul(g, st.h, wh));
    Var<T> i = sigmoid(g, slice_cols(g, gates, 0, hidden));
    Var<T> f = sigmoid(g, slice_cols(g, gates, hidden, hidden));
    Var<T> gg = tanh_(g, slice_cols(g, gates, 2 * hidden, hidden));
    Var<T> o = sigmoid(g, slice_cols(g, gates, 3 * hidden, hidden));
    Var<T> c = add(g, mul(g, f, st.c), mul(g, i, gg));
    Var<T> h = mul(g, o, tanh_(g, c));
    return {h, c};
}

// --- MLP heads -------------------------------------------------------------

template <class T>
void register_mlp(ParamStoreT<T>& s, const std::string& name, const std::vector<int>& dims,
                  const Rng& base, const std::vector<double>& final_bias_pattern = {}) {
    if (dims.size() < 2) throw ConfigError("mlp " + name + ": needs >= 2 dims");
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool last = (i + 2 == dims.size());
        register_linear(s, name + "." + std::to_string(i), dims[i], dims[i + 1], base,
                        last ? final_bias_pattern : std::vector<double>{});
    }
}

// ReLU between layers, linear output.
template <class T>
Var<T> mlp(Graph<T>& g, ParamStoreT<T>& s, const std::string& name, int n_layers, Var<T> x,
           bool frozen = false) {
    Var<T> h = x;
    for (int i = 0; i < n_layers; ++i) {
        h = linear(g, s, name + "." + std::to_string(i), h, frozen);
        if (i + 1 < n_layers) h = ops::relu(g, h);
    }
    return h;
}

}  // namespace remo::nn

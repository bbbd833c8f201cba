#pragma once

#include <functional>
#include <vector>

#include "remo/graph.hpp"
#include "remo/tensor.hpp"

namespace remo::testutil {

using BuildFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

// Central finite differences against the tape, in double. Rebuilds the graph
// for every probe, so it exercises exactly the forward path under test.
// Returns the worst relative error over all coordinates of all inputs.
inline double finite_diff_check(const BuildFn& build, std::vector<TensorT<double>> inputs,
                                double eps = 1e-5) {
    auto eval = [&](const std::vector<TensorT<double>>& ins) {
        Graph<double> g;
        std::vector<Var<double>> vars;
        vars.reserve(ins.size());
        for (const auto& t : ins) vars.push_back(g.constant(t));
        return g.scalar(build(g, vars));
    };

    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(g.leaf(t));
    g.backward(build(g, vars));

    double worst = 0;
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        const auto& analytic = g.grad(vars[vi]);
        for (size_t i = 0; i < inputs[vi].data.size(); ++i) {
            auto plus = inputs;
            plus[vi].data[i] += eps;
            auto minus = inputs;
            minus[vi].data[i] -= eps;
            const double fd = (eval(plus) - eval(minus)) / (2 * eps);
            const double an = analytic.data[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

inline TensorT<double> random_tensor(Rng& rng, std::vector<int> shape, double lo = -1, double hi = 1) {
    TensorT<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace remo::testutil

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "remo/errors.hpp"
#include "remo/tensor.hpp"

namespace remo {

// Named parameter tensors with gradients and Adam state.
// std::map keeps iteration order deterministic.
template <class T>
class ParamStoreT {
public:
    struct Entry {
        TensorT<T> value;
        TensorT<T> grad;
        bool trainable = true;
        TensorT<T> m, v;  // Adam moments, sized on first step
    };

    Entry& add(const std::string& name, TensorT<T> value, bool trainable = true) {
        if (entries_.count(name)) throw ConfigError("param '" + name + "' already registered");
        Entry e;
        e.grad = TensorT<T>(value.shape, T(0));
        e.value = std::move(value);
        e.trainable = trainable;
        return entries_.emplace(name, std::move(e)).first->second;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Entry& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown param '" + name + "'");
        return it->second;
    }
    const Entry& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown param '" + name + "'");
        return it->second;
    }

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    void zero_grads() {
        for (auto& [k, e] : entries_)
            std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
    }

    // Adam with bias correction; zeroes gradients afterwards.
    void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        if (lr <= 0) throw ConfigError("adam: learning rate must be positive, got " + std::to_string(lr));
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (auto& [k, e] : entries_) {
            if (!e.trainable) continue;
            if (e.m.data.empty()) {
                e.m = TensorT<T>(e.value.shape, T(0));
                e.v = TensorT<T>(e.value.shape, T(0));
            }
            for (size_t i = 0; i < e.value.data.size(); ++i) {
                const double g = static_cast<double>(e.grad.data[i]);
                const double m = beta1 * static_cast<double>(e.m.data[i]) + (1.0 - beta1) * g;
                const double v = beta2 * static_cast<double>(e.v.data[i]) + (1.0 - beta2) * g * g;
                e.m.data[i] = static_cast<T>(m);
                e.v.data[i] = static_cast<T>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                e.value.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
            std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
        }
    }

    int64_t step_count() const { return step_; }

    size_t scalar_count() const {
        size_t n = 0;
        for (auto& [k, e] : entries_) n += e.value.numel();
        return n;
    }

private:
    std::map<std::string, Entry> entries_;
    int64_t step_ = 0;
};

using ParamStore = ParamStoreT<float>;

}  // namespace remo

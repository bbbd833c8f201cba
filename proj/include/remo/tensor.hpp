#pragma once

#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "remo/errors.hpp"

namespace remo {

// Dense row-major tensor. float for training, double for gradient checks;
// everything downstream of the tape is templated on the scalar.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw DataError("tensor: data size " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw DataError("tensor: non-positive axis in shape " + shape_str(s));
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const {
        if (shape.size() < 2) return 1;
        int c = 1;
        for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    T at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << "]";
        return os.str();
    }
    std::string shape_str() const { return shape_str(shape); }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

inline bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

// Deterministic RNG. Distribution code is written out explicitly so streams
// do not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi_inclusive - lo + 1));
    }

    // Box-Muller, one value per call (the pair's second half is discarded to
    // keep the stream position independent of call parity).
    double normal() {
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Derive an independent stream, mixing in a label so module init order
    // does not matter.
    Rng fork(const std::string& label) const {
        uint64_t h = 1469598103934665603ULL;  // FNV-1a
        for (unsigned char c : label) { h ^= c; h *= 1099511628211ULL; }
        uint64_t s = state_ ^ (h + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
        return Rng(s);
    }

private:
    uint64_t state_;
};

}  // namespace remo

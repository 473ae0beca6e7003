#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace mood {

// Dense row-major tensor of doubles. Rank is dynamic (1..5 in practice).
// Double precision keeps finite-difference gradient checks well conditioned.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(size_t(numel_of(shape)), fill);
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    int64_t numel() const { return int64_t(data.size()); }
    int rank() const { return int(shape.size()); }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](int64_t i) { return data[size_t(i)]; }
    double operator[](int64_t i) const { return data[size_t(i)]; }

    double& at(int a) {
        assert(rank() == 1);
        return data[size_t(a)];
    }
    double& at(int a, int b) {
        assert(rank() == 2);
        return data[size_t(a) * shape[1] + b];
    }
    double& at(int a, int b, int c) {
        assert(rank() == 3);
        return data[(size_t(a) * shape[1] + b) * shape[2] + c];
    }
    double& at(int a, int b, int c, int d) {
        assert(rank() == 4);
        return data[((size_t(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    double& at(int a, int b, int c, int d, int e) {
        assert(rank() == 5);
        return data[(((size_t(a) * shape[1] + b) * shape[2] + c) * shape[3] + d) * shape[4] + e];
    }

    double at(int a) const { return const_cast<Tensor*>(this)->at(a); }
    double at(int a, int b) const { return const_cast<Tensor*>(this)->at(a, b); }
    double at(int a, int b, int c) const { return const_cast<Tensor*>(this)->at(a, b, c); }
    double at(int a, int b, int c, int d) const {
        return const_cast<Tensor*>(this)->at(a, b, c, d);
    }
    double at(int a, int b, int c, int d, int e) const {
        return const_cast<Tensor*>(this)->at(a, b, c, d, e);
    }
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace mood

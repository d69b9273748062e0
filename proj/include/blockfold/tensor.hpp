#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace blockfold::ad {

// Dense row-major matrix of doubles. Vectors are N x 1 or 1 x N.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor filled(int r, int c, double value) {
        Tensor t(r, c);
        for (double& x : t.v) x = value;
        return t;
    }
    static Tensor scalar(double value) {
        Tensor t(1, 1);
        t.v[0] = value;
        return t;
    }

    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }

    double* row_ptr(int i) { return v.data() + static_cast<std::size_t>(i) * cols; }
    const double* row_ptr(int i) const { return v.data() + static_cast<std::size_t>(i) * cols; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double value) {
        for (double& x : v) x = value;
    }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    assert(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        double d = a.v[i] - b.v[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

}  // namespace blockfold::ad

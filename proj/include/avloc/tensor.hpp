#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "avloc/common.hpp"

namespace avloc {

// Dense H x W map of doubles (localization maps, masks, metric inputs).
struct Grid {
    int h = 0, w = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return v.size(); }

    double max() const {
        double m = v.empty() ? 0.0 : v[0];
        for (const double x : v) m = std::max(m, x);
        return m;
    }
    double mean() const {
        if (v.empty()) return 0.0;
        double s = 0.0;
        for (const double x : v) s += x;
        return s / static_cast<double>(v.size());
    }
};

// Stack of K maps sharing one spatial grid (class-aware maps, sounding maps).
struct GridStack {
    int k = 0, h = 0, w = 0;
    std::vector<double> v;

    GridStack() = default;
    GridStack(int k_, int h_, int w_, double fill = 0.0)
        : k(k_), h(h_), w(w_), v(static_cast<std::size_t>(k_) * h_ * w_, fill) {}

    double& at(int ki, int y, int x) { return v[(static_cast<std::size_t>(ki) * h + y) * w + x]; }
    double at(int ki, int y, int x) const { return v[(static_cast<std::size_t>(ki) * h + y) * w + x]; }

    Grid slice(int ki) const {
        Grid g(h, w);
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(ki) * h * w, static_cast<std::size_t>(h) * w,
                    g.v.begin());
        return g;
    }
    void set_slice(int ki, const Grid& g) {
        if (g.h != h || g.w != w) throw ShapeError("GridStack::set_slice: shape mismatch");
        std::copy(g.v.begin(), g.v.end(), v.begin() + static_cast<std::ptrdiff_t>(ki) * h * w);
    }
    double max() const {
        double m = v.empty() ? 0.0 : v[0];
        for (const double x : v) m = std::max(m, x);
        return m;
    }
};

namespace nn {

// N x C x H x W tensor, row-major contiguous, double precision throughout.
// Double is deliberate: the gradient checks compare analytic derivatives
// against central finite differences at 1e-4 relative error, which float32
// cannot support.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

    std::size_t size() const { return v.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

    double& at(int i, int j, int y, int x) {
        return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
    }
    double at(int i, int j, int y, int x) const {
        return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
    }

    double* sample(int i) { return v.data() + static_cast<std::size_t>(i) * sample_size(); }
    const double* sample(int i) const { return v.data() + static_cast<std::size_t>(i) * sample_size(); }

    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

} // namespace nn
} // namespace avloc

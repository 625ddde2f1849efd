#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace codetect {

/// Dense channel-major (C,H,W) grid of doubles. The only tensor shape the
/// engine needs; everything desk-scale lives comfortably in one vector.
struct Tensor3 {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    double& at(int ci, int yi, int xi) {
        return data[(static_cast<std::size_t>(ci) * h + yi) * w + xi];
    }
    double at(int ci, int yi, int xi) const {
        return data[(static_cast<std::size_t>(ci) * h + yi) * w + xi];
    }

    std::size_t size() const { return data.size(); }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor3& o) const { return c == o.c && h == o.h && w == o.w; }
};

} // namespace codetect

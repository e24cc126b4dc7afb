#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sml/errors.hpp"

namespace sml {

// Square grayscale slice, row-major, intensities in [0, 1].
struct Image {
    int p = 0;
    std::vector<float> v;

    Image() = default;
    explicit Image(int side, float fill = 0.0f)
        : p(side), v(static_cast<std::size_t>(side) * side, fill) {}

    float at(int r, int c) const { return v[static_cast<std::size_t>(r) * p + c]; }
    float& at(int r, int c) { return v[static_cast<std::size_t>(r) * p + c]; }
};

// Derived images (means, baseline features) carry double precision.
struct DoubleImage {
    int p = 0;
    std::vector<double> v;

    DoubleImage() = default;
    explicit DoubleImage(int side, double fill = 0.0)
        : p(side), v(static_cast<std::size_t>(side) * side, fill) {}

    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * p + c]; }
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * p + c]; }
};

// Bilinear resampling on a corner-aligned grid: output sample i maps to input
// coordinate i * (q - 1) / (p - 1). A single-sample output axis collapses to
// the input center. Output never leaves the input value range, and q == p is
// an exact copy.
inline Image resize_bilinear(const Image& src, int p) {
    if (src.p < 1 || p < 1) throw InvalidArgument("resize_bilinear: sides must be >= 1");
    const int q = src.p;
    if (q == p) return src;
    Image out(p);
    auto src_coord = [&](int i) -> double {
        if (p == 1) return (q - 1) / 2.0;
        return static_cast<double>(i) * (q - 1) / (p - 1);
    };
    for (int r = 0; r < p; ++r) {
        double y = src_coord(r);
        int y0 = static_cast<int>(y);
        int y1 = std::min(y0 + 1, q - 1);
        double fy = y - y0;
        for (int c = 0; c < p; ++c) {
            double x = src_coord(c);
            int x0 = static_cast<int>(x);
            int x1 = std::min(x0 + 1, q - 1);
            double fx = x - x0;
            double top = (1.0 - fx) * src.at(y0, x0) + fx * src.at(y0, x1);
            double bot = (1.0 - fx) * src.at(y1, x0) + fx * src.at(y1, x1);
            out.at(r, c) = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
    }
    return out;
}

// Column-major vectorization ("stack the columns"): coordinate c*p + r holds
// pixel (r, c). This is the coordinate order used by the pixel-screening sets.
inline std::vector<double> vectorize_columns(const DoubleImage& img) {
    const int p = img.p;
    std::vector<double> out(static_cast<std::size_t>(p) * p);
    for (int c = 0; c < p; ++c)
        for (int r = 0; r < p; ++r)
            out[static_cast<std::size_t>(c) * p + r] = img.at(r, c);
    return out;
}

inline std::vector<double> vectorize_columns(const Image& img) {
    const int p = img.p;
    std::vector<double> out(static_cast<std::size_t>(p) * p);
    for (int c = 0; c < p; ++c)
        for (int r = 0; r < p; ++r)
            out[static_cast<std::size_t>(c) * p + r] = img.at(r, c);
    return out;
}

inline DoubleImage to_double(const Image& img) {
    DoubleImage out(img.p);
    for (std::size_t i = 0; i < img.v.size(); ++i) out.v[i] = img.v[i];
    return out;
}

}  // namespace sml

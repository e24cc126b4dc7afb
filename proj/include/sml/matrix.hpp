#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sml/errors.hpp"

namespace sml {

// Dense row-major matrix of doubles; rows are observations.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

    void set_row(std::size_t r, std::span<const double> values) {
        if (values.size() != cols) throw InvalidArgument("set_row: width mismatch");
        std::copy(values.begin(), values.end(), data.begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
};

// Dense symmetric matrix, row-major storage of the full square.
struct SymMatrix {
    int n = 0;
    std::vector<double> a;

    SymMatrix() = default;
    explicit SymMatrix(int size) : n(size), a(static_cast<std::size_t>(size) * size, 0.0) {}

    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
};

}  // namespace sml

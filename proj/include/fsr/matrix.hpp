#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace fsr {

// Dense row-major matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return data[static_cast<std::size_t>(i) * cols + j];
    }
    double operator()(int i, int j) const {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return data[static_cast<std::size_t>(i) * cols + j];
    }

    double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix& o) const = default;
};

} // namespace fsr

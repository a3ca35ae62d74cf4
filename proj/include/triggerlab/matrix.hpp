#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace triggerlab {

/// Dense row-major matrix of doubles. The whole pipeline works on small
/// [rows x 3] blocks, so this stays deliberately minimal.
struct Matrix {
    long rows = 0;
    long cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(long r, long c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    }

    double& operator()(long r, long c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(long r, long c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    double* row(long r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(long r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

    long size() const { return rows * cols; }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Matrix& other) const {
        return rows == other.rows && cols == other.cols && data == other.data;
    }
};

/// Copies rows [start, start+count) into a new matrix.
inline Matrix slice_rows(const Matrix& m, long start, long count) {
    if (start < 0 || count < 0 || start + count > m.rows)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") out of bounds for " +
                                    std::to_string(m.rows) + " rows");
    Matrix out(count, m.cols);
    std::copy(m.row(start), m.row(start) + count * m.cols, out.data.begin());
    return out;
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

}  // namespace triggerlab

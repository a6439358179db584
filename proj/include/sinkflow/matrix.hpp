#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "sinkflow/errors.hpp"

namespace sinkflow {

// Dense row-major matrix of doubles. Small and unclever on purpose: every
// numeric routine in this library works on batches of at most a few thousand
// rows, so a flat vector plus index arithmetic is all we need.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_) throw SchemaError("matrix initializer rows have unequal length");
            for (double v : row) data_.push_back(v);
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// out += a * b, where a is (n, k) and b is (k, m). The ikj ordering keeps the
// inner loop contiguous in both b and out.
inline void matmul_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols())
        throw SchemaError("matmul shape mismatch");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* out_row = out.row_ptr(i);
        const double* a_row = a.row_ptr(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a_row[p];
            if (av == 0.0) continue;
            const double* b_row = b.row_ptr(p);
            for (std::size_t j = 0; j < m; ++j) out_row[j] += av * b_row[j];
        }
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols(), 0.0);
    matmul_accumulate(a, b, out);
    return out;
}

// out += a^T * b, where a is (k, n) and b is (k, m).
inline void matmul_at_b_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols())
        throw SchemaError("matmul shape mismatch");
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    for (std::size_t p = 0; p < k; ++p) {
        const double* a_row = a.row_ptr(p);
        const double* b_row = b.row_ptr(p);
        for (std::size_t i = 0; i < n; ++i) {
            const double av = a_row[i];
            if (av == 0.0) continue;
            double* out_row = out.row_ptr(i);
            for (std::size_t j = 0; j < m; ++j) out_row[j] += av * b_row[j];
        }
    }
}

// out += a * b^T, where a is (n, k) and b is (m, k).
inline void matmul_a_bt_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows())
        throw SchemaError("matmul shape mismatch");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* a_row = a.row_ptr(i);
        double* out_row = out.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* b_row = b.row_ptr(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
            out_row[j] += acc;
        }
    }
}

}  // namespace sinkflow

#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "collab/errors.hpp"
#include "collab/rng.hpp"

namespace collab {

/// Dense real matrix, row-major, 64-bit floats.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix random(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

/// Standard product; requires a.cols == b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

/// Row-wise softmax with per-row max subtraction. Each output row sums to 1.
Matrix softmax_rows(const Matrix& a);

/// Column-wise Kronecker product; requires a.cols == b.cols.
/// Column j is kron(a_col_j, b_col_j) with a-major element order.
Matrix khatri_rao(const Matrix& a, const Matrix& b);

/// Elementwise product; shapes must match.
Matrix hadamard(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// y = a x, with x of length a.cols.
std::vector<double> matvec(const Matrix& a, const std::vector<double>& x);

/// Copy of columns [c0, c1).
Matrix columns(const Matrix& a, std::size_t c0, std::size_t c1);

/// Write block into columns [c0, c0 + block.cols) of a.
void set_columns(Matrix& a, std::size_t c0, const Matrix& block);

/// Add v to every row of a; v.size() must equal a.cols.
void add_row_broadcast(Matrix& a, const std::vector<double>& v);

} // namespace collab

#pragma once

#include <cstddef>
#include <vector>

#include "collab/matrix.hpp"

namespace collab {

/// Dense 3rd-order tensor, contiguous storage with index order (i, j, k),
/// k fastest: element (i, j, k) lives at ((i * dim1) + j) * dim2 + k.
class Tensor3 {
public:
    Tensor3() = default;

    Tensor3(std::size_t dim0, std::size_t dim1, std::size_t dim2, double fill = 0.0)
        : dim0_(dim0), dim1_(dim1), dim2_(dim2), data_(dim0 * dim1 * dim2, fill) {}

    std::size_t dim0() const { return dim0_; }
    std::size_t dim1() const { return dim1_; }
    std::size_t dim2() const { return dim2_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * dim1_ + j) * dim2_ + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * dim1_ + j) * dim2_ + k];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    friend bool operator==(const Tensor3& a, const Tensor3& b) {
        return a.dim0_ == b.dim0_ && a.dim1_ == b.dim1_ && a.dim2_ == b.dim2_ &&
               a.data_ == b.data_;
    }

private:
    std::size_t dim0_ = 0;
    std::size_t dim1_ = 0;
    std::size_t dim2_ = 0;
    std::vector<double> data_;
};

/// Mode-n matricization, Kolda-Bader convention. Mode-n fibers become columns:
///   mode 0: dim0 x (dim1*dim2), element (i,j,k) -> (i, j + k*dim1)
///   mode 1: dim1 x (dim0*dim2), element (i,j,k) -> (j, i + k*dim0)
///   mode 2: dim2 x (dim0*dim1), element (i,j,k) -> (k, i + j*dim0)
Matrix unfold(const Tensor3& t, int mode);

/// Inverse of unfold for the given mode and target dimensions.
Tensor3 fold(const Matrix& m, int mode, std::size_t dim0, std::size_t dim1, std::size_t dim2);

double frobenius_norm(const Tensor3& t);
double max_abs_diff(const Tensor3& a, const Tensor3& b);

} // namespace collab

#pragma once

#include <vector>

#include "collab/matrix.hpp"

namespace collab {

/// Thin SVD a = u * diag(values) * v^T with values sorted non-increasing.
/// u is rows x r and v is cols x r where r = min(rows, cols). Columns of u
/// (resp. v) whose singular value is exactly zero are left as zero vectors.
struct SvdResult {
    Matrix u;
    std::vector<double> values;
    Matrix v;
};

/// One-sided Jacobi SVD. Relative accuracy around machine precision on
/// well-conditioned inputs; throws NumericalError if the sweep cap
/// (100 * min(rows, cols)) is reached without convergence.
SvdResult svd(const Matrix& a);

/// Singular values only, non-negative and non-increasing, length min(rows, cols).
std::vector<double> svd_values(const Matrix& a);

/// Moore-Penrose pseudo-inverse. Singular values below rcond * sigma_max are
/// treated as zero. rcond must be positive.
Matrix pinv(const Matrix& a, double rcond = 1e-12);

} // namespace collab

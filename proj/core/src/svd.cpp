#include "collab/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace collab {

namespace {

// One-sided Jacobi on a tall matrix b (rows >= cols): plane rotations applied
// from the right orthogonalize the columns of b. On exit b = u * diag(sigma)
// and v accumulates the rotations, so that input = b_out * v^T.
void jacobi_orthogonalize(Matrix& b, Matrix& v) {
    const std::size_t m = b.rows();
    const std::size_t n = b.cols();
    // Rotation threshold relative to the column norms involved.
    const double tol = 1e-15;
    const std::size_t max_sweeps = 100 * n;

    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b(i, p);
                    const double bq = b(i, q);
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;

                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b(i, p);
                    const double bq = b(i, q);
                    b(i, p) = c * bp - s * bq;
                    b(i, q) = s * bp + c * bq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p);
                    const double vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) return;
    }
    throw NumericalError("svd: Jacobi sweeps did not converge after " +
                         std::to_string(max_sweeps) + " sweeps");
}

SvdResult svd_tall(const Matrix& a) {
    Matrix b = a;
    Matrix v = Matrix::identity(a.cols());
    jacobi_orthogonalize(b, v);

    const std::size_t m = b.rows();
    const std::size_t n = b.cols();
    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += b(i, j) * b(i, j);
        norms[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult out;
    out.values.resize(n);
    out.u = Matrix(m, n);
    out.v = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        const double sigma = norms[src];
        out.values[j] = sigma;
        if (sigma > 0.0) {
            for (std::size_t i = 0; i < m; ++i) out.u(i, j) = b(i, src) / sigma;
        }
        for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v(i, src);
    }
    return out;
}

} // namespace

SvdResult svd(const Matrix& a) {
    if (a.rows() >= a.cols()) return svd_tall(a);
    SvdResult t = svd_tall(transpose(a));
    return SvdResult{std::move(t.v), std::move(t.values), std::move(t.u)};
}

std::vector<double> svd_values(const Matrix& a) { return svd(a).values; }

Matrix pinv(const Matrix& a, double rcond) {
    if (!(rcond > 0.0)) throw ArgumentError("pinv: rcond must be positive");
    SvdResult s = svd(a);
    const double cutoff = s.values.empty() ? 0.0 : rcond * s.values.front();
    // a+ = sum_j v_j u_j^T / sigma_j over retained components
    Matrix out(a.cols(), a.rows());
    for (std::size_t j = 0; j < s.values.size(); ++j) {
        const double sigma = s.values[j];
        if (sigma <= cutoff || sigma == 0.0) continue;
        const double inv = 1.0 / sigma;
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double vij = s.v(i, j) * inv;
            if (vij == 0.0) continue;
            for (std::size_t k = 0; k < a.rows(); ++k) out(i, k) += vij * s.u(k, j);
        }
    }
    return out;
}

} // namespace collab

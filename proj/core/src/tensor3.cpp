#include "collab/tensor3.hpp"

#include <cmath>
#include <string>

namespace collab {

Matrix unfold(const Tensor3& t, int mode) {
    const std::size_t d0 = t.dim0(), d1 = t.dim1(), d2 = t.dim2();
    Matrix out;
    switch (mode) {
        case 0:
            out = Matrix(d0, d1 * d2);
            for (std::size_t i = 0; i < d0; ++i)
                for (std::size_t j = 0; j < d1; ++j)
                    for (std::size_t k = 0; k < d2; ++k) out(i, j + k * d1) = t(i, j, k);
            return out;
        case 1:
            out = Matrix(d1, d0 * d2);
            for (std::size_t i = 0; i < d0; ++i)
                for (std::size_t j = 0; j < d1; ++j)
                    for (std::size_t k = 0; k < d2; ++k) out(j, i + k * d0) = t(i, j, k);
            return out;
        case 2:
            out = Matrix(d2, d0 * d1);
            for (std::size_t i = 0; i < d0; ++i)
                for (std::size_t j = 0; j < d1; ++j)
                    for (std::size_t k = 0; k < d2; ++k) out(k, i + j * d0) = t(i, j, k);
            return out;
        default:
            throw ArgumentError("unfold: mode must be 0, 1 or 2, got " + std::to_string(mode));
    }
}

Tensor3 fold(const Matrix& m, int mode, std::size_t dim0, std::size_t dim1, std::size_t dim2) {
    if (mode < 0 || mode > 2) {
        throw ArgumentError("fold: mode must be 0, 1 or 2, got " + std::to_string(mode));
    }
    const std::size_t mode_dim = mode == 0 ? dim0 : (mode == 1 ? dim1 : dim2);
    if (m.rows() != mode_dim || m.size() != dim0 * dim1 * dim2) {
        throw ShapeError("fold: matrix shape does not match target dimensions");
    }
    Tensor3 t(dim0, dim1, dim2);
    for (std::size_t i = 0; i < dim0; ++i)
        for (std::size_t j = 0; j < dim1; ++j)
            for (std::size_t k = 0; k < dim2; ++k) {
                switch (mode) {
                    case 0: t(i, j, k) = m(i, j + k * dim1); break;
                    case 1: t(i, j, k) = m(j, i + k * dim0); break;
                    default: t(i, j, k) = m(k, i + j * dim0); break;
                }
            }
    return t;
}

double frobenius_norm(const Tensor3& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t.data()[i] * t.data()[i];
    return std::sqrt(s);
}

double max_abs_diff(const Tensor3& a, const Tensor3& b) {
    if (a.dim0() != b.dim0() || a.dim1() != b.dim1() || a.dim2() != b.dim2()) {
        throw ShapeError("max_abs_diff: tensor dimensions disagree");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

} // namespace collab

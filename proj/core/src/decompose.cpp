#include "collab/decompose.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "collab/rng.hpp"
#include "collab/svd.hpp"

namespace collab {

namespace {

// Gram matrix a^T a, rank x rank.
Matrix gram(const Matrix& a) {
    Matrix g(a.cols(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p)
            for (std::size_t q = 0; q < a.cols(); ++q) g(p, q) += r[p] * r[q];
    }
    return g;
}

// One ALS sub-step: factor <- unfolding * khatri_rao(c, b) * pinv(c^T c . b^T b).
Matrix als_update(const Matrix& unfolding, const Matrix& c, const Matrix& b) {
    const Matrix kr = khatri_rao(c, b);
    const Matrix g = hadamard(gram(c), gram(b));
    return matmul(matmul(unfolding, kr), pinv(g));
}

// Normalize columns of factor to unit 2-norm, absorbing the weights into the
// matching columns of head_factor. Zero columns stay zero.
void normalize_into(Matrix& factor, Matrix& head_factor) {
    for (std::size_t r = 0; r < factor.cols(); ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < factor.rows(); ++i) s += factor(i, r) * factor(i, r);
        const double norm = std::sqrt(s);
        if (norm == 0.0) continue;
        for (std::size_t i = 0; i < factor.rows(); ++i) factor(i, r) /= norm;
        for (std::size_t i = 0; i < head_factor.rows(); ++i) head_factor(i, r) *= norm;
    }
}

// Leading left singular vectors of the mode unfolding, padded with seeded
// uniform columns when the unfolding has fewer than `rank` of them.
Matrix hosvd_factor(const Tensor3& t, int mode, std::size_t rank, Rng& rng) {
    const Matrix unf = unfold(t, mode);
    const SvdResult s = svd(unf);
    Matrix f(unf.rows(), rank);
    const std::size_t available = std::min(rank, s.values.size());
    for (std::size_t r = 0; r < available; ++r)
        for (std::size_t i = 0; i < f.rows(); ++i) f(i, r) = s.u(i, r);
    for (std::size_t r = available; r < rank; ++r)
        for (std::size_t i = 0; i < f.rows(); ++i) f(i, r) = rng.uniform(-0.5, 0.5);
    return f;
}

} // namespace

StackedQKTensor stack_qk(const ConcatMHAParams& params) {
    params.validate();
    const AttentionDims& d = params.dims;
    Tensor3 t(d.n_heads, d.d_in, d.d_in);
    for (std::size_t i = 0; i < d.n_heads; ++i) {
        const Matrix slice = matmul(params.w_q_head(i), transpose(params.w_k_head(i)));
        for (std::size_t j = 0; j < d.d_in; ++j)
            for (std::size_t k = 0; k < d.d_in; ++k) t(i, j, k) = slice(j, k);
    }
    return StackedQKTensor{std::move(t)};
}

Tensor3 cp_reconstruct(const CPFactors& f) {
    // Reassemble via the mode-0 identity: unfold_0 = A (C kr B)^T.
    const Matrix unf0 = matmul(f.factor_heads, transpose(khatri_rao(f.factor_k, f.factor_q)));
    return fold(unf0, 0, f.factor_heads.rows(), f.factor_q.rows(), f.factor_k.rows());
}

CpResult cp_als(const Tensor3& t, const ALSConfig& cfg) {
    if (cfg.rank < 1) throw ArgumentError("cp_als: rank must be >= 1");
    if (!(cfg.tol > 0.0)) throw ArgumentError("cp_als: tol must be positive");
    if (cfg.max_iters < 1) throw ArgumentError("cp_als: max_iters must be >= 1");

    const std::size_t d0 = t.dim0(), d1 = t.dim1(), d2 = t.dim2();
    const double t_norm = frobenius_norm(t);

    CpResult res;
    res.factors.rank = cfg.rank;
    if (t_norm == 0.0) {
        res.factors.factor_heads = Matrix(d0, cfg.rank);
        res.factors.factor_q = Matrix(d1, cfg.rank);
        res.factors.factor_k = Matrix(d2, cfg.rank);
        return res;
    }

    Rng rng(cfg.rng_seed);
    Matrix a, b, c;
    if (cfg.init == CpInit::RandomUniform) {
        a = Matrix::random(rng, d0, cfg.rank, -0.5, 0.5);
        b = Matrix::random(rng, d1, cfg.rank, -0.5, 0.5);
        c = Matrix::random(rng, d2, cfg.rank, -0.5, 0.5);
    } else {
        a = hosvd_factor(t, 0, cfg.rank, rng);
        b = hosvd_factor(t, 1, cfg.rank, rng);
        c = hosvd_factor(t, 2, cfg.rank, rng);
    }

    const Matrix unf0 = unfold(t, 0);
    const Matrix unf1 = unfold(t, 1);
    const Matrix unf2 = unfold(t, 2);

    double prev_err = -1.0;
    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        a = als_update(unf0, c, b);
        b = als_update(unf1, c, a);
        c = als_update(unf2, b, a);
        normalize_into(b, a);
        normalize_into(c, a);

        const Matrix recon0 = matmul(a, transpose(khatri_rao(c, b)));
        const double err = frobenius_norm(recon0 - unf0) / t_norm;
        res.error_history.push_back(err);
        res.iters = iter + 1;

        if (prev_err >= 0.0 && prev_err - err < cfg.tol) break;
        prev_err = err;
    }

    res.factors.factor_heads = std::move(a);
    res.factors.factor_q = std::move(b);
    res.factors.factor_k = std::move(c);
    res.rel_error = res.error_history.back();
    return res;
}

CollabMHAParams exact_expand(const ConcatMHAParams& params) {
    params.validate();
    CollabMHAParams c;
    c.dims = params.dims;
    c.d_k_shared = params.dims.d_k_total;
    c.w_q_shared = params.w_q;
    c.w_k_shared = params.w_k;
    c.mixing = MixingMatrix::blocks_of_one(params.dims.n_heads, params.dims.d_k_per_head);
    c.content_bias = fold_key_bias(params);
    c.w_v = params.w_v;
    c.w_o = params.w_o;
    return c;
}

ReparamResult reparametrize(const ConcatMHAParams& params, const ALSConfig& cfg) {
    const StackedQKTensor stacked = stack_qk(params);
    CpResult fit = cp_als(stacked.t, cfg);

    CollabMHAParams c;
    c.dims = params.dims;
    c.d_k_shared = cfg.rank;
    c.w_q_shared = std::move(fit.factors.factor_q);
    c.w_k_shared = std::move(fit.factors.factor_k);
    c.mixing = MixingMatrix{std::move(fit.factors.factor_heads), MixingKind::Dense};
    c.content_bias = fold_key_bias(params);
    c.w_v = params.w_v;
    c.w_o = params.w_o;
    c.validate();
    return ReparamResult{std::move(c), fit.rel_error, fit.iters};
}

ReparamResult reparametrize_exact(const ConcatMHAParams& params) {
    return ReparamResult{exact_expand(params), 0.0, 0};
}

double reconstruction_error(const StackedQKTensor& t, const CPFactors& f) {
    if (f.factor_heads.rows() != t.t.dim0() || f.factor_q.rows() != t.t.dim1() ||
        f.factor_k.rows() != t.t.dim2()) {
        throw ShapeError("reconstruction_error: factor dimensions disagree with tensor");
    }
    const double t_norm = frobenius_norm(t.t);
    const Matrix recon0 = matmul(f.factor_heads, transpose(khatri_rao(f.factor_k, f.factor_q)));
    const double diff = frobenius_norm(recon0 - unfold(t.t, 0));
    if (t_norm == 0.0) {
        return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return diff / t_norm;
}

} // namespace collab

#pragma once

#include <cstdint>
#include <vector>

#include "collab/attention.hpp"
#include "collab/tensor3.hpp"

namespace collab {

/// Stack of the per-head bilinear forms: slice i = W_Q^(i) W_K^(i)^T,
/// dims (n_heads, d_in, d_in).
struct StackedQKTensor {
    Tensor3 t;
};

StackedQKTensor stack_qk(const ConcatMHAParams& params);

/// Canonical (CP) factors of a 3rd-order tensor: t ~ [[factor_heads,
/// factor_q, factor_k]] with t(i,j,k) = sum_r heads(i,r) q(j,r) k(k,r).
/// Per-component weights are absorbed into the factor columns; no separate
/// core is kept.
struct CPFactors {
    std::size_t rank = 0;
    Matrix factor_heads;  // dim0 x rank (the mixing matrix for attention stacks)
    Matrix factor_q;      // dim1 x rank
    Matrix factor_k;      // dim2 x rank
};

Tensor3 cp_reconstruct(const CPFactors& f);

enum class CpInit { RandomUniform, Hosvd };

struct ALSConfig {
    std::size_t rank = 1;
    double tol = 1e-6;  // stop when the relative-error improvement per iteration drops below this
    std::size_t max_iters = 200;
    CpInit init = CpInit::RandomUniform;
    std::uint64_t rng_seed = 0;
};

struct CpResult {
    CPFactors factors;
    double rel_error = 0.0;  // |t - reconstruction|_F / |t|_F
    std::size_t iters = 0;
    std::vector<double> error_history;  // rel_error after each iteration
};

/// Alternating least squares fit of a rank-R CP decomposition. Each sub-step
/// is a least-squares solve, so the reconstruction error is non-increasing
/// across iterations. An all-zero tensor yields zero factors and error 0.
CpResult cp_als(const Tensor3& t, const ALSConfig& cfg);

/// Lossless conversion of a concatenated layer into collaborative form with
/// d_k_shared = d_k_total: shared matrices are the column-concatenated
/// per-head projections and the mixing matrix is blocks-of-one.
CollabMHAParams exact_expand(const ConcatMHAParams& params);

struct ReparamResult {
    CollabMHAParams params;
    double rel_error = 0.0;
    std::size_t iters = 0;
};

/// Convert a trained concatenated layer into collaborative form at
/// cfg.rank shared dimensions via CP-ALS on the stacked QK tensor.
ReparamResult reparametrize(const ConcatMHAParams& params, const ALSConfig& cfg);

/// Bit-faithful alternative to the ALS route; requires no configuration and
/// produces d_k_shared = d_k_total with zero reconstruction error.
ReparamResult reparametrize_exact(const ConcatMHAParams& params);

/// |t - [[f]]|_F / |t|_F; zero tensor with zero factors gives 0.
double reconstruction_error(const StackedQKTensor& t, const CPFactors& f);

} // namespace collab

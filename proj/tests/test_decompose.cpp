#include <algorithm>
#include <cmath>
#include <vector>

#include "collab/decompose.hpp"
#include "collab/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace collab;
using collab::testing::random_concat;

namespace {

// Triple-loop reconstruction, independent of the khatri-rao route used by
// the implementation.
Tensor3 reconstruct_oracle(const CPFactors& f) {
    Tensor3 t(f.factor_heads.rows(), f.factor_q.rows(), f.factor_k.rows());
    for (std::size_t i = 0; i < t.dim0(); ++i)
        for (std::size_t j = 0; j < t.dim1(); ++j)
            for (std::size_t k = 0; k < t.dim2(); ++k) {
                double s = 0.0;
                for (std::size_t r = 0; r < f.rank; ++r)
                    s += f.factor_heads(i, r) * f.factor_q(j, r) * f.factor_k(k, r);
                t(i, j, k) = s;
            }
    return t;
}

CPFactors random_factors(Rng& rng, std::size_t d0, std::size_t d1, std::size_t d2,
                         std::size_t rank) {
    CPFactors f;
    f.rank = rank;
    f.factor_heads = Matrix::random(rng, d0, rank, -1.0, 1.0);
    f.factor_q = Matrix::random(rng, d1, rank, -1.0, 1.0);
    f.factor_k = Matrix::random(rng, d2, rank, -1.0, 1.0);
    return f;
}

} // namespace

TEST_CASE("stack_qk of a single identity head is the identity slice") {
    ConcatMHAParams p;
    p.dims = AttentionDims::make(3, 3, 1, 3, 2);
    p.w_q = Matrix::identity(3);
    p.w_k = Matrix::identity(3);
    p.w_v = Matrix(3, 2);
    p.w_o = Matrix(2, 3);
    p.b_q.assign(3, 0.0);
    p.b_k.assign(3, 0.0);
    const StackedQKTensor t = stack_qk(p);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 3; ++k) CHECK(t.t(0, j, k) == (j == k ? 1.0 : 0.0));
}

TEST_CASE("stack_qk slices match the per-head product oracle") {
    Rng rng(50);
    ConcatMHAParams p = random_concat(rng, 3, 2, 2, 2, 3);
    // Zero out head 1's key projection; its slice must vanish.
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 2; j < 4; ++j) p.w_k(i, j) = 0.0;

    const StackedQKTensor t = stack_qk(p);
    for (std::size_t h = 0; h < 2; ++h) {
        const Matrix expected = matmul(p.w_q_head(h), transpose(p.w_k_head(h)));
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k) CHECK(t.t(h, j, k) == expected(j, k));
    }
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 3; ++k) CHECK(t.t(1, j, k) == 0.0);
}

TEST_CASE("cp_reconstruct agrees with the triple-loop oracle") {
    Rng rng(51);
    const CPFactors f = random_factors(rng, 3, 4, 5, 3);
    CHECK(max_abs_diff(cp_reconstruct(f), reconstruct_oracle(f)) <= 1e-13);
}

TEST_CASE("cp_als recovers a rank-1 tensor essentially exactly") {
    Rng rng(52);
    const CPFactors f = random_factors(rng, 3, 4, 5, 1);
    const Tensor3 t = reconstruct_oracle(f);
    ALSConfig cfg;
    cfg.rank = 1;
    cfg.rng_seed = 7;
    const CpResult res = cp_als(t, cfg);
    CHECK(res.rel_error <= 1e-8);
}

TEST_CASE("cp_als recovers random rank-3 tensors (median over 5 seeds)") {
    Rng rng(53);
    const Tensor3 t = reconstruct_oracle(random_factors(rng, 4, 6, 6, 3));
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ALSConfig cfg;
        cfg.rank = 3;
        cfg.tol = 1e-10;
        cfg.rng_seed = seed;
        const CpResult res = cp_als(t, cfg);
        CHECK(res.iters <= 200);
        errs.push_back(res.rel_error);
    }
    std::sort(errs.begin(), errs.end());
    CHECK(errs[2] <= 1e-6);
}

TEST_CASE("cp_als at full rank fits a stacked QK tensor") {
    Rng rng(54);
    const ConcatMHAParams p = random_concat(rng, 5, 2, 2, 2, 4);
    const StackedQKTensor t = stack_qk(p);
    ALSConfig cfg;
    cfg.rank = p.dims.d_k_total;
    cfg.tol = 1e-10;
    cfg.rng_seed = 3;
    const CpResult res = cp_als(t.t, cfg);
    CHECK(res.rel_error <= 1e-5);
}

TEST_CASE("cp_als on the zero tensor returns zero factors without dividing by zero") {
    ALSConfig cfg;
    cfg.rank = 2;
    const CpResult res = cp_als(Tensor3(2, 3, 3), cfg);
    CHECK(res.rel_error == 0.0);
    CHECK(res.iters == 0);
    CHECK(max_abs(res.factors.factor_heads) == 0.0);
    CHECK(max_abs(res.factors.factor_q) == 0.0);
    CHECK(max_abs(res.factors.factor_k) == 0.0);
}

TEST_CASE("cp_als error history is non-increasing") {
    Rng rng(55);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Tensor3 t(3, 5, 5);
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
        ALSConfig cfg;
        cfg.rank = 2 + static_cast<std::size_t>(seed % 3);
        cfg.tol = 1e-12;
        cfg.max_iters = 60;
        cfg.rng_seed = seed;
        const CpResult res = cp_als(t, cfg);
        for (std::size_t i = 0; i + 1 < res.error_history.size(); ++i)
            CHECK(res.error_history[i + 1] <= res.error_history[i] + 1e-12);
    }
}

TEST_CASE("cp_als median error is non-increasing in rank") {
    Rng rng(56);
    Tensor3 t(3, 6, 6);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);

    double prev_median = 2.0;
    for (std::size_t rank = 1; rank <= 4; ++rank) {
        std::vector<double> errs;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            ALSConfig cfg;
            cfg.rank = rank;
            cfg.tol = 1e-9;
            cfg.rng_seed = seed;
            errs.push_back(cp_als(t, cfg).rel_error);
        }
        std::sort(errs.begin(), errs.end());
        CHECK(errs[2] <= prev_median + 1e-9);
        prev_median = errs[2];
    }
}

TEST_CASE("cp_als is deterministic for a fixed seed") {
    Rng rng(57);
    Tensor3 t(2, 4, 4);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
    ALSConfig cfg;
    cfg.rank = 2;
    cfg.rng_seed = 11;
    const CpResult a = cp_als(t, cfg);
    const CpResult b = cp_als(t, cfg);
    CHECK(a.rel_error == b.rel_error);
    CHECK(a.factors.factor_q == b.factors.factor_q);
}

TEST_CASE("cp_als hosvd init fits an exactly low-rank tensor") {
    Rng rng(58);
    const Tensor3 t = reconstruct_oracle(random_factors(rng, 3, 5, 5, 2));
    ALSConfig cfg;
    cfg.rank = 2;
    cfg.tol = 1e-12;
    cfg.init = CpInit::Hosvd;
    cfg.rng_seed = 1;
    CHECK(cp_als(t, cfg).rel_error <= 1e-8);
}

TEST_CASE("cp_als validates its configuration") {
    Tensor3 t(2, 2, 2, 1.0);
    ALSConfig cfg;
    cfg.rank = 0;
    CHECK_THROWS_AS(cp_als(t, cfg), ArgumentError);
    cfg.rank = 1;
    cfg.tol = 0.0;
    CHECK_THROWS_AS(cp_als(t, cfg), ArgumentError);
    cfg.tol = 1e-6;
    cfg.max_iters = 0;
    CHECK_THROWS_AS(cp_als(t, cfg), ArgumentError);
}

TEST_CASE("exact_expand reconstructs the stacked tensor exactly") {
    Rng rng(59);
    const ConcatMHAParams p = random_concat(rng, 5, 3, 2, 2, 4);
    const CollabMHAParams c = exact_expand(p);

    CPFactors f;
    f.rank = c.d_k_shared;
    f.factor_heads = c.mixing.m;
    f.factor_q = c.w_q_shared;
    f.factor_k = c.w_k_shared;
    CHECK(reconstruction_error(stack_qk(p), f) <= 1e-12);
}

TEST_CASE("exact_expand of a single head has an all-ones mixing row") {
    Rng rng(60);
    const ConcatMHAParams p = random_concat(rng, 4, 1, 3, 2, 4);
    const CollabMHAParams c = exact_expand(p);
    REQUIRE(c.mixing.m.rows() == 1);
    for (std::size_t j = 0; j < c.mixing.m.cols(); ++j) CHECK(c.mixing.m(0, j) == 1.0);
}

TEST_CASE("exact_expand forward equals the source layer") {
    Rng rng(61);
    const ConcatMHAParams p = random_concat(rng, 6, 2, 3, 2, 5);
    const CollabMHAParams c = exact_expand(p);
    const Matrix x = Matrix::random(rng, 5, 6, -1.0, 1.0);
    const Matrix y = Matrix::random(rng, 4, 6, -1.0, 1.0);
    CHECK(max_abs_diff(collab_mha_forward(c, x, y), concat_mha_forward(p, x, y)) <= 1e-10);
}

TEST_CASE("reparametrize at full rank reproduces attention probabilities") {
    Rng rng(62);
    const ConcatMHAParams p = random_concat(rng, 5, 2, 2, 2, 4);
    ALSConfig cfg;
    cfg.rank = p.dims.d_k_total;
    cfg.tol = 1e-12;
    cfg.max_iters = 500;
    cfg.rng_seed = 5;
    const ReparamResult r = reparametrize(p, cfg);

    const Matrix x = Matrix::random(rng, 6, 5, -1.0, 1.0);
    const Matrix y = Matrix::random(rng, 6, 5, -1.0, 1.0);
    const auto probs_src = concat_attention_probs(p, x, y);
    const auto probs_new = collab_attention_probs(r.params, x, y);
    for (std::size_t i = 0; i < probs_src.size(); ++i) {
        CHECK(max_abs_diff(probs_src[i], probs_new[i]) <= 1e-4);
    }
}

TEST_CASE("reparametrize_exact is the exact expansion") {
    Rng rng(63);
    const ConcatMHAParams p = random_concat(rng, 4, 2, 2, 2, 4);
    const ReparamResult r = reparametrize_exact(p);
    const CollabMHAParams e = exact_expand(p);
    CHECK(r.rel_error == 0.0);
    CHECK(r.params.w_q_shared == e.w_q_shared);
    CHECK(r.params.w_k_shared == e.w_k_shared);
    CHECK(r.params.mixing.m == e.mixing.m);
    CHECK(r.params.content_bias == e.content_bias);
}

TEST_CASE("layers sharing two QK components compress to rank 2") {
    Rng rng(64);
    // Heads are re-mixings of two shared rank-1 components, embedded in the
    // first two columns of each head's projections.
    const std::size_t d_in = 6, n_heads = 3, d_k = 3;
    const Matrix shared_q = Matrix::random(rng, d_in, 2, -1.0, 1.0);
    const Matrix shared_k = Matrix::random(rng, d_in, 2, -1.0, 1.0);

    ConcatMHAParams p;
    p.dims = AttentionDims::make(d_in, d_in, n_heads, d_k, 2);
    p.w_q = Matrix(d_in, n_heads * d_k);
    p.w_k = Matrix(d_in, n_heads * d_k);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const double w0 = rng.uniform(-1.0, 1.0), w1 = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < d_in; ++i) {
            p.w_q(i, h * d_k + 0) = shared_q(i, 0) * w0;
            p.w_q(i, h * d_k + 1) = shared_q(i, 1) * w1;
            p.w_k(i, h * d_k + 0) = shared_k(i, 0);
            p.w_k(i, h * d_k + 1) = shared_k(i, 1);
        }
    }
    p.w_v = Matrix::random(rng, d_in, n_heads * 2, -1.0, 1.0);
    p.w_o = Matrix::random(rng, n_heads * 2, d_in, -1.0, 1.0);
    p.b_q = rng.vector(n_heads * d_k, -0.2, 0.2);
    p.b_k = rng.vector(n_heads * d_k, -0.2, 0.2);

    ALSConfig cfg;
    cfg.rank = 2;
    cfg.tol = 1e-12;
    cfg.rng_seed = 9;
    const ReparamResult r = reparametrize(p, cfg);
    CHECK(r.rel_error <= 1e-6);

    const Matrix x = Matrix::random(rng, 4, d_in, -1.0, 1.0);
    const Matrix y = Matrix::random(rng, 5, d_in, -1.0, 1.0);
    const auto probs_src = concat_attention_probs(p, x, y);
    const auto probs_new = collab_attention_probs(r.params, x, y);
    for (std::size_t i = 0; i < probs_src.size(); ++i) {
        CHECK(max_abs_diff(probs_src[i], probs_new[i]) <= 1e-4);
    }
}

TEST_CASE("reconstruction_error of zero factors against a nonzero tensor is 1") {
    Rng rng(65);
    const ConcatMHAParams p = random_concat(rng, 4, 2, 2, 2, 4);
    const StackedQKTensor t = stack_qk(p);
    CPFactors f;
    f.rank = 2;
    f.factor_heads = Matrix(2, 2);
    f.factor_q = Matrix(4, 2);
    f.factor_k = Matrix(4, 2);
    CHECK(reconstruction_error(t, f) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("reconstruction_error tracks additive noise") {
    Rng rng(66);
    const CPFactors f = random_factors(rng, 3, 5, 5, 2);
    Tensor3 t = reconstruct_oracle(f);
    const double t_norm = frobenius_norm(t);

    Tensor3 noise(3, 5, 5);
    for (std::size_t i = 0; i < noise.size(); ++i) noise.data()[i] = rng.uniform(-1.0, 1.0);
    const double eps = 1e-3 * t_norm / frobenius_norm(noise);
    double noise_norm = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.data()[i] += eps * noise.data()[i];
        noise_norm += eps * noise.data()[i] * eps * noise.data()[i];
    }
    noise_norm = std::sqrt(noise_norm);

    StackedQKTensor wrapped{t};
    const double expected = noise_norm / frobenius_norm(t);
    const double got = reconstruction_error(wrapped, f);
    CHECK(got == doctest::Approx(expected).epsilon(0.1));
}

TEST_CASE("reconstruction_error rejects mismatched factor dimensions") {
    StackedQKTensor t{Tensor3(2, 3, 3)};
    CPFactors f;
    f.rank = 1;
    f.factor_heads = Matrix(2, 1);
    f.factor_q = Matrix(4, 1);
    f.factor_k = Matrix(3, 1);
    CHECK_THROWS_AS(reconstruction_error(t, f), ShapeError);
}

TEST_CASE("scaling queries up and keys down leaves the stacked tensor unchanged") {
    Rng rng(67);
    const ConcatMHAParams p = random_concat(rng, 4, 2, 2, 2, 4);
    ConcatMHAParams scaled = p;
    scaled.w_q *= 2.0;  // power of two: the products are bit-identical
    scaled.w_k *= 0.5;
    CHECK(stack_qk(p).t == stack_qk(scaled).t);
}

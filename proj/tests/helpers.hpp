#pragma once

#include <cmath>

#include "collab/attention.hpp"
#include "collab/matrix.hpp"
#include "collab/rng.hpp"

namespace collab::testing {

inline ConcatMHAParams random_concat(Rng& rng, std::size_t d_in, std::size_t n_heads,
                                     std::size_t d_k, std::size_t d_v, std::size_t d_out,
                                     double bias_scale = 0.3) {
    ConcatMHAParams p;
    p.dims = AttentionDims::make(d_in, d_out, n_heads, d_k, d_v);
    const double w = 1.0 / std::sqrt(static_cast<double>(d_in));
    p.w_q = Matrix::random(rng, d_in, p.dims.d_k_total, -w, w);
    p.w_k = Matrix::random(rng, d_in, p.dims.d_k_total, -w, w);
    p.w_v = Matrix::random(rng, d_in, n_heads * d_v, -w, w);
    p.w_o = Matrix::random(rng, n_heads * d_v, d_out, -w, w);
    p.b_q = rng.vector(p.dims.d_k_total, -bias_scale, bias_scale);
    p.b_k = rng.vector(p.dims.d_k_total, -bias_scale, bias_scale);
    return p;
}

} // namespace collab::testing

#include "collab/analysis.hpp"

#include <string>
#include <utility>

#include "collab/decompose.hpp"
#include "collab/svd.hpp"

namespace collab {

EnergySpectrum make_spectrum(std::vector<double> singular_values) {
    EnergySpectrum s;
    s.singular_values = std::move(singular_values);
    s.cumulative_energy.resize(s.singular_values.size());
    double total = 0.0;
    for (double v : s.singular_values) total += v * v;
    if (total == 0.0) return s;  // all-zero spectrum: curve stays zero
    double prefix = 0.0;
    for (std::size_t i = 0; i < s.singular_values.size(); ++i) {
        prefix += s.singular_values[i] * s.singular_values[i];
        s.cumulative_energy[i] = prefix / total;
    }
    return s;
}

EnergySpectrum head_spectrum(const ConcatMHAParams& params, std::size_t head) {
    params.validate();
    if (head >= params.dims.n_heads) {
        throw ArgumentError("head_spectrum: head " + std::to_string(head) + " out of range (" +
                            std::to_string(params.dims.n_heads) + " heads)");
    }
    const Matrix product = matmul(params.w_q_head(head), transpose(params.w_k_head(head)));
    return make_spectrum(svd_values(product));
}

EnergySpectrum layer_spectrum(const ConcatMHAParams& params) {
    params.validate();
    const Matrix product = matmul(params.w_q, transpose(params.w_k));
    return make_spectrum(svd_values(product));
}

EnergySpectrum layer_unfolding_spectrum(const ConcatMHAParams& params) {
    const StackedQKTensor stacked = stack_qk(params);
    return make_spectrum(svd_values(unfold(stacked.t, 1)));
}

std::size_t shared_dim_for_energy(const EnergySpectrum& s, double threshold) {
    if (!(threshold > 0.0) || threshold > 1.0) {
        throw ArgumentError("shared_dim_for_energy: threshold must be in (0, 1]");
    }
    for (std::size_t i = 0; i < s.cumulative_energy.size(); ++i) {
        if (s.cumulative_energy[i] >= threshold) return i + 1;
    }
    return 0;  // all-zero spectrum never reaches the threshold
}

CostReport param_count(const AttentionDims& dims, std::optional<std::size_t> d_k_shared) {
    dims.validate();
    const std::uint64_t d_in = dims.d_in;
    const std::uint64_t d_k = dims.d_k_total;
    const std::uint64_t n_h = dims.n_heads;
    const std::uint64_t shared = d_k_shared.value_or(dims.d_k_total);
    if (shared < 1) throw ArgumentError("param_count: d_k_shared must be >= 1");

    const std::uint64_t value_path =
        d_in * n_h * dims.d_v_per_head + n_h * dims.d_v_per_head * dims.d_out_total;

    CostReport r;
    r.params_concat = 2 * d_in * d_k + value_path + 2 * d_k;
    r.params_collab = (2 * d_in + n_h) * shared + value_path + n_h * d_in;
    r.compression_ratio = static_cast<double>(d_k) / static_cast<double>(shared);
    return r;
}

CostReport flop_count(const AttentionDims& dims, std::uint64_t t_tokens,
                      std::optional<std::size_t> d_k_shared) {
    dims.validate();
    if (t_tokens < 1) throw ArgumentError("flop_count: t_tokens must be >= 1");
    const std::uint64_t d_in = dims.d_in;
    const std::uint64_t n_h = dims.n_heads;
    const std::uint64_t shared = d_k_shared.value_or(dims.d_k_total);
    if (shared < 1) throw ArgumentError("flop_count: d_k_shared must be >= 1");

    CostReport r;
    r.flops_concat = 2 * t_tokens * d_in * dims.d_k_total + t_tokens * t_tokens * n_h * dims.d_k_per_head;
    r.flops_collab = t_tokens * (2 * d_in + n_h) * shared + t_tokens * t_tokens * n_h * shared;
    r.compression_ratio = static_cast<double>(dims.d_k_total) / static_cast<double>(shared);
    return r;
}

} // namespace collab

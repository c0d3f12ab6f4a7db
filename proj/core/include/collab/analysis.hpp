#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "collab/attention.hpp"

namespace collab {

/// Ordered singular values with the cumulative captured-variance curve:
/// cumulative_energy[k] = sum_{j<=k} sigma_j^2 / sum_j sigma_j^2. For an
/// all-zero spectrum the curve is all zeros.
struct EnergySpectrum {
    std::vector<double> singular_values;
    std::vector<double> cumulative_energy;
};

EnergySpectrum make_spectrum(std::vector<double> singular_values);

/// Spectrum of W_Q^(head) W_K^(head)^T; at most d_k_per_head nonzero values.
EnergySpectrum head_spectrum(const ConcatMHAParams& params, std::size_t head);

/// Spectrum of the full product W_Q W_K^T of the column-concatenated
/// projections (equal to the sum of the per-head products); at most
/// d_k_total nonzero values.
EnergySpectrum layer_spectrum(const ConcatMHAParams& params);

/// Spectrum of the mode-1 (query-side) unfolding of the stacked QK tensor.
/// Alternative redundancy view to the summed layer product.
EnergySpectrum layer_unfolding_spectrum(const ConcatMHAParams& params);

/// Smallest k such that the first k components capture at least `threshold`
/// of the energy. Returns 0 for an all-zero spectrum. threshold in (0, 1].
std::size_t shared_dim_for_energy(const EnergySpectrum& s, double threshold);

/// Parameter and FLOP accounting for one layer. Counts cover W_Q/W_K (or
/// their shared replacements plus the mixing matrix), W_V, W_O, and the bias
/// representation of each form. compression_ratio is d_k_total / d_k_shared,
/// the reduction of the key/query sub-count alone.
struct CostReport {
    std::uint64_t params_concat = 0;
    std::uint64_t params_collab = 0;
    std::uint64_t flops_concat = 0;
    std::uint64_t flops_collab = 0;
    double compression_ratio = 1.0;
};

/// d_k_shared defaults to d_k_total (conversion without compression).
CostReport param_count(const AttentionDims& dims, std::optional<std::size_t> d_k_shared = {});

/// Score-computation cost for one sequence of t_tokens:
///   concat: 2 T d_in d_k_total + T^2 n_heads d_k_per_head
///   collab: T (2 d_in + n_heads) d_k_shared + T^2 n_heads d_k_shared
CostReport flop_count(const AttentionDims& dims, std::uint64_t t_tokens,
                      std::optional<std::size_t> d_k_shared = {});

} // namespace collab

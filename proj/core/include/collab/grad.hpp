#pragma once

#include <cstdint>
#include <vector>

#include "collab/attention.hpp"

namespace collab {

/// Gradients of a scalar objective with respect to every CollabMHAParams
/// field; shapes mirror the parameter fields exactly.
struct CollabGradients {
    Matrix g_w_q_shared;
    Matrix g_w_k_shared;
    Matrix g_mixing;
    Matrix g_content_bias;
    Matrix g_w_v;
    Matrix g_w_o;
};

/// Exact gradients of <upstream, collab_mha_forward(params, x, y)> via the
/// chain rule through the softmax, the diagonal mixing, and the projections.
CollabGradients collab_backward(const CollabMHAParams& params, const Matrix& x, const Matrix& y,
                                const Matrix& upstream);

/// Desk-scale training tasks solvable by one attention layer. Both place a
/// distinguishing flag in embedding channel 0 so the relevant token is
/// identifiable by content:
///   AttendToMarker — one token per instance carries the marker flag; the
///     target output row (for every query) is that token's embedding.
///   CopyFirstToken — token 0 carries the flag; the target is row 0.
enum class ToyTask { AttendToMarker, CopyFirstToken };

/// Concat mode keeps the mixing matrix frozen at blocks-of-one (the layer
/// stays an ordinary concatenated MHA throughout); Collab mode learns it.
enum class TrainMode { Concat, Collab };

struct ToyTaskConfig {
    ToyTask task = ToyTask::AttendToMarker;
    std::size_t t_tokens = 8;
    std::size_t d_in = 16;
    std::size_t n_heads = 2;
    std::size_t d_k_shared = 8;  // must be divisible by n_heads
    std::size_t steps = 500;
    double learning_rate = 0.5;
    std::uint64_t rng_seed = 0;
};

/// Plain gradient descent on the mean-squared error over a fixed batch of
/// task instances. Returns steps + 1 losses; entry 0 is the pre-training
/// loss. Deterministic for a fixed seed (single-threaded). Throws
/// NumericalError naming the step if the loss stops being finite.
std::vector<double> train_toy(const ToyTaskConfig& cfg, TrainMode mode);

} // namespace collab

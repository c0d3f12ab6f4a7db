#include "collab/grad.hpp"

#include <cmath>
#include <string>

#include "collab/decompose.hpp"
#include "collab/rng.hpp"

namespace collab {

CollabGradients collab_backward(const CollabMHAParams& params, const Matrix& x, const Matrix& y,
                                const Matrix& upstream) {
    params.validate();
    const AttentionDims& d = params.dims;
    if (x.cols() != d.d_in || y.cols() != d.d_in) {
        throw ShapeError("collab_backward: input widths disagree with layer");
    }
    if (upstream.rows() != x.rows() || upstream.cols() != d.d_out_total) {
        throw ShapeError("collab_backward: upstream must be T x d_out_total");
    }

    const std::size_t t_q = x.rows();
    const std::size_t t_k = y.rows();
    const std::size_t n_heads = d.n_heads;
    const std::size_t d_v = d.d_v_per_head;
    const std::size_t rank = params.d_k_shared;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.d_k_per_head));

    // Forward intermediates.
    const Matrix xq = matmul(x, params.w_q_shared);                // T x R
    const Matrix yk = matmul(y, params.w_k_shared);                // T' x R
    const Matrix yv = matmul(y, params.w_v);                       // T' x (N_h d_v)
    const Matrix ycb = matmul(y, transpose(params.content_bias));  // T' x N_h

    std::vector<Matrix> probs(n_heads);
    Matrix heads_concat(t_q, n_heads * d_v);
    for (std::size_t i = 0; i < n_heads; ++i) {
        Matrix xqm = xq;
        const double* mi = params.mixing.m.row(i);
        for (std::size_t t = 0; t < t_q; ++t) {
            double* r = xqm.row(t);
            for (std::size_t c = 0; c < rank; ++c) r[c] *= mi[c];
        }
        Matrix s = matmul(xqm, transpose(yk));
        for (std::size_t t = 0; t < t_q; ++t)
            for (std::size_t tp = 0; tp < t_k; ++tp) s(t, tp) += ycb(tp, i);
        s *= scale;
        probs[i] = softmax_rows(s);
        set_columns(heads_concat, i * d_v, matmul(probs[i], columns(yv, i * d_v, (i + 1) * d_v)));
    }

    CollabGradients g;
    g.g_w_o = matmul(transpose(heads_concat), upstream);
    const Matrix g_concat = matmul(upstream, transpose(params.w_o));  // T x (N_h d_v)

    Matrix g_xq(t_q, rank);
    Matrix g_yk(t_k, rank);
    Matrix g_yv(t_k, n_heads * d_v);
    g.g_mixing = Matrix(n_heads, rank);
    g.g_content_bias = Matrix(n_heads, d.d_in);

    for (std::size_t i = 0; i < n_heads; ++i) {
        const Matrix g_h = columns(g_concat, i * d_v, (i + 1) * d_v);  // T x d_v
        const Matrix v_i = columns(yv, i * d_v, (i + 1) * d_v);        // T' x d_v
        const Matrix& p_i = probs[i];

        const Matrix g_p = matmul(g_h, transpose(v_i));  // T x T'
        set_columns(g_yv, i * d_v, matmul(transpose(p_i), g_h));

        // Row-wise softmax Jacobian: g_s = p .* (g_p - rowdot(g_p, p)).
        Matrix g_s(t_q, t_k);
        for (std::size_t t = 0; t < t_q; ++t) {
            double dot = 0.0;
            for (std::size_t tp = 0; tp < t_k; ++tp) dot += g_p(t, tp) * p_i(t, tp);
            for (std::size_t tp = 0; tp < t_k; ++tp)
                g_s(t, tp) = p_i(t, tp) * (g_p(t, tp) - dot);
        }
        g_s *= scale;  // gradient of the unscaled score matrix

        const Matrix g_xqm = matmul(g_s, yk);                    // T x R
        const Matrix g_ykm = matmul(transpose(g_s), xq);         // T' x R
        const double* mi = params.mixing.m.row(i);
        for (std::size_t r = 0; r < rank; ++r) {
            double gm = 0.0;
            for (std::size_t t = 0; t < t_q; ++t) {
                gm += xq(t, r) * g_xqm(t, r);
                g_xq(t, r) += g_xqm(t, r) * mi[r];
            }
            g.g_mixing(i, r) = gm;
            for (std::size_t t = 0; t < t_k; ++t) g_yk(t, r) += g_ykm(t, r) * mi[r];
        }

        // Content term 1 v_i^T Y^T: column sums of g_s, pulled back through Y.
        std::vector<double> colsums(t_k, 0.0);
        for (std::size_t t = 0; t < t_q; ++t)
            for (std::size_t tp = 0; tp < t_k; ++tp) colsums[tp] += g_s(t, tp);
        for (std::size_t tp = 0; tp < t_k; ++tp)
            for (std::size_t j = 0; j < d.d_in; ++j)
                g.g_content_bias(i, j) += colsums[tp] * y(tp, j);
    }

    g.g_w_q_shared = matmul(transpose(x), g_xq);
    g.g_w_k_shared = matmul(transpose(y), g_yk);
    g.g_w_v = matmul(transpose(y), g_yv);
    return g;
}

namespace {

struct ToyInstance {
    Matrix tokens;  // t x d_in, channel 0 reserved for the marker flag
    Matrix target;  // t x d_in, every row is the marked token's embedding
};

constexpr double kMarkerFlag = 3.0;
constexpr std::size_t kBatchInstances = 8;

ToyInstance make_instance(const ToyTaskConfig& cfg, Rng& rng) {
    ToyInstance inst;
    inst.tokens = Matrix(cfg.t_tokens, cfg.d_in);
    for (std::size_t t = 0; t < cfg.t_tokens; ++t)
        for (std::size_t j = 1; j < cfg.d_in; ++j) inst.tokens(t, j) = rng.uniform(-1.0, 1.0);

    const std::size_t marked =
        cfg.task == ToyTask::AttendToMarker ? rng.index(cfg.t_tokens) : 0;
    inst.tokens(marked, 0) = kMarkerFlag;

    inst.target = Matrix(cfg.t_tokens, cfg.d_in);
    for (std::size_t t = 0; t < cfg.t_tokens; ++t)
        for (std::size_t j = 0; j < cfg.d_in; ++j) inst.target(t, j) = inst.tokens(marked, j);
    return inst;
}

ConcatMHAParams init_concat(const ToyTaskConfig& cfg, Rng& rng) {
    const std::size_t d_k = cfg.d_k_shared / cfg.n_heads;
    const std::size_t d_v = std::max<std::size_t>(1, cfg.d_in / cfg.n_heads);
    ConcatMHAParams p;
    p.dims = AttentionDims::make(cfg.d_in, cfg.d_in, cfg.n_heads, d_k, d_v);
    const double w = 1.0 / std::sqrt(static_cast<double>(cfg.d_in));
    p.w_q = Matrix::random(rng, cfg.d_in, p.dims.d_k_total, -w, w);
    p.w_k = Matrix::random(rng, cfg.d_in, p.dims.d_k_total, -w, w);
    p.w_v = Matrix::random(rng, cfg.d_in, cfg.n_heads * d_v, -w, w);
    p.w_o = Matrix::random(rng, cfg.n_heads * d_v, cfg.d_in, -w, w);
    p.b_q = rng.vector(p.dims.d_k_total, -0.1, 0.1);
    p.b_k = rng.vector(p.dims.d_k_total, -0.1, 0.1);
    return p;
}

} // namespace

std::vector<double> train_toy(const ToyTaskConfig& cfg, TrainMode mode) {
    if (cfg.t_tokens < 1 || cfg.d_in < 2 || cfg.n_heads < 1 || cfg.d_k_shared < 1) {
        throw ArgumentError("train_toy: counts must be >= 1 (and d_in >= 2 for the marker channel)");
    }
    if (cfg.d_k_shared % cfg.n_heads != 0) {
        throw ArgumentError("train_toy: d_k_shared must be divisible by n_heads");
    }
    if (cfg.learning_rate < 0.0) throw ArgumentError("train_toy: learning_rate must be >= 0");

    Rng rng(cfg.rng_seed);
    std::vector<ToyInstance> batch;
    batch.reserve(kBatchInstances);
    for (std::size_t b = 0; b < kBatchInstances; ++b) batch.push_back(make_instance(cfg, rng));

    // Matched initialization across modes: the collaborative layer starts as
    // the exact expansion of the same concatenated init, so step-0 losses and
    // gradients on the shared fields coincide. Concat mode never updates the
    // mixing matrix, which keeps the layer a plain concatenated MHA.
    CollabMHAParams p = exact_expand(init_concat(cfg, rng));
    if (mode == TrainMode::Collab) p.mixing.kind = MixingKind::Dense;

    const double denom =
        static_cast<double>(kBatchInstances * cfg.t_tokens * p.dims.d_out_total);

    std::vector<double> losses;
    losses.reserve(cfg.steps + 1);
    for (std::size_t step = 0; step <= cfg.steps; ++step) {
        // Full-batch loss and the per-instance upstream gradients.
        double loss = 0.0;
        std::vector<Matrix> upstreams;
        upstreams.reserve(batch.size());
        for (const ToyInstance& inst : batch) {
            const Matrix out = collab_mha_forward(p, inst.tokens, inst.tokens);
            Matrix diff = out - inst.target;
            for (std::size_t i = 0; i < diff.size(); ++i)
                loss += diff.data()[i] * diff.data()[i];
            diff *= 2.0 / denom;
            upstreams.push_back(std::move(diff));
        }
        loss /= denom;
        if (!std::isfinite(loss)) {
            throw NumericalError("train_toy: loss diverged at step " + std::to_string(step));
        }
        losses.push_back(loss);
        if (step == cfg.steps) break;

        CollabGradients total = collab_backward(p, batch[0].tokens, batch[0].tokens, upstreams[0]);
        for (std::size_t b = 1; b < batch.size(); ++b) {
            const CollabGradients g =
                collab_backward(p, batch[b].tokens, batch[b].tokens, upstreams[b]);
            total.g_w_q_shared += g.g_w_q_shared;
            total.g_w_k_shared += g.g_w_k_shared;
            total.g_mixing += g.g_mixing;
            total.g_content_bias += g.g_content_bias;
            total.g_w_v += g.g_w_v;
            total.g_w_o += g.g_w_o;
        }

        const double lr = cfg.learning_rate;
        p.w_q_shared -= lr * total.g_w_q_shared;
        p.w_k_shared -= lr * total.g_w_k_shared;
        p.content_bias -= lr * total.g_content_bias;
        p.w_v -= lr * total.g_w_v;
        p.w_o -= lr * total.g_w_o;
        if (mode == TrainMode::Collab) p.mixing.m -= lr * total.g_mixing;
    }
    return losses;
}

} // namespace collab

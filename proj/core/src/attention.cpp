#include "collab/attention.hpp"

#include <cmath>
#include <string>

namespace collab {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

void check_inputs(const AttentionDims& d, const Matrix& x, const Matrix& y) {
    require(x.cols() == d.d_in, "attention: x has " + std::to_string(x.cols()) +
                                    " columns, layer expects d_in = " + std::to_string(d.d_in));
    require(y.cols() == d.d_in, "attention: y has " + std::to_string(y.cols()) +
                                    " columns, layer expects d_in = " + std::to_string(d.d_in));
    require(x.rows() >= 1 && y.rows() >= 1, "attention: empty token sequence");
}

// Per-head scaled scores for the concatenated form, biases applied literally.
std::vector<Matrix> concat_scaled_scores(const ConcatMHAParams& p, const Matrix& x,
                                         const Matrix& y) {
    const AttentionDims& d = p.dims;
    Matrix q = matmul(x, p.w_q);
    add_row_broadcast(q, p.b_q);
    Matrix k = matmul(y, p.w_k);
    add_row_broadcast(k, p.b_k);

    const double scale = 1.0 / std::sqrt(static_cast<double>(d.d_k_per_head));
    std::vector<Matrix> scores;
    scores.reserve(d.n_heads);
    for (std::size_t i = 0; i < d.n_heads; ++i) {
        const std::size_t c0 = i * d.d_k_per_head;
        const std::size_t c1 = c0 + d.d_k_per_head;
        Matrix s = matmul(columns(q, c0, c1), transpose(columns(k, c0, c1)));
        s *= scale;
        scores.push_back(std::move(s));
    }
    return scores;
}

// Per-head scaled scores for the collaborative form.
std::vector<Matrix> collab_scaled_scores(const CollabMHAParams& p, const Matrix& x,
                                         const Matrix& y) {
    const AttentionDims& d = p.dims;
    const Matrix xq = matmul(x, p.w_q_shared);                  // T x R
    const Matrix yk = matmul(y, p.w_k_shared);                  // T' x R
    const Matrix ycb = matmul(y, transpose(p.content_bias));    // T' x n_heads, col i = Y v_i

    const double scale = 1.0 / std::sqrt(static_cast<double>(d.d_k_per_head));
    std::vector<Matrix> scores;
    scores.reserve(d.n_heads);
    for (std::size_t i = 0; i < d.n_heads; ++i) {
        Matrix xqm = xq;
        for (std::size_t t = 0; t < xqm.rows(); ++t) {
            double* r = xqm.row(t);
            const double* mi = p.mixing.m.row(i);
            for (std::size_t c = 0; c < xqm.cols(); ++c) r[c] *= mi[c];
        }
        Matrix s = matmul(xqm, transpose(yk));
        for (std::size_t t = 0; t < s.rows(); ++t) {
            double* r = s.row(t);
            for (std::size_t tp = 0; tp < s.cols(); ++tp) r[tp] += ycb(tp, i);
        }
        s *= scale;
        scores.push_back(std::move(s));
    }
    return scores;
}

// Concatenate per-head (probs * values) blocks and project by w_o.
Matrix combine_heads(const std::vector<Matrix>& probs, const Matrix& values_concat,
                     const Matrix& w_o, std::size_t d_v_per_head) {
    const std::size_t n_heads = probs.size();
    Matrix concat(probs.front().rows(), n_heads * d_v_per_head);
    for (std::size_t i = 0; i < n_heads; ++i) {
        const std::size_t c0 = i * d_v_per_head;
        Matrix h = matmul(probs[i], columns(values_concat, c0, c0 + d_v_per_head));
        set_columns(concat, c0, h);
    }
    return matmul(concat, w_o);
}

} // namespace

AttentionDims AttentionDims::make(std::size_t d_in, std::size_t d_out_total, std::size_t n_heads,
                                  std::size_t d_k_per_head, std::size_t d_v_per_head) {
    AttentionDims d{d_in, d_out_total, n_heads, d_k_per_head, n_heads * d_k_per_head, d_v_per_head};
    d.validate();
    return d;
}

void AttentionDims::validate() const {
    if (d_in < 1 || d_out_total < 1 || n_heads < 1 || d_k_per_head < 1 || d_v_per_head < 1) {
        throw ShapeError("AttentionDims: all dimensions must be >= 1");
    }
    if (d_k_total != n_heads * d_k_per_head) {
        throw ShapeError("AttentionDims: d_k_total must equal n_heads * d_k_per_head");
    }
}

MixingMatrix MixingMatrix::blocks_of_one(std::size_t n_heads, std::size_t d_k_per_head) {
    MixingMatrix mm;
    mm.kind = MixingKind::BlocksOfOne;
    mm.m = Matrix(n_heads, n_heads * d_k_per_head);
    for (std::size_t i = 0; i < n_heads; ++i)
        for (std::size_t j = 0; j < d_k_per_head; ++j) mm.m(i, i * d_k_per_head + j) = 1.0;
    return mm;
}

bool MixingMatrix::is_blocks_of_one(std::size_t d_k_per_head) const {
    const std::size_t n_heads = m.rows();
    if (m.cols() != n_heads * d_k_per_head) return false;
    for (std::size_t i = 0; i < n_heads; ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const bool in_block = j >= i * d_k_per_head && j < (i + 1) * d_k_per_head;
            if (m(i, j) != (in_block ? 1.0 : 0.0)) return false;
        }
    return true;
}

void MixingMatrix::validate() const {
    if (kind == MixingKind::BlocksOfOne) {
        if (m.cols() % m.rows() != 0 || !is_blocks_of_one(m.cols() / m.rows())) {
            throw ShapeError("MixingMatrix: BlocksOfOne kind does not match its pattern");
        }
    }
}

Matrix ConcatMHAParams::w_q_head(std::size_t head) const {
    return columns(w_q, head * dims.d_k_per_head, (head + 1) * dims.d_k_per_head);
}

Matrix ConcatMHAParams::w_k_head(std::size_t head) const {
    return columns(w_k, head * dims.d_k_per_head, (head + 1) * dims.d_k_per_head);
}

Matrix ConcatMHAParams::w_v_head(std::size_t head) const {
    return columns(w_v, head * dims.d_v_per_head, (head + 1) * dims.d_v_per_head);
}

std::vector<double> ConcatMHAParams::b_q_head(std::size_t head) const {
    const std::size_t c0 = head * dims.d_k_per_head;
    return std::vector<double>(b_q.begin() + c0, b_q.begin() + c0 + dims.d_k_per_head);
}

std::vector<double> ConcatMHAParams::b_k_head(std::size_t head) const {
    const std::size_t c0 = head * dims.d_k_per_head;
    return std::vector<double>(b_k.begin() + c0, b_k.begin() + c0 + dims.d_k_per_head);
}

void ConcatMHAParams::validate() const {
    dims.validate();
    require(w_q.rows() == dims.d_in && w_q.cols() == dims.d_k_total, "ConcatMHAParams: bad w_q shape");
    require(w_k.rows() == dims.d_in && w_k.cols() == dims.d_k_total, "ConcatMHAParams: bad w_k shape");
    require(w_v.rows() == dims.d_in && w_v.cols() == dims.n_heads * dims.d_v_per_head,
            "ConcatMHAParams: bad w_v shape");
    require(w_o.rows() == dims.n_heads * dims.d_v_per_head && w_o.cols() == dims.d_out_total,
            "ConcatMHAParams: bad w_o shape");
    require(b_q.size() == dims.d_k_total, "ConcatMHAParams: bad b_q length");
    require(b_k.size() == dims.d_k_total, "ConcatMHAParams: bad b_k length");
}

void CollabMHAParams::validate() const {
    dims.validate();
    require(d_k_shared >= 1, "CollabMHAParams: d_k_shared must be >= 1");
    require(w_q_shared.rows() == dims.d_in && w_q_shared.cols() == d_k_shared,
            "CollabMHAParams: bad w_q_shared shape");
    require(w_k_shared.rows() == dims.d_in && w_k_shared.cols() == d_k_shared,
            "CollabMHAParams: bad w_k_shared shape");
    require(mixing.m.rows() == dims.n_heads && mixing.m.cols() == d_k_shared,
            "CollabMHAParams: mixing must be n_heads x d_k_shared");
    require(content_bias.rows() == dims.n_heads && content_bias.cols() == dims.d_in,
            "CollabMHAParams: content_bias must be n_heads x d_in");
    require(w_v.rows() == dims.d_in && w_v.cols() == dims.n_heads * dims.d_v_per_head,
            "CollabMHAParams: bad w_v shape");
    require(w_o.rows() == dims.n_heads * dims.d_v_per_head && w_o.cols() == dims.d_out_total,
            "CollabMHAParams: bad w_o shape");
    mixing.validate();
}

Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    require(q.cols() == k.cols(), "scaled_dot_attention: q and k widths disagree");
    require(k.rows() == v.rows(), "scaled_dot_attention: k and v token counts disagree");
    require(q.cols() >= 1, "scaled_dot_attention: key width must be >= 1");
    Matrix scores = matmul(q, transpose(k));
    scores *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return matmul(softmax_rows(scores), v);
}

Matrix concat_mha_forward(const ConcatMHAParams& params, const Matrix& x, const Matrix& y) {
    params.validate();
    check_inputs(params.dims, x, y);
    const auto scores = concat_scaled_scores(params, x, y);
    std::vector<Matrix> probs;
    probs.reserve(scores.size());
    for (const auto& s : scores) probs.push_back(softmax_rows(s));
    return combine_heads(probs, matmul(y, params.w_v), params.w_o, params.dims.d_v_per_head);
}

Matrix collab_mha_forward(const CollabMHAParams& params, const Matrix& x, const Matrix& y) {
    params.validate();
    check_inputs(params.dims, x, y);
    const auto scores = collab_scaled_scores(params, x, y);
    std::vector<Matrix> probs;
    probs.reserve(scores.size());
    for (const auto& s : scores) probs.push_back(softmax_rows(s));
    return combine_heads(probs, matmul(y, params.w_v), params.w_o, params.dims.d_v_per_head);
}

std::vector<Matrix> concat_attention_probs(const ConcatMHAParams& params, const Matrix& x,
                                           const Matrix& y) {
    params.validate();
    check_inputs(params.dims, x, y);
    auto scores = concat_scaled_scores(params, x, y);
    for (auto& s : scores) s = softmax_rows(s);
    return scores;
}

std::vector<Matrix> collab_attention_probs(const CollabMHAParams& params, const Matrix& x,
                                           const Matrix& y) {
    params.validate();
    check_inputs(params.dims, x, y);
    auto scores = collab_scaled_scores(params, x, y);
    for (auto& s : scores) s = softmax_rows(s);
    return scores;
}

ScoreDecomposition score_decomposition(const Matrix& w_q_head, const std::vector<double>& b_q_head,
                                       const Matrix& w_k_head, const std::vector<double>& b_k_head,
                                       const Matrix& x, const Matrix& y) {
    require(w_q_head.rows() == w_k_head.rows() && w_q_head.cols() == w_k_head.cols(),
            "score_decomposition: w_q and w_k shapes disagree");
    require(b_q_head.size() == w_q_head.cols() && b_k_head.size() == w_k_head.cols(),
            "score_decomposition: bias lengths disagree with head width");
    require(x.cols() == w_q_head.rows() && y.cols() == w_k_head.rows(),
            "score_decomposition: input widths disagree with projections");

    const Matrix xq = matmul(x, w_q_head);  // T x d
    const Matrix yk = matmul(y, w_k_head);  // T' x d

    const std::size_t t_q = x.rows();
    const std::size_t t_k = y.rows();

    ScoreDecomposition out;
    out.context = matmul(xq, transpose(yk));

    const std::vector<double> yk_bq = matvec(yk, b_q_head);  // T'
    out.content = Matrix(t_q, t_k);
    for (std::size_t i = 0; i < t_q; ++i)
        for (std::size_t j = 0; j < t_k; ++j) out.content(i, j) = yk_bq[j];

    const std::vector<double> xq_bk = matvec(xq, b_k_head);  // T
    out.residual_col = Matrix(t_q, t_k);
    for (std::size_t i = 0; i < t_q; ++i)
        for (std::size_t j = 0; j < t_k; ++j) out.residual_col(i, j) = xq_bk[i];

    double bqbk = 0.0;
    for (std::size_t c = 0; c < b_q_head.size(); ++c) bqbk += b_q_head[c] * b_k_head[c];
    out.residual_const = Matrix(t_q, t_k, bqbk);
    return out;
}

Matrix fold_key_bias(const ConcatMHAParams& params) {
    params.validate();
    const AttentionDims& d = params.dims;
    Matrix out(d.n_heads, d.d_in);
    for (std::size_t i = 0; i < d.n_heads; ++i) {
        const std::vector<double> vi = matvec(params.w_k_head(i), params.b_q_head(i));
        for (std::size_t j = 0; j < d.d_in; ++j) out(i, j) = vi[j];
    }
    return out;
}

} // namespace collab

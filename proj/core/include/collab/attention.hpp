#pragma once

#include <cstddef>
#include <vector>

#include "collab/matrix.hpp"

namespace collab {

/// Layer geometry. d_k_per_head is the width each head dot-products over and
/// fixes the 1/sqrt(d_k) score scale for both attention forms, including
/// collaborative layers with a different shared width (reparametrized layers
/// must reproduce the source scores, scale included).
struct AttentionDims {
    std::size_t d_in = 0;         // input width
    std::size_t d_out_total = 0;  // output width after W_O
    std::size_t n_heads = 0;
    std::size_t d_k_per_head = 0;
    std::size_t d_k_total = 0;    // n_heads * d_k_per_head
    std::size_t d_v_per_head = 0;

    static AttentionDims make(std::size_t d_in, std::size_t d_out_total, std::size_t n_heads,
                              std::size_t d_k_per_head, std::size_t d_v_per_head);
    void validate() const;
};

enum class MixingKind { BlocksOfOne, Dense };

/// Per-head mixing vectors laid out as rows: n_heads x d_k_shared. The
/// BlocksOfOne kind is the structure that makes collaborative attention
/// coincide with plain head concatenation.
struct MixingMatrix {
    Matrix m;
    MixingKind kind = MixingKind::Dense;

    static MixingMatrix blocks_of_one(std::size_t n_heads, std::size_t d_k_per_head);
    /// True iff m has the exact blocks-of-one pattern for the given head width.
    bool is_blocks_of_one(std::size_t d_k_per_head) const;
    void validate() const;
};

/// Concatenation-based multi-head attention parameters. w_q and w_k hold the
/// per-head projections as contiguous column blocks (block i = head i).
struct ConcatMHAParams {
    AttentionDims dims;
    Matrix w_q;               // d_in x d_k_total
    Matrix w_k;               // d_in x d_k_total
    Matrix w_v;               // d_in x (n_heads * d_v_per_head)
    Matrix w_o;               // (n_heads * d_v_per_head) x d_out_total
    std::vector<double> b_q;  // length d_k_total
    std::vector<double> b_k;  // length d_k_total

    Matrix w_q_head(std::size_t head) const;
    Matrix w_k_head(std::size_t head) const;
    Matrix w_v_head(std::size_t head) const;
    std::vector<double> b_q_head(std::size_t head) const;
    std::vector<double> b_k_head(std::size_t head) const;
    void validate() const;
};

/// Collaborative multi-head attention parameters: shared key/query
/// projections, per-head mixing vectors, and folded content biases
/// (row i of content_bias is v_i).
struct CollabMHAParams {
    AttentionDims dims;
    std::size_t d_k_shared = 0;
    Matrix w_q_shared;    // d_in x d_k_shared
    Matrix w_k_shared;    // d_in x d_k_shared
    MixingMatrix mixing;  // n_heads x d_k_shared
    Matrix content_bias;  // n_heads x d_in
    Matrix w_v;           // d_in x (n_heads * d_v_per_head)
    Matrix w_o;           // (n_heads * d_v_per_head) x d_out_total

    void validate() const;
};

/// Additive split of the biased, unscaled score matrix Q K^T:
/// context + content + residual_col + residual_const. The two residual terms
/// are constant along each row and vanish under the row softmax.
struct ScoreDecomposition {
    Matrix context;         // X Wq Wk^T Y^T
    Matrix content;         // 1 bq^T Wk^T Y^T
    Matrix residual_col;    // X Wq bk 1^T
    Matrix residual_const;  // (bq . bk) 1
};

/// softmax_rows(q k^T / sqrt(d)) v with d = q.cols (the supplied key width).
Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v);

/// Forward pass of concatenated MHA with biases applied literally to the
/// query and key projections. x is T x d_in, y is T' x d_in (cross attention;
/// self-attention is x == y). Returns T x d_out_total.
Matrix concat_mha_forward(const ConcatMHAParams& params, const Matrix& x, const Matrix& y);

/// Forward pass of collaborative MHA. Head i's unscaled score is
/// X Wq~ diag(m_i) Wk~^T Y^T + 1 v_i^T Y^T, scaled by 1/sqrt(d_k_per_head).
Matrix collab_mha_forward(const CollabMHAParams& params, const Matrix& x, const Matrix& y);

/// Per-head attention probability matrices (T x T' each).
std::vector<Matrix> concat_attention_probs(const ConcatMHAParams& params, const Matrix& x,
                                           const Matrix& y);
std::vector<Matrix> collab_attention_probs(const CollabMHAParams& params, const Matrix& x,
                                           const Matrix& y);

ScoreDecomposition score_decomposition(const Matrix& w_q_head, const std::vector<double>& b_q_head,
                                       const Matrix& w_k_head, const std::vector<double>& b_k_head,
                                       const Matrix& x, const Matrix& y);

/// Fold the query biases into per-head content vectors: row i = W_K^(i) b_Q^(i).
/// The key bias is discarded; it never affects attention probabilities.
Matrix fold_key_bias(const ConcatMHAParams& params);

} // namespace collab

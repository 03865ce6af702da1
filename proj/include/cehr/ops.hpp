#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cehr/tensor.hpp"

namespace cehr {

/// C[m x n] (+)= op(A) op(B); A is stored [m x k] (or [k x m] when
/// transposed), B is stored [k x n] (or [n x k]).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] times b[n x k] transposed.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Batched: a[B x m x k] * b[B x k x n].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Batched: a[B x m x k] * b[B x n x k]^T.
Tensor bmm_nt(const Tensor& a, const Tensor& b);
/// x[... x in] * w[in x out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[... x n] + bias[n].
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sin(const Tensor& x);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- normalization / attention -------------------------------------------

/// Softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);
/// Softmax over the last axis of scores[(B*heads) x Lq x Lk] where keys with
/// key_mask[b*Lk + j] == 0 get exactly zero weight.
Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> key_mask, std::size_t heads);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
/// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

// ---- shape / indexing -----------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
/// Rows of table[V x d] gathered by ids; result shape is prefix + [d].
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids, Shape prefix);
/// Rows of x viewed as [N x d] (d = last extent).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_last(const std::vector<Tensor>& parts);
/// x[B x L x F] at step t -> [B x F].
Tensor slice_step(const Tensor& x, std::size_t t);
/// Columns [start, start+len) of x[R x F].
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
/// Row r of the result comes from a when mask[r] != 0, else from b.
Tensor select_rows(std::span<const std::uint8_t> mask, const Tensor& a, const Tensor& b);
/// [B x L x (H*dh)] -> [(B*H) x L x dh].
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [(B*H) x L x dh] -> [B x L x (H*dh)].
Tensor merge_heads(const Tensor& x, std::size_t heads);

// ---- temporal / losses ----------------------------------------------------

/// tau[...] -> [... x k]: out[0] = w0*tau + p0, out[i] = sin(wi*tau + pi).
Tensor time2vec(const Tensor& tau, const Tensor& omega, const Tensor& phi);

/// sum_i w_i * CE(logits_i, label_i) / sum_i w_i over the rows of
/// logits[... x C]. Labels of zero-weight rows are ignored.
Tensor masked_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels,
                            std::span<const double> weights);
/// Mean binary cross-entropy of sigmoid(logits[N]) against labels.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);

// ---- recurrent ------------------------------------------------------------

struct LstmDirection {
    Tensor w_input;   // [d x 4h], gate order i, f, g, o
    Tensor w_hidden;  // [h x 4h]
    Tensor bias;      // [4h]
};

struct BiLstmWeights {
    LstmDirection forward;
    LstmDirection backward;
    std::size_t hidden() const { return forward.w_hidden.dim(0); }
};

/// Runs x[B x L x d] both ways. Returns [B x 2h]: forward state after
/// position lengths[b]-1 and backward state after position 0. Positions at
/// or beyond lengths[b] never touch the states.
Tensor bilstm_forward(const Tensor& x, const BiLstmWeights& weights, std::span<const std::size_t> lengths);

}  // namespace cehr

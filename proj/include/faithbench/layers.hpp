#ifndef FAITHBENCH_LAYERS_HPP
#define FAITHBENCH_LAYERS_HPP

#include <vector>

#include "faithbench/tensor.hpp"

namespace faithbench {

/// Optional post-softmax intervention on an attention module. `masked_keys`
/// marks token positions whose attention weights are forced to 0 (the
/// attention-mask replacement strategy); `score_offsets` adds constants to
/// the pre-softmax scores (finite-difference test hook).
struct AttentionOverride {
  const std::vector<char>* masked_keys = nullptr;  // indexed by token position
  bool renormalize = false;
  const std::vector<double>* score_offsets = nullptr;
};

/// Everything recorded about one attention module during a forward pass.
/// `alpha` is the softmax output before any mask intervention; `mixing`
/// is what actually weighted the values (differs from alpha only under an
/// AttentionOverride). General models have a single entry per field with a
/// rank-1 alpha; multi-head modules store one entry per head.
struct AttentionModuleRecord {
  int layer = 0;
  std::vector<Tensor> alpha;
  std::vector<Tensor> mixing;
  std::vector<Tensor> scores;
  std::vector<Tensor> values;                     // v(x): one row per key
  std::vector<std::vector<double>> value_norms;   // per head, per key
};

struct LayerActivationCache {
  std::vector<AttentionModuleRecord> modules;
};

// ---- additive (tanh) and scaled dot-product attention --------------------

struct TanhAttentionParams {
  Tensor w1;   // (a)
  Tensor W2;   // (a, d_key)
  Tensor W3;   // (a, d_query)
};

struct AttentionResult {
  Tensor alpha;    // distribution over keys (softmax output, pre-mask)
  Tensor mixing;   // weights used for the context mixture
  Tensor context;
  Tensor scores;   // pre-softmax
};

AttentionResult tanh_attention(const TanhAttentionParams& params, const Tensor& query,
                               const Tensor& keys, const AttentionOverride* ov = nullptr);

/// alpha = softmax(scale * K q); context = V^T alpha. scale is normally
/// 1/sqrt(d_key).
AttentionResult dot_attention(const Tensor& query, const Tensor& keys, const Tensor& values,
                              double scale, const AttentionOverride* ov = nullptr);

// ---- recurrent / convolutional encoders ----------------------------------

struct LstmParams {
  Tensor Wx;  // (4H, E)
  Tensor Wh;  // (4H, H)
  Tensor b;   // (4H), gate order: input, forget, cell, output
};

struct LstmResult {
  Tensor states;       // (T, H)
  Tensor final_state;  // (H)
};

LstmResult lstm_encode(const LstmParams& params, const Tensor& embeddings);

struct CnnParams {
  Tensor kernels;  // (C, width*E)
  Tensor bias;     // (C)
  int width = 3;
};

struct CnnResult {
  Tensor features;  // (T, C): relu conv outputs, same length as input
  Tensor query;     // (C): mean over positions
};

/// Same-length 1-d convolution (explicit zero padding around a valid conv)
/// followed by relu. Rejects sequences shorter than the kernel width.
CnnResult cnn_encode(const CnnParams& params, const Tensor& embeddings);

/// Same computation without the length precondition: the zero padding makes
/// any non-empty sequence valid. Model forwards use this so that slice-out
/// token removal can shrink an input below the kernel width.
CnnResult cnn_encode_padded(const CnnParams& params, const Tensor& embeddings);

// ---- multi-head self-attention block --------------------------------------

struct MultiHeadParams {
  std::vector<Tensor> Wq, Wk, Wv;  // per head: (d_h, D)
  Tensor Wo;                       // (D, D)
  Tensor bo;                       // (D)
  Tensor ln1_gain, ln1_bias;       // (D)
  Tensor ln2_gain, ln2_bias;       // (D)
  Tensor ff_W1;                    // (F, D)
  Tensor ff_b1;                    // (F)
  Tensor ff_W2;                    // (D, F)
  Tensor ff_b2;                    // (D)
  int heads = 0;
  int head_dim = 0;
  double ln_eps = 1e-5;
};

/// Value snapshots needed to run relevance propagation back through one
/// transformer block.
struct LrpLayerRecord {
  Tensor x_in;
  std::vector<Tensor> Wv;
  std::vector<Tensor> v;       // per head (S, d_h)
  std::vector<Tensor> alpha;   // mixing coefficients actually used (S, S)
  std::vector<Tensor> mixed;   // per head alpha x V (S, d_h)
  Tensor Wo, bo;
  Tensor proj_in;              // heads concatenated (S, D)
  Tensor attn_out;
  Tensor res1_out;             // x_in + attn_out
  Tensor z;                    // post-LN1, FFN input
  Tensor ff_W1, ff_b1;
  Tensor ff_hidden_pre, ff_hidden;
  Tensor ff_W2, ff_b2;
  Tensor ff_out;
  Tensor res2_out;             // z + ff_out
};

/// One post-LN encoder block: multi-head self-attention + residual + layer
/// norm, then a two-layer relu feed-forward + residual + layer norm.
/// `mask_column_offset` maps token positions in AttentionOverride to key
/// columns (1 when a classification token is prepended at position 0).
Tensor transformer_layer(const MultiHeadParams& params, const Tensor& x, int layer_index,
                         LayerActivationCache* cache, LrpLayerRecord* lrp,
                         const AttentionOverride* ov = nullptr, int mask_column_offset = 1);

// ---- shared helpers --------------------------------------------------------

Tensor linear_vec(const Tensor& W, const Tensor& x, const Tensor& b);    // W x + b
Tensor linear_rows(const Tensor& X, const Tensor& W, const Tensor& b);   // X W^T + b per row

/// Applies an AttentionOverride to a rank-1 attention distribution.
Tensor apply_override_vec(const Tensor& alpha, const AttentionOverride& ov);

}  // namespace faithbench

#endif

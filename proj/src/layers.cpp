#include "faithbench/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace faithbench {

namespace {

std::vector<double> row_norms(const Tensor& m) {
  const int rows = m.dim(0), cols = m.dim(1);
  std::vector<double> norms(static_cast<std::size_t>(rows), 0.0);
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double v = m[static_cast<std::size_t>(i) * cols + j];
      acc += v * v;
    }
    norms[static_cast<std::size_t>(i)] = std::sqrt(acc);
  }
  return norms;
}

Tensor add_score_offsets(const Tensor& scores, const AttentionOverride* ov) {
  if (!ov || !ov->score_offsets) return scores;
  if (ov->score_offsets->size() != scores.size())
    throw std::invalid_argument("attention: score offset length " +
                                std::to_string(ov->score_offsets->size()) +
                                " does not match scores " + scores.shape_string());
  return add(scores, Tensor(scores.shape(), *ov->score_offsets));
}

}  // namespace

Tensor linear_vec(const Tensor& W, const Tensor& x, const Tensor& b) {
  Tensor y = matmul(W, x);
  if (b.defined() && b.size() > 0) y = add(y, b);
  return y;
}

Tensor linear_rows(const Tensor& X, const Tensor& W, const Tensor& b) {
  Tensor y = matmul(X, transpose(W));
  if (b.defined() && b.size() > 0) y = add(y, repeat_rows(b, X.dim(0)));
  return y;
}

Tensor apply_override_vec(const Tensor& alpha, const AttentionOverride& ov) {
  if (!ov.masked_keys) return alpha;
  const int n = alpha.dim(0);
  if (static_cast<int>(ov.masked_keys->size()) != n)
    throw std::invalid_argument("attention mask length " +
                                std::to_string(ov.masked_keys->size()) +
                                " does not match " + std::to_string(n) + " keys");
  std::vector<double> m(static_cast<std::size_t>(n), 1.0);
  for (int i = 0; i < n; ++i)
    if ((*ov.masked_keys)[static_cast<std::size_t>(i)]) m[static_cast<std::size_t>(i)] = 0.0;
  Tensor masked = mul(alpha, Tensor::from_vector(std::move(m)));
  if (!ov.renormalize) return masked;
  return scale(masked, reciprocal(sum_all(masked)));
}

AttentionResult tanh_attention(const TanhAttentionParams& params, const Tensor& query,
                               const Tensor& keys, const AttentionOverride* ov) {
  if (!keys.defined() || keys.rank() != 2 || keys.dim(0) == 0)
    throw std::invalid_argument("tanh_attention: key set must be a non-empty (T,d) tensor");
  const int t = keys.dim(0);
  // scores = w1^T tanh(W2 K + W3 Q), evaluated key-row-wise
  Tensor projected_keys = matmul(keys, transpose(params.W2));       // (T, a)
  Tensor projected_query = matmul(params.W3, query);                // (a)
  Tensor pre = tanh(add(projected_keys, repeat_rows(projected_query, t)));
  Tensor scores = add_score_offsets(matmul(pre, params.w1), ov);    // (T)
  Tensor alpha = softmax(scores);
  Tensor mixing = ov ? apply_override_vec(alpha, *ov) : alpha;
  Tensor context = matmul(transpose(keys), mixing);
  return {alpha, mixing, context, scores};
}

AttentionResult dot_attention(const Tensor& query, const Tensor& keys, const Tensor& values,
                              double scale_factor, const AttentionOverride* ov) {
  if (!keys.defined() || keys.rank() != 2 || keys.dim(0) == 0)
    throw std::invalid_argument("dot_attention: key set must be a non-empty (T,d) tensor");
  if (query.rank() != 1 || query.dim(0) != keys.dim(1))
    throw std::invalid_argument("dot_attention: query " + query.shape_string() +
                                " incompatible with keys " + keys.shape_string());
  if (values.dim(0) != keys.dim(0))
    throw std::invalid_argument("dot_attention: values " + values.shape_string() +
                                " incompatible with keys " + keys.shape_string());
  Tensor scores = add_score_offsets(scalar_mul(matmul(keys, query), scale_factor), ov);
  Tensor alpha = softmax(scores);
  Tensor mixing = ov ? apply_override_vec(alpha, *ov) : alpha;
  Tensor context = matmul(transpose(values), mixing);
  return {alpha, mixing, context, scores};
}

LstmResult lstm_encode(const LstmParams& params, const Tensor& embeddings) {
  if (!embeddings.defined() || embeddings.rank() != 2 || embeddings.dim(0) == 0)
    throw std::invalid_argument("lstm_encode: empty sequence");
  const int t_len = embeddings.dim(0);
  const int h_dim = params.Wh.dim(1);
  if (params.Wx.dim(0) != 4 * h_dim || params.Wh.dim(0) != 4 * h_dim ||
      params.b.dim(0) != 4 * h_dim)
    throw std::invalid_argument("lstm_encode: parameter shapes " + params.Wx.shape_string() + ", " +
                                params.Wh.shape_string() + ", " + params.b.shape_string() +
                                " inconsistent with hidden size " + std::to_string(h_dim));
  Tensor h = Tensor::zeros({h_dim});
  Tensor c = Tensor::zeros({h_dim});
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(t_len));
  for (int step = 0; step < t_len; ++step) {
    Tensor x_t = reshape(slice(embeddings, 0, step, 1), {embeddings.dim(1)});
    Tensor gates = add(add(matmul(params.Wx, x_t), matmul(params.Wh, h)), params.b);
    Tensor gate_i = sigmoid(slice(gates, 0, 0, h_dim));
    Tensor gate_f = sigmoid(slice(gates, 0, h_dim, h_dim));
    Tensor gate_g = tanh(slice(gates, 0, 2 * h_dim, h_dim));
    Tensor gate_o = sigmoid(slice(gates, 0, 3 * h_dim, h_dim));
    c = add(mul(gate_f, c), mul(gate_i, gate_g));
    h = mul(gate_o, tanh(c));
    rows.push_back(reshape(h, {1, h_dim}));
  }
  Tensor states = rows.size() == 1 ? rows[0] : concat(rows, 0);
  return {states, h};
}

CnnResult cnn_encode(const CnnParams& params, const Tensor& embeddings) {
  if (!embeddings.defined() || embeddings.rank() != 2 || embeddings.dim(0) == 0)
    throw std::invalid_argument("cnn_encode: empty sequence");
  if (embeddings.dim(0) < params.width)
    throw std::invalid_argument("cnn_encode: sequence length " + std::to_string(embeddings.dim(0)) +
                                " shorter than kernel width " + std::to_string(params.width));
  return cnn_encode_padded(params, embeddings);
}

CnnResult cnn_encode_padded(const CnnParams& params, const Tensor& embeddings) {
  if (!embeddings.defined() || embeddings.rank() != 2 || embeddings.dim(0) == 0)
    throw std::invalid_argument("cnn_encode: empty sequence");
  const int e_dim = embeddings.dim(1);
  const int width = params.width;
  Tensor x = embeddings;
  const int pad_left = (width - 1) / 2;
  const int pad_right = width - 1 - pad_left;
  if (pad_left > 0 || pad_right > 0) {
    std::vector<Tensor> parts;
    if (pad_left > 0) parts.push_back(Tensor::zeros({pad_left, e_dim}));
    parts.push_back(x);
    if (pad_right > 0) parts.push_back(Tensor::zeros({pad_right, e_dim}));
    x = concat(parts, 0);
  }
  Tensor features = relu(conv1d_valid(x, params.kernels, params.bias, width));
  Tensor query = mean(features, 0);
  return {features, query};
}

Tensor transformer_layer(const MultiHeadParams& params, const Tensor& x, int layer_index,
                         LayerActivationCache* cache, LrpLayerRecord* lrp,
                         const AttentionOverride* ov, int mask_column_offset) {
  if (!x.defined() || x.rank() != 2 || x.dim(0) == 0)
    throw std::invalid_argument("transformer_layer: input must be a non-empty (S,D) tensor");
  const int s_len = x.dim(0);
  const int d_model = x.dim(1);
  if (params.heads <= 0 || params.heads * params.head_dim != d_model)
    throw std::invalid_argument("transformer_layer: heads x head_dim (" +
                                std::to_string(params.heads) + " x " +
                                std::to_string(params.head_dim) + ") must equal model width " +
                                std::to_string(d_model));

  // Column mask shared by all heads: zero out removed tokens as keys.
  Tensor mask_matrix;
  if (ov && ov->masked_keys) {
    std::vector<double> m(static_cast<std::size_t>(s_len) * s_len, 1.0);
    for (std::size_t tok = 0; tok < ov->masked_keys->size(); ++tok) {
      if (!(*ov->masked_keys)[tok]) continue;
      const int col = static_cast<int>(tok) + mask_column_offset;
      if (col < 0 || col >= s_len)
        throw std::invalid_argument("transformer_layer: masked token " + std::to_string(tok) +
                                    " out of range for sequence of " + std::to_string(s_len));
      for (int r = 0; r < s_len; ++r) m[static_cast<std::size_t>(r) * s_len + col] = 0.0;
    }
    mask_matrix = Tensor({s_len, s_len}, std::move(m));
  }

  AttentionModuleRecord record;
  record.layer = layer_index;
  LrpLayerRecord lrp_rec;

  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  std::vector<Tensor> head_outputs;
  for (int h = 0; h < params.heads; ++h) {
    Tensor q = matmul(x, transpose(params.Wq[static_cast<std::size_t>(h)]));  // (S, dh)
    Tensor k = matmul(x, transpose(params.Wk[static_cast<std::size_t>(h)]));
    Tensor v = matmul(x, transpose(params.Wv[static_cast<std::size_t>(h)]));
    Tensor scores = scalar_mul(matmul(q, transpose(k)), scale_factor);        // (S, S)
    Tensor alpha = softmax(scores, 1);
    Tensor mixing = alpha;
    if (mask_matrix.defined()) {
      mixing = mul(alpha, mask_matrix);
      if (ov->renormalize) {
        Tensor row_sums = sum(mixing, 1);                                     // (S)
        mixing = mul(mixing, transpose(repeat_rows(reciprocal(row_sums), s_len)));
      }
    }
    Tensor mixed = matmul(mixing, v);                                         // (S, dh)
    head_outputs.push_back(mixed);

    record.alpha.push_back(alpha);
    record.mixing.push_back(mixing);
    record.scores.push_back(scores);
    record.values.push_back(v);
    record.value_norms.push_back(row_norms(v));
    if (lrp) {
      lrp_rec.Wv.push_back(params.Wv[static_cast<std::size_t>(h)]);
      lrp_rec.v.push_back(v);
      lrp_rec.alpha.push_back(mixing);
      lrp_rec.mixed.push_back(mixed);
    }
  }

  Tensor proj_in = head_outputs.size() == 1 ? head_outputs[0] : concat(head_outputs, 1);
  Tensor attn_out = add(matmul(proj_in, transpose(params.Wo)), repeat_rows(params.bo, s_len));
  Tensor res1 = add(x, attn_out);
  Tensor z = layer_norm(res1, params.ln1_gain, params.ln1_bias, params.ln_eps);

  Tensor ff_hidden_pre = add(matmul(z, transpose(params.ff_W1)), repeat_rows(params.ff_b1, s_len));
  Tensor ff_hidden = relu(ff_hidden_pre);
  Tensor ff_out = add(matmul(ff_hidden, transpose(params.ff_W2)), repeat_rows(params.ff_b2, s_len));
  Tensor res2 = add(z, ff_out);
  Tensor out = layer_norm(res2, params.ln2_gain, params.ln2_bias, params.ln_eps);

  if (cache) cache->modules.push_back(record);
  if (lrp) {
    lrp_rec.x_in = x;
    lrp_rec.Wo = params.Wo;
    lrp_rec.bo = params.bo;
    lrp_rec.proj_in = proj_in;
    lrp_rec.attn_out = attn_out;
    lrp_rec.res1_out = res1;
    lrp_rec.z = z;
    lrp_rec.ff_W1 = params.ff_W1;
    lrp_rec.ff_b1 = params.ff_b1;
    lrp_rec.ff_hidden_pre = ff_hidden_pre;
    lrp_rec.ff_hidden = ff_hidden;
    lrp_rec.ff_W2 = params.ff_W2;
    lrp_rec.ff_b2 = params.ff_b2;
    lrp_rec.ff_out = ff_out;
    lrp_rec.res2_out = res2;
    *lrp = lrp_rec;
  }
  return out;
}

}  // namespace faithbench

#include "faithbench/lrp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace faithbench {
namespace lrp {

namespace {

inline double stabilized(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

}  // namespace

std::vector<double> linear_relevance(const std::vector<double>& r_out, const Tensor& in,
                                     const Tensor& W, const Tensor& out, double eps) {
  const int rows = in.rank() == 2 ? in.dim(0) : 1;
  const int din = in.rank() == 2 ? in.dim(1) : in.dim(0);
  const int dout = W.dim(0);
  if (W.dim(1) != din)
    throw std::invalid_argument("linear_relevance: W " + W.shape_string() +
                                " incompatible with input " + in.shape_string());
  if (r_out.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(dout))
    throw std::invalid_argument("linear_relevance: relevance size mismatch");
  std::vector<double> r_in(static_cast<std::size_t>(rows) * static_cast<std::size_t>(din), 0.0);
  for (int r = 0; r < rows; ++r) {
    const std::size_t in_off = static_cast<std::size_t>(r) * din;
    const std::size_t out_off = static_cast<std::size_t>(r) * dout;
    for (int i = 0; i < dout; ++i) {
      const double ri = r_out[out_off + i];
      if (ri == 0.0) continue;
      const double denom = stabilized(out[out_off + i], eps);
      const double f = ri / denom;
      const std::size_t w_off = static_cast<std::size_t>(i) * din;
      for (int j = 0; j < din; ++j) {
        r_in[in_off + j] += in[in_off + j] * W[w_off + j] * f;
      }
    }
  }
  return r_in;
}

void residual_relevance(const std::vector<double>& r_out, const Tensor& a, const Tensor& b,
                        std::vector<double>& r_a, std::vector<double>& r_b, double eps) {
  if (a.size() != b.size() || r_out.size() != a.size())
    throw std::invalid_argument("residual_relevance: size mismatch");
  r_a.assign(a.size(), 0.0);
  r_b.assign(b.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = stabilized(a[i] + b[i], eps);
    r_a[i] = r_out[i] * a[i] / denom;
    r_b[i] = r_out[i] * b[i] / denom;
  }
}

void attention_mix_relevance(const std::vector<double>& r_mixed, const Tensor& alpha,
                             const Tensor& v, const Tensor& mixed, std::vector<double>& r_alpha,
                             std::vector<double>& r_v, double eps) {
  const int s = alpha.dim(0);
  const int dh = v.dim(1);
  if (alpha.dim(1) != s || v.dim(0) != s || mixed.dim(0) != s || mixed.dim(1) != dh)
    throw std::invalid_argument("attention_mix_relevance: shape mismatch between alpha " +
                                alpha.shape_string() + ", v " + v.shape_string() + ", mixed " +
                                mixed.shape_string());
  r_alpha.assign(static_cast<std::size_t>(s) * s, 0.0);
  r_v.assign(static_cast<std::size_t>(s) * dh, 0.0);
  for (int i = 0; i < s; ++i) {
    for (int d = 0; d < dh; ++d) {
      const double r = r_mixed[static_cast<std::size_t>(i) * dh + d];
      if (r == 0.0) continue;
      const double f = r / stabilized(mixed[static_cast<std::size_t>(i) * dh + d], eps);
      for (int j = 0; j < s; ++j) {
        const double contrib =
            alpha[static_cast<std::size_t>(i) * s + j] * v[static_cast<std::size_t>(j) * dh + d];
        if (contrib == 0.0) continue;
        r_alpha[static_cast<std::size_t>(i) * s + j] += contrib * f;
        r_v[static_cast<std::size_t>(j) * dh + d] += contrib * f;
      }
    }
  }
}

RelevanceMap propagate_relevance(const TracedPrediction& trace, const Options& options) {
  if (trace.lrp_layers.empty())
    throw std::invalid_argument(
        "propagate_relevance: trace has no transformer linear-sublayer cache (general attention "
        "models are not supported)");
  if (trace.head_records.empty())
    throw std::invalid_argument("propagate_relevance: trace is missing the classifier-head cache");
  const double eps = options.eps;
  const int s = trace.lrp_layers.front().x_in.dim(0);
  const int d = trace.lrp_layers.front().x_in.dim(1);

  // Seed: relevance of the predicted-class logit equals the logit itself.
  const int target = trace.output.predicted;
  const double seed = trace.output.logits[static_cast<std::size_t>(target)];
  std::vector<double> r(trace.output.logits.size(), 0.0);
  r[static_cast<std::size_t>(target)] = seed;

  // Classifier head, top to bottom. relu is a pass-through.
  for (auto it = trace.head_records.rbegin(); it != trace.head_records.rend(); ++it) {
    r = linear_relevance(r, it->in, it->W, it->out_pre, eps);
  }

  // Expand onto the sequence: all classifier relevance enters at the
  // classification-token row of the last layer's output.
  std::vector<double> r_seq(static_cast<std::size_t>(s) * d, 0.0);
  for (int j = 0; j < d; ++j) r_seq[static_cast<std::size_t>(j)] = r[static_cast<std::size_t>(j)];

  RelevanceMap map;
  map.seed_value = seed;
  map.seq_len = s;
  map.alpha.resize(trace.lrp_layers.size());

  for (std::size_t li = trace.lrp_layers.size(); li-- > 0;) {
    const LrpLayerRecord& layer = trace.lrp_layers[li];
    // LN2 pass-through; split the FFN residual.
    std::vector<double> r_z_res, r_ff;
    residual_relevance(r_seq, layer.z, layer.ff_out, r_z_res, r_ff, eps);
    // FFN: linear2 <- relu (pass-through) <- linear1.
    std::vector<double> r_hidden =
        linear_relevance(r_ff, layer.ff_hidden, layer.ff_W2, layer.ff_out, eps);
    std::vector<double> r_z_ffn =
        linear_relevance(r_hidden, layer.z, layer.ff_W1, layer.ff_hidden_pre, eps);
    std::vector<double> r_z(r_z_res.size());
    for (std::size_t i = 0; i < r_z.size(); ++i) r_z[i] = r_z_res[i] + r_z_ffn[i];

    // LN1 pass-through; split the attention residual.
    std::vector<double> r_x_res, r_attn;
    residual_relevance(r_z, layer.x_in, layer.attn_out, r_x_res, r_attn, eps);

    // Output projection back to the concatenated heads.
    std::vector<double> r_proj_in =
        linear_relevance(r_attn, layer.proj_in, layer.Wo, layer.attn_out, eps);

    const int heads = static_cast<int>(layer.v.size());
    const int dh = heads > 0 ? layer.v.front().dim(1) : 0;
    std::vector<double> r_x = r_x_res;
    map.alpha[li].resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      // Column block of the concatenation belonging to this head.
      std::vector<double> r_mixed(static_cast<std::size_t>(s) * dh, 0.0);
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < dh; ++j)
          r_mixed[static_cast<std::size_t>(i) * dh + j] =
              r_proj_in[static_cast<std::size_t>(i) * (static_cast<std::size_t>(heads) * dh) +
                        static_cast<std::size_t>(h) * dh + j];
      std::vector<double> r_alpha, r_v;
      attention_mix_relevance(r_mixed, layer.alpha[static_cast<std::size_t>(h)],
                              layer.v[static_cast<std::size_t>(h)],
                              layer.mixed[static_cast<std::size_t>(h)], r_alpha, r_v, eps);
      map.alpha[li][static_cast<std::size_t>(h)] = std::move(r_alpha);
      // V = x_in Wv^T, bias-free linear.
      std::vector<double> r_x_head =
          linear_relevance(r_v, layer.x_in, layer.Wv[static_cast<std::size_t>(h)],
                           layer.v[static_cast<std::size_t>(h)], eps);
      for (std::size_t i = 0; i < r_x.size(); ++i) r_x[i] += r_x_head[i];
    }
    r_seq = std::move(r_x);
  }

  map.input.assign(static_cast<std::size_t>(s), 0.0);
  for (int i = 0; i < s; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += r_seq[static_cast<std::size_t>(i) * d + j];
    map.input[static_cast<std::size_t>(i)] = acc;
  }
  return map;
}

}  // namespace lrp
}  // namespace faithbench

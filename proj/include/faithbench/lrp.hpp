#ifndef FAITHBENCH_LRP_HPP
#define FAITHBENCH_LRP_HPP

#include <vector>

#include "faithbench/model.hpp"

namespace faithbench {
namespace lrp {

struct Options {
  double eps = 1e-6;  // sign-stabilized denominator epsilon
};

/// Epsilon-rule relevance through a row-wise linear map out = in W^T + b.
/// `in` is (n, din), `W` is (dout, din), `out` is (n, dout); bias relevance
/// is dropped. Returns relevance for `in` flattened row-major.
std::vector<double> linear_relevance(const std::vector<double>& r_out, const Tensor& in,
                                     const Tensor& W, const Tensor& out, double eps);

/// Splits relevance across an elementwise sum out = a + b.
void residual_relevance(const std::vector<double>& r_out, const Tensor& a, const Tensor& b,
                        std::vector<double>& r_a, std::vector<double>& r_b, double eps);

/// Relevance through one attention head's value mixture O = alpha V with
/// alpha treated as fixed coefficients. alpha is (s, s), v is (s, d_h),
/// mixed is (s, d_h). Outputs relevance for alpha and for V.
void attention_mix_relevance(const std::vector<double>& r_mixed, const Tensor& alpha,
                             const Tensor& v, const Tensor& mixed, std::vector<double>& r_alpha,
                             std::vector<double>& r_v, double eps);

struct RelevanceMap {
  /// [attention module][head]: relevance of every alpha entry, flat (S,S).
  std::vector<std::vector<std::vector<double>>> alpha;
  /// Per-position relevance at the bottom of the encoder stack (summed over
  /// embedding dims); position 0 is the classification token.
  std::vector<double> input;
  double seed_value = 0.0;  // the propagated yhat logit
  int seq_len = 0;
};

/// Epsilon-rule propagation from the predicted-class logit down through the
/// classifier head and every transformer block of a traced prediction.
/// Layer normalization, relu, and softmax pass relevance through unchanged;
/// attention mixing uses fixed-alpha coefficients. Requires the trace of a
/// transformer model; rejects traces without the linear-sublayer cache.
RelevanceMap propagate_relevance(const TracedPrediction& trace, const Options& options = {});

}  // namespace lrp
}  // namespace faithbench

#endif

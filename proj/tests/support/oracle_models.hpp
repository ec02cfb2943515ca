#ifndef FAITHBENCH_TESTS_ORACLE_MODELS_HPP
#define FAITHBENCH_TESTS_ORACLE_MODELS_HPP

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "faithbench/model.hpp"

namespace faithbench::testsupport {

/// Bag-of-embeddings linear-softmax classifier: logits = W * sum_i e(id_i).
/// Everything about it is computable in closed form, which makes it the
/// oracle for perturbation and violation tests. The MASK embedding row is
/// all zeros, so MASK-token replacement removes a token's contribution
/// exactly.
class LinearSoftmaxModel : public faithbench::TextClassifier {
 public:
  LinearSoftmaxModel(Tensor embedding, Tensor weight)
      : embedding_(std::move(embedding)), weight_(std::move(weight)) {
    if (embedding_.rank() != 2 || weight_.rank() != 2 ||
        weight_.dim(1) != embedding_.dim(1))
      throw std::invalid_argument("LinearSoftmaxModel: inconsistent shapes");
  }

  /// Two-class antisymmetric variant: W = [u; -u]. For this construction
  /// the sign of the InputGrad weight provably matches the sign of the
  /// confidence change of single-token zeroing.
  static LinearSoftmaxModel antisymmetric(Tensor embedding, std::vector<double> u) {
    const int d = embedding.dim(1);
    if (static_cast<int>(u.size()) != d)
      throw std::invalid_argument("antisymmetric: bad u size");
    std::vector<double> w(2 * u.size());
    for (int j = 0; j < d; ++j) {
      w[static_cast<std::size_t>(j)] = u[static_cast<std::size_t>(j)];
      w[static_cast<std::size_t>(d + j)] = -u[static_cast<std::size_t>(j)];
    }
    return LinearSoftmaxModel(std::move(embedding), Tensor({2, d}, std::move(w)));
  }

  int num_classes() const override { return weight_.dim(0); }
  int mask_token_id() const override { return Vocabulary::kMask; }

  std::vector<double> logits_for(const std::vector<int>& ids) const {
    const int d = embedding_.dim(1);
    std::vector<double> pooled(static_cast<std::size_t>(d), 0.0);
    for (int id : ids)
      for (int j = 0; j < d; ++j)
        pooled[static_cast<std::size_t>(j)] += embedding_[static_cast<std::size_t>(id) * d + j];
    std::vector<double> logits(static_cast<std::size_t>(num_classes()), 0.0);
    for (int c = 0; c < num_classes(); ++c)
      for (int j = 0; j < d; ++j)
        logits[static_cast<std::size_t>(c)] +=
            weight_[static_cast<std::size_t>(c) * d + j] * pooled[static_cast<std::size_t>(j)];
    return logits;
  }

  PredictOutput predict(const std::vector<int>& ids,
                        const PerturbContext* attention_mask = nullptr) const override {
    if (attention_mask)
      throw std::invalid_argument("LinearSoftmaxModel: attention-mask replacement not supported");
    if (ids.empty()) throw std::invalid_argument("LinearSoftmaxModel: empty example");
    PredictOutput out;
    out.logits = logits_for(ids);
    out.confidence = softmax_values(out.logits);
    out.predicted = 0;
    for (std::size_t c = 1; c < out.confidence.size(); ++c)
      if (out.confidence[c] > out.confidence[static_cast<std::size_t>(out.predicted)])
        out.predicted = static_cast<int>(c);
    return out;
  }

  /// x (odot) d(logit_cls)/dx summed over dims: w_cls . e(id_i) per token.
  std::vector<double> input_grad_weights(const std::vector<int>& ids, int cls) const {
    const int d = embedding_.dim(1);
    std::vector<double> w(ids.size(), 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        w[i] += weight_[static_cast<std::size_t>(cls) * d + j] *
                embedding_[static_cast<std::size_t>(ids[i]) * d + j];
    return w;
  }

  static std::vector<double> softmax_values(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(logits[i] - mx);
      s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
  }

  const Tensor& embedding() const { return embedding_; }
  const Tensor& weight() const { return weight_; }

 private:
  Tensor embedding_;
  Tensor weight_;
};

/// Ignores its input entirely.
class ConstantModel : public faithbench::TextClassifier {
 public:
  explicit ConstantModel(std::vector<double> confidence) : confidence_(std::move(confidence)) {}
  int num_classes() const override { return static_cast<int>(confidence_.size()); }
  int mask_token_id() const override { return Vocabulary::kMask; }
  PredictOutput predict(const std::vector<int>&, const PerturbContext*) const override {
    PredictOutput out;
    out.confidence = confidence_;
    out.logits.assign(confidence_.size(), 0.0);
    out.predicted = 0;
    for (std::size_t c = 1; c < confidence_.size(); ++c)
      if (confidence_[c] > confidence_[static_cast<std::size_t>(out.predicted)])
        out.predicted = static_cast<int>(c);
    return out;
  }

 private:
  std::vector<double> confidence_;
};

/// Scripted stub: confidence looked up by the exact (post-replacement) id
/// sequence, with a fallback default. MaskToken / SliceOut strategies only.
class ScriptedModel : public faithbench::TextClassifier {
 public:
  ScriptedModel(int classes, std::vector<double> default_confidence)
      : classes_(classes), default_confidence_(std::move(default_confidence)) {}
  void script(std::vector<int> ids, std::vector<double> confidence) {
    table_[std::move(ids)] = std::move(confidence);
  }
  int num_classes() const override { return classes_; }
  int mask_token_id() const override { return Vocabulary::kMask; }
  PredictOutput predict(const std::vector<int>& ids,
                        const PerturbContext* attention_mask) const override {
    if (attention_mask)
      throw std::invalid_argument("ScriptedModel: attention-mask replacement not supported");
    PredictOutput out;
    auto it = table_.find(ids);
    out.confidence = it != table_.end() ? it->second : default_confidence_;
    out.logits.assign(out.confidence.size(), 0.0);
    out.predicted = 0;
    for (std::size_t c = 1; c < out.confidence.size(); ++c)
      if (out.confidence[c] > out.confidence[static_cast<std::size_t>(out.predicted)])
        out.predicted = static_cast<int>(c);
    return out;
  }

 private:
  int classes_;
  std::vector<double> default_confidence_;
  std::map<std::vector<int>, std::vector<double>> table_;
};

}  // namespace faithbench::testsupport

#endif

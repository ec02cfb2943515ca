#include <doctest.h>

#include <cmath>
#include <random>

#include "faithbench/perturb.hpp"
#include "support/oracle_models.hpp"

using namespace faithbench;
using namespace faithbench::testsupport;

namespace {

/// Records the exact id sequence each prediction sees.
class RecordingModel : public TextClassifier {
 public:
  int num_classes() const override { return 2; }
  int mask_token_id() const override { return Vocabulary::kMask; }
  PredictOutput predict(const std::vector<int>& ids, const PerturbContext* ctx) const override {
    last_ids = ids;
    last_had_mask = ctx != nullptr;
    if (ctx) last_mask = ctx->masked_tokens;
    PredictOutput out;
    out.logits = {0.0, 0.0};
    out.confidence = {0.5, 0.5};
    out.predicted = 0;
    return out;
  }
  mutable std::vector<int> last_ids;
  mutable std::vector<char> last_mask;
  mutable bool last_had_mask = false;
};

Tensor random_embedding(std::mt19937_64& rng, int vocab, int dim) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(vocab) * dim);
  for (double& x : v) x = dist(rng);
  // zero-vector MASK row
  for (int j = 0; j < dim; ++j) v[static_cast<std::size_t>(Vocabulary::kMask) * dim + j] = 0.0;
  return Tensor({vocab, dim}, std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("perturb");

TEST_CASE("slice-out removes exactly the requested positions") {
  RecordingModel model;
  predict_perturbed(model, {10, 11, 12}, {0}, Strategy::SliceOut);
  CHECK(model.last_ids == std::vector<int>{11, 12});
  predict_perturbed(model, {10, 11, 12, 13}, {1, 3}, Strategy::SliceOut);
  CHECK(model.last_ids == std::vector<int>{10, 12});
  CHECK_FALSE(model.last_had_mask);
}

TEST_CASE("mask-token replacement preserves length") {
  RecordingModel model;
  predict_perturbed(model, {10, 11, 12}, {1}, Strategy::MaskToken);
  CHECK(model.last_ids == std::vector<int>{10, Vocabulary::kMask, 12});
}

TEST_CASE("attention-mask passes the flags through the perturb context") {
  RecordingModel model;
  StrategyOptions options;
  options.renormalize_after_mask = true;
  predict_perturbed(model, {10, 11, 12}, {2}, Strategy::AttentionMask, options);
  CHECK(model.last_had_mask);
  CHECK(model.last_mask == std::vector<char>{0, 0, 1});
  CHECK(model.last_ids == std::vector<int>{10, 11, 12});
}

TEST_CASE("degenerate and malformed removals are rejected") {
  RecordingModel model;
  CHECK_THROWS_AS(predict_perturbed(model, {1, 2}, {0, 1}, Strategy::SliceOut),
                  std::invalid_argument);
  CHECK_THROWS_AS(predict_perturbed(model, {1, 2}, {}, Strategy::SliceOut),
                  std::invalid_argument);
  CHECK_THROWS_AS(predict_perturbed(model, {1, 2}, {5}, Strategy::SliceOut),
                  std::invalid_argument);
  CHECK_THROWS_AS(predict_perturbed(model, {1, 2, 3}, {1, 1}, Strategy::SliceOut),
                  std::invalid_argument);
}

TEST_CASE("masking a token that is already MASK leaves the confidence unchanged") {
  std::mt19937_64 rng(3);
  LinearSoftmaxModel model(random_embedding(rng, 12, 4),
                           Tensor::from_matrix(2, 4, {0.4, -0.2, 0.9, 0.1,
                                                      -0.3, 0.5, -0.7, 0.2}));
  const std::vector<int> ids{5, Vocabulary::kMask, 7};
  PerturbationOutcome outcome = delta_confidence(model, ids, {1}, Strategy::MaskToken);
  CHECK(outcome.delta_c == 0.0);
}

TEST_CASE("delta-confidence on the linear-softmax oracle matches the closed form") {
  std::mt19937_64 rng(5);
  Tensor emb = random_embedding(rng, 16, 5);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> w(3 * 5);
  for (double& x : w) x = dist(rng);
  LinearSoftmaxModel model(emb, Tensor({3, 5}, w));

  const std::vector<int> ids{4, 9, 6, 11};
  const PredictOutput original = model.predict(ids);
  for (int removed = 0; removed < 4; ++removed) {
    PerturbationOutcome outcome = delta_confidence(model, ids, {removed}, Strategy::MaskToken);
    // closed form: drop the token's pooled contribution, re-run softmax
    std::vector<int> replaced = ids;
    replaced[static_cast<std::size_t>(removed)] = Vocabulary::kMask;
    const std::vector<double> logits = model.logits_for(replaced);
    const std::vector<double> conf = LinearSoftmaxModel::softmax_values(logits);
    const double expected =
        original.confidence[static_cast<std::size_t>(original.predicted)] -
        conf[static_cast<std::size_t>(original.predicted)];
    CHECK(outcome.delta_c == doctest::Approx(expected).epsilon(1e-15));
    CHECK(outcome.delta_c >= -1.0);
    CHECK(outcome.delta_c <= 1.0);
  }
}

TEST_CASE("empty removal sets short-circuit to a zero perturbation") {
  RecordingModel model;
  model.last_ids.clear();
  PerturbationOutcome outcome = delta_confidence(model, {1, 2, 3}, {}, Strategy::SliceOut);
  CHECK(outcome.delta_c == 0.0);
  CHECK(model.last_ids == std::vector<int>{1, 2, 3});  // only the original pass ran
}

TEST_CASE("slice-out and renormalized attention-mask agree without cross-token leakage") {
  // Window-1 CNN features depend on single tokens, and zeroing the tanh
  // attention query path removes the remaining cross-token dependence, so
  // the two strategies are algebraically identical.
  std::mt19937_64 rng(7);
  SyntheticSpec sspec;
  sspec.count = 12;
  sspec.seed = 7;
  sspec.min_length = 6;
  sspec.max_length = 10;
  Corpus corpus = generate_synthetic(sspec);
  std::uniform_int_distribution<int> index_dist(0, 5);

  for (int trial = 0; trial < 20; ++trial) {
    ModelSpec spec;
    spec.encoder = EncoderKind::Cnn;
    spec.attention = AttentionKind::Tanh;
    spec.embed_dim = 10;
    spec.hidden_dim = 10;
    spec.cnn_width = 1;
    spec.vocab_size = corpus.vocab->size();
    spec.seed = static_cast<std::uint64_t>(trial + 1);
    TrainedModel model(spec, corpus.vocab);
    for (auto& [name, tensor] : model.parameters())
      if (name == "att.W3")
        std::fill(tensor->values_mut().begin(), tensor->values_mut().end(), 0.0);

    const std::vector<int>& ids = corpus.examples[static_cast<std::size_t>(trial % 12)].ids;
    const int removed = index_dist(rng) % static_cast<int>(ids.size());
    StrategyOptions renorm;
    renorm.renormalize_after_mask = true;
    PerturbationOutcome masked =
        delta_confidence(model, ids, {removed}, Strategy::AttentionMask, renorm);
    PerturbationOutcome sliced = delta_confidence(model, ids, {removed}, Strategy::SliceOut);
    CHECK(std::abs(masked.delta_c - sliced.delta_c) < 1e-12);
  }
}

TEST_CASE("top-fraction selection clamps, ranks, and complements") {
  const std::vector<double> w{0.1, -0.9, 0.3, 0.2, -0.2, 0.05, 0.8, -0.4, 0.15, 0.25};
  SUBCASE("a tenth of ten tokens is exactly the argmax") {
    const std::vector<int> top = top_fraction_indices(w, 0.1, TopMode::RemoveTop);
    REQUIRE(top.size() == 1);
    CHECK(top[0] == 1);  // |-0.9| is the largest magnitude
  }
  SUBCASE("tiny fractions still select one token") {
    const std::vector<int> top = top_fraction_indices(w, 0.05, TopMode::RemoveTop);
    REQUIRE(top.size() == 1);
    CHECK(top[0] == 1);
  }
  SUBCASE("keep-top is the complement of remove-top") {
    const std::vector<int> removed = top_fraction_indices(w, 0.3, TopMode::RemoveTop);
    const std::vector<int> kept_complement = top_fraction_indices(w, 0.3, TopMode::KeepTop);
    std::vector<char> seen(w.size(), 0);
    for (int i : removed) seen[static_cast<std::size_t>(i)] = 1;
    for (int i : kept_complement) {
      CHECK(seen[static_cast<std::size_t>(i)] == 0);
      seen[static_cast<std::size_t>(i)] = 1;
    }
    for (char s : seen) CHECK(s == 1);
  }
  SUBCASE("ties resolve to the lower token index") {
    const std::vector<double> tied{0.5, -0.5, 0.5, 0.1};
    const std::vector<int> top = top_fraction_indices(tied, 0.5, TopMode::RemoveTop);
    CHECK(top == std::vector<int>{0, 1});
  }
  SUBCASE("fractions outside (0,1) are rejected") {
    CHECK_THROWS_AS(top_fraction_indices(w, 0.0, TopMode::RemoveTop), std::invalid_argument);
    CHECK_THROWS_AS(top_fraction_indices(w, 1.0, TopMode::RemoveTop), std::invalid_argument);
  }
}

TEST_CASE("attention-mask renormalization concentrates on the survivor") {
  SyntheticSpec sspec;
  sspec.count = 4;
  sspec.seed = 9;
  sspec.min_length = 5;
  sspec.max_length = 5;
  Corpus corpus = generate_synthetic(sspec);
  ModelSpec spec;
  spec.encoder = EncoderKind::Lstm;
  spec.attention = AttentionKind::Dot;
  spec.embed_dim = 8;
  spec.hidden_dim = 8;
  spec.vocab_size = corpus.vocab->size();
  spec.seed = 2;
  TrainedModel model(spec, corpus.vocab);

  const std::vector<int>& ids = corpus.examples[0].ids;
  PerturbContext ctx;
  ctx.masked_tokens.assign(ids.size(), 1);
  ctx.masked_tokens[3] = 0;
  ctx.renormalize = true;
  TraceOptions topt;
  topt.mask = &ctx;
  TracedPrediction trace = model.predict_traced(ids, topt);
  const Tensor& mixing = trace.cache.modules[0].mixing[0];
  CHECK(mixing[3] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mixing[0] == 0.0);
}

TEST_SUITE_END();

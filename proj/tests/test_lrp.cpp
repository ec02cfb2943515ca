#include <doctest.h>

#include <cmath>
#include <random>

#include "faithbench/lrp.hpp"
#include "faithbench/model.hpp"

using namespace faithbench;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::vector<int> shape, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("lrp");

TEST_CASE("single linear layer distributes relevance by contribution shares") {
  // logit = w . h; seeding with the logit gives r_i = w_i h_i * logit / stab(logit)
  const Tensor h = Tensor::from_vector({0.5, -1.0, 2.0});
  const Tensor w = Tensor::from_matrix(1, 3, {1.0, 0.5, -0.25});
  double logit = 0.0;
  for (int i = 0; i < 3; ++i) logit += w[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)];
  const Tensor out = Tensor::from_vector({logit});
  const double eps = 1e-6;
  const std::vector<double> r = lrp::linear_relevance({logit}, h, w, out, eps);
  for (int i = 0; i < 3; ++i) {
    const double expected = w[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)] *
                            logit / (logit + (logit >= 0 ? eps : -eps));
    CHECK(r[static_cast<std::size_t>(i)] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("zero logit seeds propagate all-zero relevance") {
  const Tensor h = Tensor::from_vector({0.5, -1.0});
  const Tensor w = Tensor::from_matrix(1, 2, {1.0, 0.5});
  const Tensor out = Tensor::from_vector({0.0});
  const std::vector<double> r = lrp::linear_relevance({0.0}, h, w, out, 1e-6);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
}

TEST_CASE("relevance is conserved through two-layer relu networks") {
  // Bias terms absorb relevance under the epsilon rule, so the conservation
  // statement applies to bias-free networks; the absorbed share is checked
  // separately below.
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 40; ++trial) {
    const int d_in = 6, d_hidden = 5;
    Tensor x = random_tensor(rng, {d_in}, 1.0);
    Tensor W1 = random_tensor(rng, {d_hidden, d_in}, 1.0);
    Tensor W2 = random_tensor(rng, {1, d_hidden}, 1.0);

    // forward
    std::vector<double> pre(static_cast<std::size_t>(d_hidden), 0.0);
    std::vector<double> act(static_cast<std::size_t>(d_hidden), 0.0);
    for (int i = 0; i < d_hidden; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d_in; ++j) acc += W1.at(i, j) * x[static_cast<std::size_t>(j)];
      pre[static_cast<std::size_t>(i)] = acc;
      act[static_cast<std::size_t>(i)] = std::max(0.0, acc);
    }
    double logit = 0.0;
    for (int i = 0; i < d_hidden; ++i)
      logit += W2[static_cast<std::size_t>(i)] * act[static_cast<std::size_t>(i)];
    if (std::abs(logit) < 0.05) continue;  // conservation ratio ill-conditioned near zero
    ++checked;

    const double eps = 1e-6;
    std::vector<double> r_act = lrp::linear_relevance({logit}, Tensor::from_vector(act), W2,
                                                      Tensor::from_vector({logit}), eps);
    // relu is a pass-through
    std::vector<double> r_x = lrp::linear_relevance(r_act, x, W1, Tensor::from_vector(pre), eps);
    double total = 0.0;
    for (double v : r_x) total += v;
    CHECK(std::abs(total - logit) / std::abs(logit) < 0.05);
  }
  CHECK(checked == 40);
}

TEST_CASE("bias relevance is absorbed, shrinking the conserved share accordingly") {
  const Tensor x = Tensor::from_vector({1.0, 2.0});
  const Tensor W = Tensor::from_matrix(1, 2, {0.5, 0.25});
  const double bias = 0.5;
  const double out = 0.5 * 1.0 + 0.25 * 2.0 + bias;  // 1.5
  const std::vector<double> r = lrp::linear_relevance({out}, x, W, Tensor::from_vector({out}), 1e-9);
  const double total = r[0] + r[1];
  CHECK(total == doctest::Approx(out - bias).epsilon(1e-6));
}

TEST_CASE("residual relevance splits proportionally and conserves") {
  Tensor a = Tensor::from_vector({1.0, -2.0, 0.5});
  Tensor b = Tensor::from_vector({0.5, 1.0, 0.5});
  std::vector<double> r_out{0.3, -0.6, 0.4};
  std::vector<double> r_a, r_b;
  lrp::residual_relevance(r_out, a, b, r_a, r_b, 1e-9);
  for (int i = 0; i < 3; ++i)
    CHECK(r_a[static_cast<std::size_t>(i)] + r_b[static_cast<std::size_t>(i)] ==
          doctest::Approx(r_out[static_cast<std::size_t>(i)]).epsilon(1e-6));
  CHECK(r_a[0] == doctest::Approx(0.3 * 1.0 / 1.5).epsilon(1e-6));
}

TEST_CASE("attention-mix relevance conserves and honors the fixed coefficients") {
  std::mt19937_64 rng(9);
  const int s = 4, dh = 3;
  // row-stochastic positive alpha
  Tensor alpha = [&rng, s]() {
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    std::vector<double> v(static_cast<std::size_t>(s) * s);
    for (int i = 0; i < s; ++i) {
      double row = 0.0;
      for (int j = 0; j < s; ++j) {
        v[static_cast<std::size_t>(i) * s + j] = dist(rng);
        row += v[static_cast<std::size_t>(i) * s + j];
      }
      for (int j = 0; j < s; ++j) v[static_cast<std::size_t>(i) * s + j] /= row;
    }
    return Tensor({s, s}, std::move(v));
  }();
  Tensor v = random_tensor(rng, {s, dh}, 1.0);
  std::vector<double> mixed(static_cast<std::size_t>(s) * dh, 0.0);
  for (int i = 0; i < s; ++i)
    for (int d = 0; d < dh; ++d) {
      double acc = 0.0;
      for (int j = 0; j < s; ++j) acc += alpha.at(i, j) * v.at(j, d);
      mixed[static_cast<std::size_t>(i) * dh + d] = acc;
    }
  std::vector<double> r_mixed(static_cast<std::size_t>(s) * dh);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& x : r_mixed) x = dist(rng);

  std::vector<double> r_alpha, r_v;
  lrp::attention_mix_relevance(r_mixed, alpha, v, Tensor({s, dh}, mixed), r_alpha, r_v, 1e-9);
  double in_total = 0.0, alpha_total = 0.0, out_total = 0.0;
  for (double x : r_v) in_total += x;
  for (double x : r_alpha) alpha_total += x;
  for (double x : r_mixed) out_total += x;
  // relevance splits identically onto the alpha view and the value view
  CHECK(in_total == doctest::Approx(out_total).epsilon(1e-4));
  CHECK(alpha_total == doctest::Approx(out_total).epsilon(1e-4));
}

namespace {

TrainedModel tiny_transformer(std::uint64_t seed, int layers = 2, int heads = 2) {
  SyntheticSpec s;
  s.count = 40;
  s.seed = seed;
  s.min_length = 5;
  s.max_length = 9;
  Corpus corpus = generate_synthetic(s);
  Corpus empty_val;
  ModelSpec spec;
  spec.encoder = EncoderKind::Transformer;
  spec.attention = AttentionKind::MultiHead;
  spec.embed_dim = 16;
  spec.hidden_dim = 16;
  spec.encoder_layers = layers;
  spec.heads = heads;
  spec.seed = seed;
  TrainHyperparams hp;
  hp.learning_rate = 3e-3;
  hp.max_epochs = 2;
  return train(corpus, empty_val, spec, hp);
}

}  // namespace

TEST_CASE("transformer relevance propagation emits per-layer per-head attention relevance") {
  TrainedModel model = tiny_transformer(3);
  const std::vector<int> ids{4, 5, 6, 7, 8};
  TracedPrediction trace = model.predict_traced(ids);
  lrp::RelevanceMap map = lrp::propagate_relevance(trace);
  REQUIRE(map.alpha.size() == 2);
  REQUIRE(map.alpha[0].size() == 2);
  CHECK(map.alpha[0][0].size() == static_cast<std::size_t>(map.seq_len * map.seq_len));
  CHECK(map.input.size() == static_cast<std::size_t>(map.seq_len));
  CHECK(map.seed_value ==
        trace.output.logits[static_cast<std::size_t>(trace.output.predicted)]);
  // loose conservation through the full stack: same order of magnitude
  double total = 0.0;
  for (double v : map.input) total += v;
  CHECK(std::isfinite(total));
}

TEST_CASE("general-model traces are rejected with a transformer-cache message") {
  SyntheticSpec s;
  s.count = 20;
  s.seed = 4;
  Corpus corpus = generate_synthetic(s);
  Corpus empty_val;
  ModelSpec spec;
  spec.encoder = EncoderKind::Lstm;
  spec.attention = AttentionKind::Dot;
  spec.embed_dim = 12;
  spec.hidden_dim = 12;
  spec.seed = 4;
  TrainHyperparams hp;
  hp.max_epochs = 1;
  TrainedModel model = train(corpus, empty_val, spec, hp);
  TracedPrediction trace = model.predict_traced(corpus.examples[0].ids);
  try {
    lrp::propagate_relevance(trace);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("transformer") != std::string::npos);
  }
}

TEST_SUITE_END();

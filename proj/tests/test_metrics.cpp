#include <doctest.h>

#include <cmath>
#include <random>

#include "faithbench/metrics.hpp"
#include "support/finite_diff.hpp"
#include "support/oracle_models.hpp"

using namespace faithbench;
using namespace faithbench::testsupport;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("the violation bit follows the sign rule") {
  // Scripted confidences: original 0.7 for class 0; variants push it
  // either way after masking the top token.
  const std::vector<int> ids{10, 11};

  auto run = [&](double top_weight, double perturbed_conf) {
    ScriptedModel model(2, {0.7, 0.3});
    std::vector<int> masked = ids;
    masked[0] = Vocabulary::kMask;
    model.script(masked, {perturbed_conf, 1.0 - perturbed_conf});
    const std::vector<double> weights{top_weight, top_weight / 4.0};
    return violation_test(model, ids, weights, Strategy::MaskToken);
  };

  // positive weight, confidence drops: consistent
  CHECK_FALSE(run(0.8, 0.4).violation);
  // positive weight, confidence increases: violation (the red-point case)
  CHECK(run(0.8, 0.9).violation);
  // negative weight, confidence drops after removal: violation
  CHECK(run(-0.5, 0.5).violation);
  // negative weight, confidence increases: consistent
  CHECK_FALSE(run(-0.5, 0.9).violation);
}

TEST_CASE("a zero product is not a violation and zero weights are undefined") {
  ScriptedModel model(2, {0.7, 0.3});
  const std::vector<int> ids{10, 11};
  std::vector<int> masked = ids;
  masked[0] = Vocabulary::kMask;
  model.script(masked, {0.7, 0.3});  // delta exactly zero
  ViolationRecord rec = violation_test(model, ids, {0.8, 0.2}, Strategy::MaskToken);
  CHECK(rec.defined);
  CHECK_FALSE(rec.violation);
  CHECK(rec.delta_c == 0.0);

  ViolationRecord undef = violation_test(model, ids, {0.0, 0.0}, Strategy::MaskToken);
  CHECK_FALSE(undef.defined);
}

TEST_CASE("x-star ties resolve to the lowest token index") {
  ScriptedModel model(2, {0.6, 0.4});
  const std::vector<int> ids{10, 11, 12};
  std::vector<int> masked = ids;
  masked[0] = Vocabulary::kMask;
  model.script(masked, {0.5, 0.5});
  ViolationRecord rec = violation_test(model, ids, {0.5, -0.5, 0.2}, Strategy::MaskToken);
  CHECK(rec.x_star == 0);
}

TEST_CASE("violation ratios are invariant to positive rescaling of the weights") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> emb(static_cast<std::size_t>(20) * 4);
  for (double& x : emb) x = dist(rng);
  for (int j = 0; j < 4; ++j) emb[static_cast<std::size_t>(Vocabulary::kMask) * 4 + j] = 0.0;
  std::vector<double> w(2 * 4);
  for (double& x : w) x = dist(rng);
  LinearSoftmaxModel model(Tensor({20, 4}, emb), Tensor({2, 4}, w));

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ids;
    for (int i = 0; i < 6; ++i)
      ids.push_back(3 + static_cast<int>(rng() % 17));
    std::vector<double> weights(ids.size());
    for (double& x : weights) x = dist(rng);
    ViolationRecord a = violation_test(model, ids, weights, Strategy::MaskToken);
    for (double& x : weights) x *= 7.25;
    ViolationRecord b = violation_test(model, ids, weights, Strategy::MaskToken);
    CHECK(a.violation == b.violation);
    CHECK(a.x_star == b.x_star);
  }
}

TEST_CASE("sufficiency of an input-blind model is zero") {
  ConstantModel model({0.8, 0.2});
  MetricConfig config;
  const std::vector<int> ids{5, 6, 7, 8, 9, 10};
  const std::vector<double> weights{0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
  CHECK(sufficiency(model, ids, weights, Strategy::MaskToken, config) == 0.0);
  CHECK(comprehensiveness(model, ids, weights, Strategy::MaskToken, config) == 0.0);
}

TEST_CASE("sufficiency averages the per-level confidence drops") {
  // 20 tokens; keep-top counts at 5/10/20/50% are 1/2/4/10, so the removal
  // sets have sizes 19/18/16/10. Script those four masked inputs to yield
  // drops of 0.1/0.2/0.3/0.4; the mean must be 0.25.
  const int n = 20;
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = 10 + i;
  std::vector<double> weights(n);
  for (int i = 0; i < n; ++i) weights[static_cast<std::size_t>(i)] = 1.0 - 0.01 * i;

  ScriptedModel model(2, {0.9, 0.1});
  const double drops[4] = {0.1, 0.2, 0.3, 0.4};
  const double levels[4] = {0.05, 0.10, 0.20, 0.50};
  for (int k = 0; k < 4; ++k) {
    const std::vector<int> removal = top_fraction_indices(weights, levels[k], TopMode::KeepTop);
    std::vector<int> masked = ids;
    for (int idx : removal) masked[static_cast<std::size_t>(idx)] = Vocabulary::kMask;
    model.script(masked, {0.9 - drops[k], 0.1 + drops[k]});
  }
  MetricConfig config;
  CHECK(sufficiency(model, ids, weights, Strategy::MaskToken, config) ==
        doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sufficiency and comprehensiveness match the linear-softmax closed form") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> emb(static_cast<std::size_t>(24) * 5);
  for (double& x : emb) x = dist(rng);
  for (int j = 0; j < 5; ++j) emb[static_cast<std::size_t>(Vocabulary::kMask) * 5 + j] = 0.0;
  std::vector<double> w(2 * 5);
  for (double& x : w) x = dist(rng);
  LinearSoftmaxModel model(Tensor({24, 5}, emb), Tensor({2, 5}, w));

  std::vector<int> ids;
  for (int i = 0; i < 8; ++i) ids.push_back(3 + static_cast<int>(rng() % 21));
  std::vector<double> weights(ids.size());
  for (double& x : weights) x = dist(rng);

  MetricConfig config;
  const PredictOutput original = model.predict(ids);
  auto closed_form = [&](TopMode mode) {
    double acc = 0.0;
    for (double level : config.sparsity_levels) {
      std::vector<int> removal = top_fraction_indices(weights, level, mode);
      std::vector<int> replaced = ids;
      for (int idx : removal) replaced[static_cast<std::size_t>(idx)] = Vocabulary::kMask;
      const std::vector<double> conf = LinearSoftmaxModel::softmax_values(model.logits_for(replaced));
      acc += original.confidence[static_cast<std::size_t>(original.predicted)] -
             conf[static_cast<std::size_t>(original.predicted)];
    }
    return acc / static_cast<double>(config.sparsity_levels.size());
  };
  CHECK(sufficiency(model, ids, weights, Strategy::MaskToken, config) ==
        doctest::Approx(closed_form(TopMode::KeepTop)).epsilon(1e-13));
  CHECK(comprehensiveness(model, ids, weights, Strategy::MaskToken, config) ==
        doctest::Approx(closed_form(TopMode::RemoveTop)).epsilon(1e-13));
}

TEST_CASE("auc-tp integrates the threshold-performance curve") {
  SUBCASE("flat accuracy one gives area one") {
    // the scripted default keeps class 0 most confident everywhere
    ScriptedModel model(2, {0.9, 0.1});
    Corpus corpus;
    corpus.num_classes = 2;
    for (int i = 0; i < 5; ++i) {
      Example ex;
      ex.ids = {10 + i, 20 + i, 30 + i, 40 + i};
      ex.label = 0;
      corpus.examples.push_back(ex);
    }
    MetricConfig config;
    const double area = auc_tp(
        model, corpus,
        [](const Example& ex, std::size_t) {
          return std::vector<double>(ex.ids.size(), 0.5);
        },
        Strategy::MaskToken, config);
    CHECK(area == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("always-wrong predictions give area zero") {
    ScriptedModel model(2, {0.9, 0.1});
    Corpus corpus;
    corpus.num_classes = 2;
    Example ex;
    ex.ids = {10, 11, 12};
    ex.label = 1;
    corpus.examples.push_back(ex);
    MetricConfig config;
    const double area = auc_tp(
        model, corpus,
        [](const Example& e, std::size_t) { return std::vector<double>(e.ids.size(), 1.0); },
        Strategy::MaskToken, config);
    CHECK(area == 0.0);
  }
  SUBCASE("a hand two-segment curve matches trapezoid arithmetic") {
    // thresholds {0, 0.3, 0.9}: performance 1 at t=0 and t=0.3, 0 at 0.9.
    // x normalized by 0.9: area = 1*(1/3) + 0.5*(2/3) = 2/3.
    const std::vector<int> base_ids{10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
    ScriptedModel model(2, {0.9, 0.1});
    // at t=0.3: remove 3 tokens; at t=0.9: remove 9 -> flip the prediction
    std::vector<double> weights(base_ids.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
      weights[i] = 1.0 - 0.05 * static_cast<double>(i);
    for (double t : {0.3, 0.9}) {
      std::vector<int> removal = top_fraction_indices(weights, t, TopMode::RemoveTop);
      std::vector<int> masked = base_ids;
      for (int idx : removal) masked[static_cast<std::size_t>(idx)] = Vocabulary::kMask;
      model.script(masked, t < 0.5 ? std::vector<double>{0.8, 0.2}
                                   : std::vector<double>{0.2, 0.8});
    }
    Corpus corpus;
    corpus.num_classes = 2;
    Example ex;
    ex.ids = base_ids;
    ex.label = 0;
    corpus.examples.push_back(ex);
    MetricConfig config;
    config.auc_thresholds = {0.0, 0.3, 0.9};
    const double area = auc_tp(
        model, corpus,
        [&weights](const Example&, std::size_t) { return weights; }, Strategy::MaskToken,
        config);
    CHECK(area == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("rank correlation hits the extremes for co-monotone and reversed impacts") {
  // Build scripted confidences so the all-class absolute change decreases
  // (or increases) exactly with the weight ranking.
  const std::vector<int> ids{10, 11, 12, 13, 14};
  const std::vector<double> weights{0.9, 0.7, 0.5, 0.3, 0.1};
  MetricConfig config;

  auto scripted = [&](bool reversed) {
    ScriptedModel model(2, {0.95, 0.05});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::vector<int> masked = ids;
      masked[i] = Vocabulary::kMask;
      const double drop = reversed ? 0.1 + 0.15 * static_cast<double>(i)
                                   : 0.8 - 0.15 * static_cast<double>(i);
      model.script(masked, {0.95 - drop, 0.05 + drop});
    }
    return model;
  };
  ScriptedModel direct = scripted(false);
  std::optional<double> rho = rank_correlation(direct, ids, weights, Strategy::MaskToken, config);
  REQUIRE(rho.has_value());
  CHECK(*rho == doctest::Approx(1.0).epsilon(1e-12));

  ScriptedModel reversed = scripted(true);
  rho = rank_correlation(reversed, ids, weights, Strategy::MaskToken, config);
  REQUIRE(rho.has_value());
  CHECK(*rho == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("rank correlation equals the brute-force Spearman on a 5-token case") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> emb(static_cast<std::size_t>(16) * 4);
  for (double& x : emb) x = dist(rng);
  for (int j = 0; j < 4; ++j) emb[static_cast<std::size_t>(Vocabulary::kMask) * 4 + j] = 0.0;
  std::vector<double> w(2 * 4);
  for (double& x : w) x = dist(rng);
  LinearSoftmaxModel model(Tensor({16, 4}, emb), Tensor({2, 4}, w));

  const std::vector<int> ids{4, 7, 9, 11, 13};
  const std::vector<double> weights{0.3, -0.8, 0.1, 0.55, -0.2};
  MetricConfig config;
  const std::optional<double> rho =
      rank_correlation(model, ids, weights, Strategy::MaskToken, config);
  REQUIRE(rho.has_value());

  // independent oracle: rank both lists, average ranks on ties, Pearson
  const PredictOutput original = model.predict(ids);
  std::vector<int> order = rank_by_magnitude(weights);
  std::vector<double> magnitudes, impacts;
  for (int idx : order) {
    magnitudes.push_back(std::abs(weights[static_cast<std::size_t>(idx)]));
    std::vector<int> replaced = ids;
    replaced[static_cast<std::size_t>(idx)] = Vocabulary::kMask;
    const std::vector<double> conf =
        LinearSoftmaxModel::softmax_values(model.logits_for(replaced));
    double acc = 0.0;
    for (std::size_t c = 0; c < conf.size(); ++c)
      acc += std::abs(original.confidence[c] - conf[c]);
    impacts.push_back(acc);
  }
  CHECK(*rho == doctest::Approx(brute_spearman(magnitudes, impacts)).epsilon(1e-12));
}

TEST_CASE("rank correlation is undefined below two tokens") {
  ConstantModel model({0.6, 0.4});
  MetricConfig config;
  CHECK_FALSE(rank_correlation(model, {5}, {1.0}, Strategy::MaskToken, config).has_value());
}

TEST_CASE("spearman matches the brute-force oracle on 1000 tied integer lists") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> value(0, 6);
  std::uniform_int_distribution<int> len(2, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (double& x : a) x = value(rng);
    for (double& x : b) x = value(rng);
    const double mine = spearman(a, b);
    const double ref = brute_spearman(a, b);
    if (std::isnan(ref)) {
      CHECK(std::isnan(mine));
    } else {
      CHECK(std::abs(mine - ref) <= 1e-12);
    }
  }
}

TEST_CASE("strategy aggregation is the unweighted mean with summed bookkeeping") {
  MethodStrategyStats a, b, c;
  a.violation_ratio = 0.0;
  b.violation_ratio = 0.3;
  c.violation_ratio = 0.6;
  a.violation_defined = 10;
  b.violation_defined = 9;
  c.violation_defined = 10;
  b.violation_undefined = 1;
  a.sufficiency = 0.2;
  b.sufficiency = 0.2;
  c.sufficiency = 0.2;
  MethodStrategyStats agg = aggregate_over_strategies({a, b, c});
  CHECK(*agg.violation_ratio == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(*agg.sufficiency == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(agg.violation_defined == 29);
  CHECK(agg.violation_undefined == 1);
  CHECK_FALSE(agg.auc_tp.has_value());

  MethodStrategyStats same = aggregate_over_strategies({a, a, a});
  CHECK(*same.violation_ratio == 0.0);
}

TEST_CASE("undefined examples are excluded from ratios and counted") {
  // crafted corpus: 3 defined (1 violation) + 2 undefined explanations
  ScriptedModel model(2, {0.8, 0.2});
  const std::vector<int> ids{10, 11};
  std::vector<int> masked = ids;
  masked[0] = Vocabulary::kMask;
  model.script(masked, {0.9, 0.1});  // confidence rises -> violation for positive weight

  MethodStrategyStats stats;
  std::vector<std::vector<double>> weight_sets = {
      {0.5, 0.1}, {0.4, 0.2}, {-0.5, 0.1}, {0.0, 0.0}, {0.0, 0.0}};
  int violations = 0;
  for (const auto& weights : weight_sets) {
    ViolationRecord rec = violation_test(model, ids, weights, Strategy::MaskToken);
    if (!rec.defined) {
      ++stats.violation_undefined;
      continue;
    }
    ++stats.violation_defined;
    violations += rec.violation ? 1 : 0;
  }
  stats.violation_count = violations;
  stats.violation_ratio = static_cast<double>(violations) / stats.violation_defined;
  CHECK(stats.violation_defined == 3);
  CHECK(stats.violation_undefined == 2);
  // positive-weight sets violate (confidence rose); the negative-weight set
  // is consistent
  CHECK(violations == 2);
  CHECK(*stats.violation_ratio == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_SUITE_END();

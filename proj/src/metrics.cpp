#include "faithbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "faithbench/threading.hpp"

namespace faithbench {

ViolationRecord violation_test(const TextClassifier& model, const std::vector<int>& ids,
                               const std::vector<double>& weights, Strategy strategy,
                               const StrategyOptions& options, const PredictOutput* original,
                               int example_id) {
  if (weights.size() != ids.size())
    throw std::invalid_argument("violation_test: weight count " + std::to_string(weights.size()) +
                                " does not match " + std::to_string(ids.size()) + " tokens");
  ViolationRecord rec;
  rec.example_id = example_id;
  rec.strategy = strategy;
  bool all_zero = true;
  for (double w : weights)
    if (w != 0.0) {
      all_zero = false;
      break;
    }
  if (all_zero) {
    rec.defined = false;
    return rec;
  }
  int x_star = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double mag = std::abs(weights[i]);
    if (mag > best) {  // strict: ties keep the lowest index
      best = mag;
      x_star = static_cast<int>(i);
    }
  }
  rec.x_star = x_star;
  rec.weight = weights[static_cast<std::size_t>(x_star)];
  PerturbationOutcome outcome =
      delta_confidence(model, ids, {x_star}, strategy, options, original);
  rec.delta_c = outcome.delta_c;
  rec.violation = rec.weight * rec.delta_c < 0.0;
  return rec;
}

namespace {

double mean_delta_over_levels(const TextClassifier& model, const std::vector<int>& ids,
                              const std::vector<double>& weights, Strategy strategy,
                              const MetricConfig& config, const PredictOutput* original,
                              TopMode mode) {
  if (weights.size() != ids.size())
    throw std::invalid_argument("sparsity metric: weight count does not match token count");
  if (config.sparsity_levels.empty())
    throw std::invalid_argument("sparsity metric: no sparsity levels configured");
  PredictOutput base;
  if (!original) {
    base = model.predict(ids);
    original = &base;
  }
  double acc = 0.0;
  for (double level : config.sparsity_levels) {
    const std::vector<int> removal = top_fraction_indices(weights, level, mode);
    const PerturbationOutcome outcome =
        delta_confidence(model, ids, removal, strategy, config.strategy_options, original);
    acc += outcome.delta_c;
  }
  return acc / static_cast<double>(config.sparsity_levels.size());
}

}  // namespace

double sufficiency(const TextClassifier& model, const std::vector<int>& ids,
                   const std::vector<double>& weights, Strategy strategy,
                   const MetricConfig& config, const PredictOutput* original) {
  return mean_delta_over_levels(model, ids, weights, strategy, config, original, TopMode::KeepTop);
}

double comprehensiveness(const TextClassifier& model, const std::vector<int>& ids,
                         const std::vector<double>& weights, Strategy strategy,
                         const MetricConfig& config, const PredictOutput* original) {
  return mean_delta_over_levels(model, ids, weights, strategy, config, original,
                                TopMode::RemoveTop);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += ra[i];
    mean_b += rb[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = ra[i] - mean_a;
    const double db = rb[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return cov / std::sqrt(var_a * var_b);
}

std::optional<double> rank_correlation(const TextClassifier& model, const std::vector<int>& ids,
                                       const std::vector<double>& weights, Strategy strategy,
                                       const MetricConfig& config,
                                       const PredictOutput* original) {
  const std::size_t n = ids.size();
  if (weights.size() != n)
    throw std::invalid_argument("rank_correlation: weight count does not match token count");
  if (n < 2) return std::nullopt;
  PredictOutput base;
  if (!original) {
    base = model.predict(ids);
    original = &base;
  }
  const std::vector<int> order = rank_by_magnitude(weights);
  std::vector<double> magnitudes(n);  // |weights| in descending rank order
  std::vector<double> impact(n);      // all-class absolute confidence change per rank
  for (std::size_t j = 0; j < n; ++j) {
    magnitudes[j] = std::abs(weights[static_cast<std::size_t>(order[j])]);
    std::vector<int> removal;
    if (config.rc_cumulative) {
      // Cumulative prefix of the ranking, capped so at least one token stays.
      const std::size_t take = std::min(j + 1, n - 1);
      removal.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
      std::sort(removal.begin(), removal.end());
    } else {
      removal.push_back(order[j]);
    }
    const PredictOutput perturbed =
        predict_perturbed(model, ids, removal, strategy, config.strategy_options);
    double acc = 0.0;
    for (std::size_t c = 0; c < original->confidence.size(); ++c)
      acc += std::abs(original->confidence[c] - perturbed.confidence[c]);
    impact[j] = acc;
  }
  const double rho = spearman(magnitudes, impact);
  if (std::isnan(rho)) return std::nullopt;
  return rho;
}

double auc_tp(const TextClassifier& model, const Corpus& corpus, const ExplainFn& explain,
              Strategy strategy, const MetricConfig& config, std::size_t threads) {
  if (corpus.examples.empty()) throw std::invalid_argument("auc_tp: empty corpus");
  if (config.auc_thresholds.size() < 2 || config.auc_thresholds.front() != 0.0)
    throw std::invalid_argument("auc_tp: thresholds must start at 0");

  const std::size_t n = corpus.examples.size();
  struct PerExample {
    std::vector<double> weights;
    PredictOutput original;
  };
  std::vector<PerExample> prepared(n);
  parallel_for(n, threads, [&](std::size_t i) {
    prepared[i].weights = explain(corpus.examples[i], i);
    prepared[i].original = model.predict(corpus.examples[i].ids);
  });

  std::vector<double> performance(config.auc_thresholds.size(), 0.0);
  for (std::size_t ti = 0; ti < config.auc_thresholds.size(); ++ti) {
    const double t = config.auc_thresholds[ti];
    std::vector<double> per_example(n, 0.0);
    parallel_for(n, threads, [&](std::size_t i) {
      const Example& ex = corpus.examples[i];
      PredictOutput out;
      if (t == 0.0) {
        out = prepared[i].original;
      } else {
        const std::vector<int> removal =
            top_fraction_indices(prepared[i].weights, t, TopMode::RemoveTop);
        out = predict_perturbed(model, ex.ids, removal, strategy, config.strategy_options);
      }
      if (config.auc_use_confidence) {
        per_example[i] =
            out.confidence[static_cast<std::size_t>(prepared[i].original.predicted)];
      } else {
        per_example[i] = out.predicted == ex.label ? 1.0 : 0.0;
      }
    });
    double acc = 0.0;
    for (double v : per_example) acc += v;
    performance[ti] = acc / static_cast<double>(n);
  }

  const double span = config.auc_thresholds.back() - config.auc_thresholds.front();
  double area = 0.0;
  for (std::size_t ti = 0; ti + 1 < config.auc_thresholds.size(); ++ti) {
    const double dx = (config.auc_thresholds[ti + 1] - config.auc_thresholds[ti]) / span;
    area += dx * 0.5 * (performance[ti] + performance[ti + 1]);
  }
  return area;
}

MethodStrategyStats aggregate_over_strategies(
    const std::vector<MethodStrategyStats>& per_strategy) {
  MethodStrategyStats out;
  auto combine = [&per_strategy](auto getter) -> std::optional<double> {
    double acc = 0.0;
    int found = 0;
    for (const MethodStrategyStats& s : per_strategy) {
      const std::optional<double>& v = getter(s);
      if (v) {
        acc += *v;
        ++found;
      }
    }
    if (found == 0) return std::nullopt;
    return acc / static_cast<double>(found);
  };
  out.violation_ratio = combine([](const MethodStrategyStats& s) { return s.violation_ratio; });
  out.auc_tp = combine([](const MethodStrategyStats& s) { return s.auc_tp; });
  out.sufficiency = combine([](const MethodStrategyStats& s) { return s.sufficiency; });
  out.comprehensiveness =
      combine([](const MethodStrategyStats& s) { return s.comprehensiveness; });
  out.rank_correlation =
      combine([](const MethodStrategyStats& s) { return s.rank_correlation; });
  for (const MethodStrategyStats& s : per_strategy) {
    out.violation_defined += s.violation_defined;
    out.violation_undefined += s.violation_undefined;
    out.violation_count += s.violation_count;
    out.sufficiency_count += s.sufficiency_count;
    out.comprehensiveness_count += s.comprehensiveness_count;
    out.rank_correlation_defined += s.rank_correlation_defined;
    out.rank_correlation_undefined += s.rank_correlation_undefined;
  }
  return out;
}

}  // namespace faithbench

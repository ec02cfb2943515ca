#ifndef FAITHBENCH_METRICS_HPP
#define FAITHBENCH_METRICS_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "faithbench/perturb.hpp"

namespace faithbench {

struct MetricConfig {
  std::vector<double> sparsity_levels{0.05, 0.10, 0.20, 0.50};
  std::vector<double> auc_thresholds{0.0, 0.05, 0.10, 0.20, 0.30, 0.40,
                                     0.50, 0.60, 0.70, 0.80, 0.90};
  bool auc_use_confidence = false;  // false: accuracy against gold labels
  bool rc_cumulative = false;       // false: x_{:j} removes the single rank-j token
  StrategyOptions strategy_options;
};

struct ViolationRecord {
  int example_id = -1;
  int x_star = -1;       // argmax_i |w_i|, ties -> lowest index
  double weight = 0.0;   // w(x*)
  double delta_c = 0.0;
  bool violation = false;
  bool defined = true;   // false when all weights are zero
  Strategy strategy = Strategy::SliceOut;
};

/// Eq.-style polarity test: violation iff w(x*) * delta_c < 0 strictly.
/// An all-zero explanation is recorded as undefined.
ViolationRecord violation_test(const TextClassifier& model, const std::vector<int>& ids,
                               const std::vector<double>& weights, Strategy strategy,
                               const StrategyOptions& options = {},
                               const PredictOutput* original = nullptr, int example_id = -1);

/// Mean over sparsity levels of f(x) - f(keep top-k%); lower is better.
double sufficiency(const TextClassifier& model, const std::vector<int>& ids,
                   const std::vector<double>& weights, Strategy strategy,
                   const MetricConfig& config, const PredictOutput* original = nullptr);

/// Mean over sparsity levels of f(x) - f(x minus top-k%); higher is better.
double comprehensiveness(const TextClassifier& model, const std::vector<int>& ids,
                         const std::vector<double>& weights, Strategy strategy,
                         const MetricConfig& config, const PredictOutput* original = nullptr);

/// Spearman correlation between |weights| in rank order and the per-rank
/// all-class confidence change. nullopt when fewer than two tokens or when
/// either ranking has no variance.
std::optional<double> rank_correlation(const TextClassifier& model, const std::vector<int>& ids,
                                       const std::vector<double>& weights, Strategy strategy,
                                       const MetricConfig& config,
                                       const PredictOutput* original = nullptr);

/// Spearman's rho with average ranks for ties; NaN when undefined.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Produces explanation weights for corpus example `index`.
using ExplainFn = std::function<std::vector<double>(const Example& example, std::size_t index)>;

/// Area under the threshold-performance curve: mask the top-t% tokens per
/// example for t in auc_thresholds, measure corpus performance, integrate
/// by trapezoid over the threshold span normalized to [0,1]. Lower is
/// better.
double auc_tp(const TextClassifier& model, const Corpus& corpus, const ExplainFn& explain,
              Strategy strategy, const MetricConfig& config, std::size_t threads = 1);

// ---- aggregation ------------------------------------------------------------

struct MethodStrategyStats {
  std::optional<double> violation_ratio;
  std::optional<double> auc_tp;
  std::optional<double> sufficiency;
  std::optional<double> comprehensiveness;
  std::optional<double> rank_correlation;
  int violation_defined = 0;
  int violation_undefined = 0;
  int violation_count = 0;  // number of violating examples
  int sufficiency_count = 0;
  int comprehensiveness_count = 0;
  int rank_correlation_defined = 0;
  int rank_correlation_undefined = 0;
};

/// Unweighted mean of each metric over the per-strategy values (absent
/// metrics stay absent); defined/undefined counts are summed.
MethodStrategyStats aggregate_over_strategies(const std::vector<MethodStrategyStats>& per_strategy);

}  // namespace faithbench

#endif

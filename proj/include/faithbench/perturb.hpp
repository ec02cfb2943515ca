#ifndef FAITHBENCH_PERTURB_HPP
#define FAITHBENCH_PERTURB_HPP

#include <string>
#include <vector>

#include "faithbench/model.hpp"

namespace faithbench {

/// The three token-removal semantics. SliceOut drops the tokens from the
/// sequence; AttentionMask zeroes their attention weights in every module;
/// MaskToken substitutes the reserved MASK id.
enum class Strategy { SliceOut, AttentionMask, MaskToken };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);
inline constexpr Strategy kAllStrategies[] = {Strategy::SliceOut, Strategy::AttentionMask,
                                              Strategy::MaskToken};

struct StrategyOptions {
  bool renormalize_after_mask = false;
};

struct PerturbationOutcome {
  std::vector<int> removed;
  Strategy strategy = Strategy::SliceOut;
  double original_confidence = 0.0;
  double perturbed_confidence = 0.0;
  double delta_c = 0.0;  // original - perturbed, on the original predicted class
  int predicted = 0;     // fixed from the unperturbed pass
};

/// Evaluates the model on `ids` with the tokens at `removed` taken out
/// under the given strategy. Indices must be in range, unique, non-empty,
/// and strictly fewer than the token count.
PredictOutput predict_perturbed(const TextClassifier& model, const std::vector<int>& ids,
                                const std::vector<int>& removed, Strategy strategy,
                                const StrategyOptions& options = {});

/// Confidence perturbation of the original predicted class. An empty
/// removal set is the identity perturbation and yields delta_c == 0 without
/// touching the model. Passing the unperturbed output avoids recomputing it.
PerturbationOutcome delta_confidence(const TextClassifier& model, const std::vector<int>& ids,
                                     const std::vector<int>& removed, Strategy strategy,
                                     const StrategyOptions& options = {},
                                     const PredictOutput* original = nullptr);

enum class TopMode { RemoveTop, KeepTop };

/// Tokens ranked by |weight| descending, ties resolved to the lower index.
/// The top set holds max(1, floor(fraction * N)) tokens; RemoveTop returns
/// it, KeepTop returns its complement. Either result is sorted ascending.
std::vector<int> top_fraction_indices(const std::vector<double>& weights, double fraction,
                                      TopMode mode);

/// Rank order used by top_fraction_indices and the rank-based metrics:
/// indices sorted by |weight| descending, ties by lower token index.
std::vector<int> rank_by_magnitude(const std::vector<double>& weights);

}  // namespace faithbench

#endif

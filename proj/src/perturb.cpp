#include "faithbench/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace faithbench {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::SliceOut: return "slice_out";
    case Strategy::AttentionMask: return "attention_mask";
    case Strategy::MaskToken: return "mask_token";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "slice_out") return Strategy::SliceOut;
  if (s == "attention_mask") return Strategy::AttentionMask;
  if (s == "mask_token") return Strategy::MaskToken;
  throw std::invalid_argument("unknown replacement strategy '" + s + "'");
}

namespace {

std::vector<char> removal_flags(const std::vector<int>& ids, const std::vector<int>& removed) {
  const int n = static_cast<int>(ids.size());
  if (removed.empty()) throw std::invalid_argument("remove_tokens: empty removal set");
  std::vector<char> flags(static_cast<std::size_t>(n), 0);
  for (int idx : removed) {
    if (idx < 0 || idx >= n)
      throw std::invalid_argument("remove_tokens: index " + std::to_string(idx) +
                                  " out of bounds for " + std::to_string(n) + " tokens");
    if (flags[static_cast<std::size_t>(idx)])
      throw std::invalid_argument("remove_tokens: duplicate index " + std::to_string(idx));
    flags[static_cast<std::size_t>(idx)] = 1;
  }
  if (static_cast<int>(removed.size()) >= n)
    throw std::invalid_argument("remove_tokens: removing all tokens is degenerate");
  return flags;
}

}  // namespace

PredictOutput predict_perturbed(const TextClassifier& model, const std::vector<int>& ids,
                                const std::vector<int>& removed, Strategy strategy,
                                const StrategyOptions& options) {
  std::vector<char> flags = removal_flags(ids, removed);
  switch (strategy) {
    case Strategy::SliceOut: {
      std::vector<int> kept;
      kept.reserve(ids.size() - removed.size());
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (!flags[i]) kept.push_back(ids[i]);
      return model.predict(kept);
    }
    case Strategy::AttentionMask: {
      PerturbContext ctx;
      ctx.masked_tokens = flags;
      ctx.renormalize = options.renormalize_after_mask;
      return model.predict(ids, &ctx);
    }
    case Strategy::MaskToken: {
      std::vector<int> replaced = ids;
      const int mask_id = model.mask_token_id();
      for (std::size_t i = 0; i < replaced.size(); ++i)
        if (flags[i]) replaced[i] = mask_id;
      return model.predict(replaced);
    }
  }
  throw std::logic_error("predict_perturbed: unreachable");
}

PerturbationOutcome delta_confidence(const TextClassifier& model, const std::vector<int>& ids,
                                     const std::vector<int>& removed, Strategy strategy,
                                     const StrategyOptions& options,
                                     const PredictOutput* original) {
  PredictOutput base;
  if (!original) {
    base = model.predict(ids);
    original = &base;
  }
  PerturbationOutcome outcome;
  outcome.removed = removed;
  outcome.strategy = strategy;
  outcome.predicted = original->predicted;
  outcome.original_confidence =
      original->confidence[static_cast<std::size_t>(original->predicted)];
  if (removed.empty()) {
    outcome.perturbed_confidence = outcome.original_confidence;
    outcome.delta_c = 0.0;
    return outcome;
  }
  PredictOutput perturbed = predict_perturbed(model, ids, removed, strategy, options);
  outcome.perturbed_confidence =
      perturbed.confidence[static_cast<std::size_t>(original->predicted)];
  outcome.delta_c = outcome.original_confidence - outcome.perturbed_confidence;
  return outcome;
}

std::vector<int> rank_by_magnitude(const std::vector<double>& weights) {
  std::vector<int> order(weights.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&weights](int a, int b) {
    const double ma = std::abs(weights[static_cast<std::size_t>(a)]);
    const double mb = std::abs(weights[static_cast<std::size_t>(b)]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  return order;
}

std::vector<int> top_fraction_indices(const std::vector<double>& weights, double fraction,
                                      TopMode mode) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("top_fraction_indices: fraction must be in (0,1), got " +
                                std::to_string(fraction));
  const int n = static_cast<int>(weights.size());
  if (n == 0) throw std::invalid_argument("top_fraction_indices: empty weights");
  const int count =
      std::max(1, static_cast<int>(std::floor(fraction * static_cast<double>(n))));
  std::vector<int> order = rank_by_magnitude(weights);
  std::vector<char> in_top(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < count; ++i) in_top[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    const bool take = mode == TopMode::RemoveTop ? in_top[static_cast<std::size_t>(i)] == 1
                                                 : in_top[static_cast<std::size_t>(i)] == 0;
    if (take) out.push_back(i);
  }
  return out;
}

}  // namespace faithbench

#ifndef FAITHBENCH_EXPLAIN_HPP
#define FAITHBENCH_EXPLAIN_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "faithbench/lrp.hpp"
#include "faithbench/model.hpp"

namespace faithbench {

enum class Method {
  Random,
  RawAtt,
  AttGrad,
  AttGradAbs,   // alpha ⊙ |grad|
  AttGradSign,  // alpha ⊙ sign(grad)
  AttIn,
  InputGrad,
  IntegratedGradients,
  Plrp,
  Rollout,
  TransAtt,
  GenAtt,
};

const char* method_name(Method m);
Method parse_method(const std::string& s);
/// Transformer-only methods are PLRP, Rollout, TransAtt, GenAtt.
bool method_applicable(Method m, bool is_transformer);
/// Methods whose weights are nonnegative by construction.
bool method_single_polarity(Method m);

std::vector<Method> general_methods();      // the portable set
std::vector<Method> transformer_methods();  // portable + transformer-only

struct Explanation {
  Method method = Method::Random;
  int target_class = 0;
  std::vector<double> weights;  // one signed value per input token
};

enum class IgBaseline { MaskToken, Zero };

struct ExplainOptions {
  ScoreDef score_def = ScoreDef::Logit;
  int ig_steps = 32;
  IgBaseline ig_baseline = IgBaseline::MaskToken;
  std::uint64_t random_seed = 0;
  double lrp_eps = 1e-6;
  /// Transformer position per token (testing hook: permutation checks hold
  /// positional embeddings fixed per token).
  const std::vector<int>* position_ids = nullptr;
};

/// Computes explanations for one (model, example) pair. The traced forward
/// pass, the class-score gradients, and the relevance map are shared across
/// methods and built on first use.
class ExplanationSet {
 public:
  ExplanationSet(const TrainedModel& model, std::vector<int> ids,
                 const ExplainOptions& options = {});

  const Explanation& get(Method m);
  const TracedPrediction& trace() const { return trace_; }
  const PredictOutput& output() const { return trace_.output; }
  int token_count() const { return static_cast<int>(ids_.size()); }

 private:
  std::vector<double> compute(Method m);
  const lrp::RelevanceMap& relevance();
  // Per head, the raw_att row selection: the attention distribution over
  // input tokens (general: the single alpha; transformer: last layer's
  // classification-token row without the CLS column).
  std::vector<std::vector<double>> selected_alpha() const;
  std::vector<std::vector<double>> selected_alpha_grad();

  const TrainedModel& model_;
  std::vector<int> ids_;
  ExplainOptions options_;
  TracedPrediction trace_;
  std::optional<lrp::RelevanceMap> relevance_;
  std::map<Method, Explanation> cache_;
};

Explanation random_explanation(std::size_t n_tokens, std::uint64_t seed);

/// Path integral of input gradients from a baseline embedding to the real
/// one (trapezoidal rule), targeting the class predicted on the real input.
Explanation integrated_gradients(const TrainedModel& model, const std::vector<int>& ids,
                                 const ExplainOptions& options = {});

/// JSON-lines export row: {"example": ..., "method": ..., "target": ...,
/// "weights": [...]}.
std::string explanation_jsonl_row(int example_id, const Explanation& e);

}  // namespace faithbench

#endif

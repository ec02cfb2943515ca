#ifndef FAITHBENCH_MODEL_HPP
#define FAITHBENCH_MODEL_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "faithbench/data.hpp"
#include "faithbench/layers.hpp"
#include "faithbench/tensor.hpp"

namespace faithbench {

enum class EncoderKind { Lstm, Cnn, Transformer };
enum class AttentionKind { Tanh, Dot, MultiHead };
enum class ScoreDef { Logit, Probability };

const char* encoder_kind_name(EncoderKind k);
const char* attention_kind_name(AttentionKind k);
EncoderKind parse_encoder_kind(const std::string& s);
AttentionKind parse_attention_kind(const std::string& s);

struct ModelSpec {
  EncoderKind encoder = EncoderKind::Lstm;
  AttentionKind attention = AttentionKind::Tanh;
  int embed_dim = 64;
  int hidden_dim = 64;
  int encoder_layers = 1;    // stacked encoder layers / transformer blocks
  int heads = 2;
  int classifier_depth = 1;  // hidden relu layers before the output projection
  int num_classes = 2;
  int vocab_size = 0;
  int max_positions = 80;
  int ffn_dim = 0;           // 0 -> 2 * hidden_dim
  int cnn_width = 3;
  int attention_dim = 0;     // tanh-attention projection size; 0 -> hidden_dim
  std::uint64_t seed = 1;

  void validate() const;
  std::string name() const;  // e.g. "lstm_tanh", "cnn_dot", "transformer"
  int effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 2 * hidden_dim; }
  int effective_attention_dim() const { return attention_dim > 0 ? attention_dim : hidden_dim; }
};

struct GeneralParams {
  Tensor embedding;  // (V, E)
  std::vector<LstmParams> lstm;
  std::vector<CnnParams> cnn;
  TanhAttentionParams tanh_att;
  std::vector<Tensor> head_W;  // classifier stack; last entry is (C, H)
  std::vector<Tensor> head_b;
};

struct TransformerParams {
  Tensor embedding;      // (V, D)
  Tensor pos_embedding;  // (P, D); row 0 is the classification-token position
  Tensor cls_token;      // (D)
  std::vector<MultiHeadParams> blocks;
  std::vector<Tensor> head_W;
  std::vector<Tensor> head_b;
};

struct PredictOutput {
  std::vector<double> logits;
  std::vector<double> confidence;
  int predicted = 0;  // argmax, ties -> lowest class index
};

/// Attention-mask replacement: the marked token positions have their
/// attention weights forced to 0 in every attention module.
struct PerturbContext {
  std::vector<char> masked_tokens;
  bool renormalize = false;
};

/// Anything that can score a token sequence. Perturbation and metric code
/// is written against this interface so oracle models can stand in for
/// trained ones.
class TextClassifier {
 public:
  virtual ~TextClassifier() = default;
  virtual int num_classes() const = 0;
  virtual int mask_token_id() const = 0;
  virtual PredictOutput predict(const std::vector<int>& ids,
                                const PerturbContext* attention_mask = nullptr) const = 0;
};

struct TraceOptions {
  const Tensor* embedding_override = nullptr;      // (T, E) in place of the lookup
  const std::vector<int>* position_ids = nullptr;  // transformer: position per token
  const PerturbContext* mask = nullptr;
  const std::vector<double>* score_offsets = nullptr;  // general models only
};

struct TraceGradients {
  // [attention module][head] -> gradient of the class score w.r.t. alpha
  std::vector<std::vector<std::vector<double>>> alpha;
  std::vector<double> token_embeddings;  // flat (T * E)
};

struct HeadLayerRecord {
  Tensor W, b, in, out_pre;
  bool relu = false;
};

struct TrainMeta {
  int epochs = 0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  bool accuracy_floor_met = true;
};

class TracedPrediction {
 public:
  std::vector<int> token_ids;
  PredictOutput output;
  LayerActivationCache cache;
  Tensor token_embeddings;  // (T, E), recorded on the tape
  std::vector<LrpLayerRecord> lrp_layers;       // transformer only
  std::vector<HeadLayerRecord> head_records;    // transformer only
  Tensor final_state;                           // classifier input

  /// Per-class pre-softmax logit gradient (or probability gradient) with
  /// respect to every cached attention matrix and the token embeddings.
  /// Computed on first use via one backward pass; cached per ScoreDef.
  const TraceGradients& gradients(ScoreDef def = ScoreDef::Logit) const;

  /// Gradient of an arbitrary class score w.r.t. the token embeddings.
  /// Runs its own backward pass (not cached).
  std::vector<double> class_gradient_wrt_embeddings(int cls,
                                                    ScoreDef def = ScoreDef::Logit) const;

  /// Drops the tape to free memory. gradients() for a ScoreDef that has
  /// not been computed yet then fails.
  void release_tape();
  bool has_tape() const { return static_cast<bool>(tape_); }
  Tape* tape() const { return tape_.get(); }

 private:
  friend class TrainedModel;
  std::unique_ptr<Tape> tape_;
  Tensor logits_tensor_;
  mutable std::optional<TraceGradients> grads_logit_;
  mutable std::optional<TraceGradients> grads_prob_;
};

struct TrainHyperparams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  int max_epochs = 30;
  int patience = 3;
  double accuracy_floor = 0.85;
};

class TrainedModel : public TextClassifier {
 public:
  TrainedModel() = default;
  /// Fresh model with seeded random initialization.
  TrainedModel(ModelSpec spec, std::shared_ptr<Vocabulary> vocab);

  int num_classes() const override { return spec_.num_classes; }
  int mask_token_id() const override { return Vocabulary::kMask; }
  PredictOutput predict(const std::vector<int>& ids,
                        const PerturbContext* attention_mask = nullptr) const override;
  TracedPrediction predict_traced(const std::vector<int>& ids,
                                  const TraceOptions& options = {}) const;

  const ModelSpec& spec() const { return spec_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<Vocabulary> vocab_ptr() const { return vocab_; }
  TrainMeta& meta() { return meta_; }
  const TrainMeta& meta() const { return meta_; }

  bool is_transformer() const { return spec_.encoder == EncoderKind::Transformer; }
  const GeneralParams& general_params() const { return general_; }
  const TransformerParams& transformer_params() const { return transformer_; }

  /// Canonical parameter enumeration (name, tensor). The order is stable
  /// and shared by the optimizer and the checkpoint format.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;

  struct TapedForward {
    Tensor logits;                // (C), recorded on the tape
    std::vector<Tensor> watched;  // parameters in canonical order, as tape leaves
  };
  /// Forward pass with every parameter watched on `tape`; the trainer reads
  /// parameter gradients from the returned leaves after backward().
  TapedForward forward_for_training(Tape& tape, const std::vector<int>& ids) const;

 private:
  friend TrainedModel train(const Corpus&, const Corpus&, const ModelSpec&,
                            const TrainHyperparams&);
  friend class CheckpointCodec;

  ModelSpec spec_;
  std::shared_ptr<Vocabulary> vocab_;
  GeneralParams general_;
  TransformerParams transformer_;
  TrainMeta meta_;
};

/// Adam with cross-entropy loss, early stopping on validation-accuracy
/// plateau; restores the best-validation parameters. Deterministic given
/// spec.seed. Throws on NaN loss (reporting the epoch); an unmet accuracy
/// floor only clears meta().accuracy_floor_met.
TrainedModel train(const Corpus& train_split, const Corpus& val_split, const ModelSpec& spec,
                   const TrainHyperparams& hp = {});

double accuracy(const TextClassifier& model, const Corpus& corpus);

}  // namespace faithbench

#endif

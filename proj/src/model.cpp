#include "faithbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "faithbench/rng.hpp"

namespace faithbench {

const char* encoder_kind_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::Lstm: return "lstm";
    case EncoderKind::Cnn: return "cnn";
    case EncoderKind::Transformer: return "transformer";
  }
  return "?";
}

const char* attention_kind_name(AttentionKind k) {
  switch (k) {
    case AttentionKind::Tanh: return "tanh";
    case AttentionKind::Dot: return "dot";
    case AttentionKind::MultiHead: return "multihead";
  }
  return "?";
}

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "lstm") return EncoderKind::Lstm;
  if (s == "cnn") return EncoderKind::Cnn;
  if (s == "transformer") return EncoderKind::Transformer;
  throw std::invalid_argument("unknown encoder kind '" + s + "'");
}

AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "tanh") return AttentionKind::Tanh;
  if (s == "dot") return AttentionKind::Dot;
  if (s == "multihead") return AttentionKind::MultiHead;
  throw std::invalid_argument("unknown attention kind '" + s + "'");
}

void ModelSpec::validate() const {
  if (encoder_layers < 1) throw std::invalid_argument("model spec: encoder_layers must be >= 1");
  if (classifier_depth < 0) throw std::invalid_argument("model spec: classifier_depth must be >= 0");
  if (num_classes < 2) throw std::invalid_argument("model spec: num_classes must be >= 2");
  if (vocab_size < 3) throw std::invalid_argument("model spec: vocab_size must cover reserved ids");
  if (embed_dim < 1 || hidden_dim < 1) throw std::invalid_argument("model spec: bad widths");
  if (encoder == EncoderKind::Transformer) {
    if (attention != AttentionKind::MultiHead)
      throw std::invalid_argument("model spec: transformer encoder requires multihead attention");
    if (embed_dim != hidden_dim)
      throw std::invalid_argument("model spec: transformer requires embed_dim == hidden_dim");
    if (heads < 1 || hidden_dim % heads != 0)
      throw std::invalid_argument("model spec: heads must divide hidden_dim");
  } else {
    if (attention == AttentionKind::MultiHead)
      throw std::invalid_argument("model spec: multihead attention requires transformer encoder");
  }
}

std::string ModelSpec::name() const {
  if (encoder == EncoderKind::Transformer) return "transformer";
  return std::string(encoder_kind_name(encoder)) + "_" + attention_kind_name(attention);
}

// ---- parameter initialization ------------------------------------------------

namespace {

Tensor init_normal(std::mt19937_64& rng, std::vector<int> shape, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor init_uniform_fan(std::mt19937_64& rng, int fan_out, int fan_in) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(static_cast<std::size_t>(fan_out) * static_cast<std::size_t>(fan_in));
  for (double& x : v) x = dist(rng);
  return Tensor({fan_out, fan_in}, std::move(v));
}

Tensor init_uniform_vec(std::mt19937_64& rng, int n, int fan_in) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + n));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = dist(rng);
  return Tensor({n}, std::move(v));
}

void init_classifier_head(std::mt19937_64& rng, const ModelSpec& spec, std::vector<Tensor>& head_W,
                          std::vector<Tensor>& head_b) {
  const int h = spec.hidden_dim;
  for (int i = 0; i < spec.classifier_depth; ++i) {
    head_W.push_back(init_uniform_fan(rng, h, h));
    head_b.push_back(Tensor::zeros({h}));
  }
  head_W.push_back(init_uniform_fan(rng, spec.num_classes, h));
  head_b.push_back(Tensor::zeros({spec.num_classes}));
}

template <typename Fn>
void for_each_tensor(const ModelSpec& spec, GeneralParams& p, Fn&& fn) {
  fn("embedding", p.embedding);
  for (std::size_t l = 0; l < p.lstm.size(); ++l) {
    const std::string tag = "lstm" + std::to_string(l) + ".";
    fn((tag + "Wx").c_str(), p.lstm[l].Wx);
    fn((tag + "Wh").c_str(), p.lstm[l].Wh);
    fn((tag + "b").c_str(), p.lstm[l].b);
  }
  for (std::size_t l = 0; l < p.cnn.size(); ++l) {
    const std::string tag = "cnn" + std::to_string(l) + ".";
    fn((tag + "kernels").c_str(), p.cnn[l].kernels);
    fn((tag + "bias").c_str(), p.cnn[l].bias);
  }
  if (spec.attention == AttentionKind::Tanh) {
    fn("att.w1", p.tanh_att.w1);
    fn("att.W2", p.tanh_att.W2);
    fn("att.W3", p.tanh_att.W3);
  }
  for (std::size_t i = 0; i < p.head_W.size(); ++i) {
    const std::string tag = "head" + std::to_string(i) + ".";
    fn((tag + "W").c_str(), p.head_W[i]);
    fn((tag + "b").c_str(), p.head_b[i]);
  }
}

template <typename Fn>
void for_each_tensor(const ModelSpec& spec, TransformerParams& p, Fn&& fn) {
  (void)spec;
  fn("embedding", p.embedding);
  fn("pos_embedding", p.pos_embedding);
  fn("cls_token", p.cls_token);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    MultiHeadParams& b = p.blocks[l];
    const std::string tag = "block" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < b.Wq.size(); ++h) {
      const std::string ht = tag + "h" + std::to_string(h) + ".";
      fn((ht + "Wq").c_str(), b.Wq[h]);
      fn((ht + "Wk").c_str(), b.Wk[h]);
      fn((ht + "Wv").c_str(), b.Wv[h]);
    }
    fn((tag + "Wo").c_str(), b.Wo);
    fn((tag + "bo").c_str(), b.bo);
    fn((tag + "ln1_gain").c_str(), b.ln1_gain);
    fn((tag + "ln1_bias").c_str(), b.ln1_bias);
    fn((tag + "ln2_gain").c_str(), b.ln2_gain);
    fn((tag + "ln2_bias").c_str(), b.ln2_bias);
    fn((tag + "ff_W1").c_str(), b.ff_W1);
    fn((tag + "ff_b1").c_str(), b.ff_b1);
    fn((tag + "ff_W2").c_str(), b.ff_W2);
    fn((tag + "ff_b2").c_str(), b.ff_b2);
  }
  for (std::size_t i = 0; i < p.head_W.size(); ++i) {
    const std::string tag = "head" + std::to_string(i) + ".";
    fn((tag + "W").c_str(), p.head_W[i]);
    fn((tag + "b").c_str(), p.head_b[i]);
  }
}

}  // namespace

TrainedModel::TrainedModel(ModelSpec spec, std::shared_ptr<Vocabulary> vocab)
    : spec_(std::move(spec)), vocab_(std::move(vocab)) {
  if (vocab_ && spec_.vocab_size == 0) spec_.vocab_size = vocab_->size();
  spec_.validate();
  std::mt19937_64 rng = make_rng(spec_.seed, 42);
  meta_.seed = spec_.seed;
  if (spec_.encoder == EncoderKind::Transformer) {
    const int d = spec_.hidden_dim;
    transformer_.embedding = init_normal(rng, {spec_.vocab_size, d}, 0.1);
    transformer_.pos_embedding = init_normal(rng, {spec_.max_positions, d}, 0.1);
    transformer_.cls_token = init_normal(rng, {d}, 0.1);
    const int dh = d / spec_.heads;
    for (int l = 0; l < spec_.encoder_layers; ++l) {
      MultiHeadParams b;
      b.heads = spec_.heads;
      b.head_dim = dh;
      for (int h = 0; h < spec_.heads; ++h) {
        b.Wq.push_back(init_uniform_fan(rng, dh, d));
        b.Wk.push_back(init_uniform_fan(rng, dh, d));
        b.Wv.push_back(init_uniform_fan(rng, dh, d));
      }
      b.Wo = init_uniform_fan(rng, d, d);
      b.bo = Tensor::zeros({d});
      b.ln1_gain = Tensor::full({d}, 1.0);
      b.ln1_bias = Tensor::zeros({d});
      b.ln2_gain = Tensor::full({d}, 1.0);
      b.ln2_bias = Tensor::zeros({d});
      const int f = spec_.effective_ffn_dim();
      b.ff_W1 = init_uniform_fan(rng, f, d);
      b.ff_b1 = Tensor::zeros({f});
      b.ff_W2 = init_uniform_fan(rng, d, f);
      b.ff_b2 = Tensor::zeros({d});
      transformer_.blocks.push_back(std::move(b));
    }
    init_classifier_head(rng, spec_, transformer_.head_W, transformer_.head_b);
  } else {
    general_.embedding = init_normal(rng, {spec_.vocab_size, spec_.embed_dim}, 0.1);
    const int h = spec_.hidden_dim;
    for (int l = 0; l < spec_.encoder_layers; ++l) {
      const int in_dim = l == 0 ? spec_.embed_dim : h;
      if (spec_.encoder == EncoderKind::Lstm) {
        LstmParams lp;
        lp.Wx = init_uniform_fan(rng, 4 * h, in_dim);
        lp.Wh = init_uniform_fan(rng, 4 * h, h);
        std::vector<double> b(static_cast<std::size_t>(4 * h), 0.0);
        for (int i = h; i < 2 * h; ++i) b[static_cast<std::size_t>(i)] = 1.0;  // forget gate
        lp.b = Tensor({4 * h}, std::move(b));
        general_.lstm.push_back(std::move(lp));
      } else {
        CnnParams cp;
        cp.width = spec_.cnn_width;
        cp.kernels = init_uniform_fan(rng, h, cp.width * in_dim);
        cp.bias = Tensor::zeros({h});
        general_.cnn.push_back(std::move(cp));
      }
    }
    if (spec_.attention == AttentionKind::Tanh) {
      const int a = spec_.effective_attention_dim();
      general_.tanh_att.w1 = init_uniform_vec(rng, a, a);
      general_.tanh_att.W2 = init_uniform_fan(rng, a, h);
      general_.tanh_att.W3 = init_uniform_fan(rng, a, h);
    }
    init_classifier_head(rng, spec_, general_.head_W, general_.head_b);
  }
}

std::vector<std::pair<std::string, Tensor*>> TrainedModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto collect = [&out](const char* name, Tensor& t) { out.emplace_back(name, &t); };
  if (is_transformer())
    for_each_tensor(spec_, transformer_, collect);
  else
    for_each_tensor(spec_, general_, collect);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> TrainedModel::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  auto* self = const_cast<TrainedModel*>(this);
  for (auto& [name, t] : self->parameters()) out.emplace_back(name, t);
  return out;
}

// ---- forward passes ---------------------------------------------------------

namespace {

struct ForwardHooks {
  LayerActivationCache* cache = nullptr;
  std::vector<LrpLayerRecord>* lrp = nullptr;
  std::vector<HeadLayerRecord>* head_records = nullptr;
  Tensor* token_embeddings_out = nullptr;
  Tensor* final_state_out = nullptr;
};

void check_ids(const std::vector<int>& ids, int vocab_size) {
  if (ids.empty()) throw std::invalid_argument("predict: empty example");
  for (int id : ids)
    if (id < 0 || id >= vocab_size)
      throw std::invalid_argument("predict: token id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(vocab_size));
}

Tensor classifier_head(const std::vector<Tensor>& head_W, const std::vector<Tensor>& head_b,
                       const Tensor& input, std::vector<HeadLayerRecord>* records) {
  Tensor h = input;
  for (std::size_t i = 0; i < head_W.size(); ++i) {
    Tensor pre = linear_vec(head_W[i], h, head_b[i]);
    const bool is_hidden = i + 1 < head_W.size();
    if (records)
      records->push_back({head_W[i], head_b[i], h, pre, is_hidden});
    h = is_hidden ? relu(pre) : pre;
  }
  return h;
}

Tensor forward_general(const ModelSpec& spec, const GeneralParams& p, const std::vector<int>& ids,
                       const TraceOptions& options, const ForwardHooks& hooks) {
  const int t_len = static_cast<int>(ids.size());
  Tensor emb;
  if (options.embedding_override) {
    emb = *options.embedding_override;
    if (emb.rank() != 2 || emb.dim(0) != t_len || emb.dim(1) != spec.embed_dim)
      throw std::invalid_argument("embedding override " + emb.shape_string() +
                                  " incompatible with " + std::to_string(t_len) + " tokens x " +
                                  std::to_string(spec.embed_dim));
  } else {
    emb = embedding_lookup(p.embedding, ids);
  }
  if (hooks.token_embeddings_out) *hooks.token_embeddings_out = emb;

  AttentionOverride ov;
  std::vector<char> masked;
  if (options.mask) {
    masked = options.mask->masked_tokens;
    if (static_cast<int>(masked.size()) != t_len)
      throw std::invalid_argument("attention mask length does not match token count");
    ov.masked_keys = &masked;
    ov.renormalize = options.mask->renormalize;
  }
  ov.score_offsets = options.score_offsets;
  const bool has_override = ov.masked_keys != nullptr || ov.score_offsets != nullptr;

  Tensor keys;
  Tensor query;
  Tensor x = emb;
  if (spec.encoder == EncoderKind::Lstm) {
    LstmResult res;
    for (const LstmParams& lp : p.lstm) {
      res = lstm_encode(lp, x);
      x = res.states;
    }
    keys = res.states;
    query = res.final_state;
  } else {
    CnnResult res;
    for (const CnnParams& cp : p.cnn) {
      res = cnn_encode_padded(cp, x);
      x = res.features;
    }
    keys = res.features;
    query = res.query;
  }

  AttentionResult att;
  if (spec.attention == AttentionKind::Tanh) {
    att = tanh_attention(p.tanh_att, query, keys, has_override ? &ov : nullptr);
  } else {
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(keys.dim(1)));
    att = dot_attention(query, keys, keys, scale_factor, has_override ? &ov : nullptr);
  }
  if (hooks.cache) {
    AttentionModuleRecord rec;
    rec.layer = 0;
    rec.alpha.push_back(att.alpha);
    rec.mixing.push_back(att.mixing);
    rec.scores.push_back(att.scores);
    rec.values.push_back(keys);
    std::vector<double> norms(static_cast<std::size_t>(keys.dim(0)), 0.0);
    for (int i = 0; i < keys.dim(0); ++i) {
      double acc = 0.0;
      for (int j = 0; j < keys.dim(1); ++j) {
        const double v = keys.at(i, j);
        acc += v * v;
      }
      norms[static_cast<std::size_t>(i)] = std::sqrt(acc);
    }
    rec.value_norms.push_back(std::move(norms));
    hooks.cache->modules.push_back(std::move(rec));
  }
  if (hooks.final_state_out) *hooks.final_state_out = att.context;
  return classifier_head(p.head_W, p.head_b, att.context, hooks.head_records);
}

Tensor forward_transformer(const ModelSpec& spec, const TransformerParams& p,
                           const std::vector<int>& ids, const TraceOptions& options,
                           const ForwardHooks& hooks) {
  const int t_len = static_cast<int>(ids.size());
  const int d = spec.hidden_dim;
  if (t_len + 1 > spec.max_positions)
    throw std::invalid_argument("predict: sequence of " + std::to_string(t_len) +
                                " tokens exceeds max_positions " +
                                std::to_string(spec.max_positions));
  Tensor tok;
  if (options.embedding_override) {
    tok = *options.embedding_override;
    if (tok.rank() != 2 || tok.dim(0) != t_len || tok.dim(1) != d)
      throw std::invalid_argument("embedding override " + tok.shape_string() +
                                  " incompatible with " + std::to_string(t_len) + " tokens x " +
                                  std::to_string(d));
  } else {
    tok = embedding_lookup(p.embedding, ids);
  }
  if (hooks.token_embeddings_out) *hooks.token_embeddings_out = tok;

  std::vector<int> positions(static_cast<std::size_t>(t_len));
  if (options.position_ids) {
    if (options.position_ids->size() != static_cast<std::size_t>(t_len))
      throw std::invalid_argument("position_ids length does not match token count");
    for (int i = 0; i < t_len; ++i) {
      const int pid = (*options.position_ids)[static_cast<std::size_t>(i)] + 1;
      if (pid < 1 || pid >= spec.max_positions)
        throw std::invalid_argument("position id out of range");
      positions[static_cast<std::size_t>(i)] = pid;
    }
  } else {
    for (int i = 0; i < t_len; ++i) positions[static_cast<std::size_t>(i)] = i + 1;
  }
  Tensor pos = gather_rows(p.pos_embedding, positions);
  Tensor x_tokens = add(tok, pos);
  Tensor cls = add(reshape(p.cls_token, {1, d}), gather_rows(p.pos_embedding, {0}));
  Tensor x = concat({cls, x_tokens}, 0);  // (T+1, D)

  AttentionOverride ov;
  std::vector<char> masked;
  if (options.mask) {
    masked = options.mask->masked_tokens;
    if (static_cast<int>(masked.size()) != t_len)
      throw std::invalid_argument("attention mask length does not match token count");
    ov.masked_keys = &masked;
    ov.renormalize = options.mask->renormalize;
  }
  const AttentionOverride* ov_ptr = options.mask ? &ov : nullptr;

  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    LrpLayerRecord rec;
    x = transformer_layer(p.blocks[l], x, static_cast<int>(l), hooks.cache,
                          hooks.lrp ? &rec : nullptr, ov_ptr, 1);
    if (hooks.lrp) hooks.lrp->push_back(std::move(rec));
  }
  Tensor cls_state = reshape(gather_rows(x, {0}), {d});
  if (hooks.final_state_out) *hooks.final_state_out = cls_state;
  return classifier_head(p.head_W, p.head_b, cls_state, hooks.head_records);
}

PredictOutput finalize_output(const Tensor& logits) {
  PredictOutput out;
  out.logits = logits.values();
  Tensor conf = softmax(Tensor(logits.shape(), logits.values()));
  out.confidence = conf.values();
  out.predicted = 0;
  for (std::size_t c = 1; c < out.confidence.size(); ++c)
    if (out.confidence[c] > out.confidence[static_cast<std::size_t>(out.predicted)])
      out.predicted = static_cast<int>(c);
  return out;
}

}  // namespace

PredictOutput TrainedModel::predict(const std::vector<int>& ids,
                                    const PerturbContext* attention_mask) const {
  check_ids(ids, spec_.vocab_size);
  TraceOptions options;
  options.mask = attention_mask;
  ForwardHooks hooks;
  Tensor logits = is_transformer()
                      ? forward_transformer(spec_, transformer_, ids, options, hooks)
                      : forward_general(spec_, general_, ids, options, hooks);
  return finalize_output(logits);
}

namespace {

template <typename Params>
Params watch_params(const ModelSpec& spec, const Params& src, Tape& tape) {
  Params copy = src;
  for_each_tensor(spec, copy, [&tape](const char*, Tensor& t) { t = tape.watch(t); });
  return copy;
}

}  // namespace

TracedPrediction TrainedModel::predict_traced(const std::vector<int>& ids,
                                              const TraceOptions& options) const {
  check_ids(ids, spec_.vocab_size);
  TracedPrediction tp;
  tp.token_ids = ids;
  tp.tape_ = std::make_unique<Tape>();

  TraceOptions opts = options;
  Tensor override_leaf;
  if (options.embedding_override) {
    override_leaf = tp.tape_->watch(*options.embedding_override);
    opts.embedding_override = &override_leaf;
  }

  ForwardHooks hooks;
  hooks.cache = &tp.cache;
  hooks.token_embeddings_out = &tp.token_embeddings;
  hooks.final_state_out = &tp.final_state;
  if (is_transformer()) {
    hooks.lrp = &tp.lrp_layers;
    hooks.head_records = &tp.head_records;
    TransformerParams watched = watch_params(spec_, transformer_, *tp.tape_);
    tp.logits_tensor_ = forward_transformer(spec_, watched, ids, opts, hooks);
  } else {
    GeneralParams watched = watch_params(spec_, general_, *tp.tape_);
    tp.logits_tensor_ = forward_general(spec_, watched, ids, opts, hooks);
  }
  tp.output = finalize_output(tp.logits_tensor_);
  return tp;
}

TrainedModel::TapedForward TrainedModel::forward_for_training(
    Tape& tape, const std::vector<int>& ids) const {
  check_ids(ids, spec_.vocab_size);
  TapedForward out;
  ForwardHooks hooks;
  TraceOptions options;
  if (is_transformer()) {
    TransformerParams watched = watch_params(spec_, transformer_, tape);
    for_each_tensor(spec_, watched, [&out](const char*, Tensor& t) { out.watched.push_back(t); });
    out.logits = forward_transformer(spec_, watched, ids, options, hooks);
  } else {
    GeneralParams watched = watch_params(spec_, general_, tape);
    for_each_tensor(spec_, watched, [&out](const char*, Tensor& t) { out.watched.push_back(t); });
    out.logits = forward_general(spec_, watched, ids, options, hooks);
  }
  return out;
}

const TraceGradients& TracedPrediction::gradients(ScoreDef def) const {
  auto& slot = def == ScoreDef::Logit ? grads_logit_ : grads_prob_;
  if (slot) return *slot;
  if (!tape_)
    throw std::runtime_error("gradients: trace tape already released");
  Tensor root = def == ScoreDef::Logit
                    ? pick(logits_tensor_, output.predicted)
                    : pick(softmax(logits_tensor_), output.predicted);
  tape_->backward(root);
  TraceGradients g;
  for (const AttentionModuleRecord& module : cache.modules) {
    std::vector<std::vector<double>> per_head;
    for (const Tensor& alpha : module.alpha) {
      if (tape_->has_gradient(alpha))
        per_head.push_back(tape_->gradient(alpha));
      else
        per_head.push_back(std::vector<double>(alpha.size(), 0.0));
    }
    g.alpha.push_back(std::move(per_head));
  }
  if (tape_->has_gradient(token_embeddings))
    g.token_embeddings = tape_->gradient(token_embeddings);
  else
    g.token_embeddings.assign(token_embeddings.size(), 0.0);
  slot = std::move(g);
  return *slot;
}

std::vector<double> TracedPrediction::class_gradient_wrt_embeddings(int cls, ScoreDef def) const {
  if (!tape_) throw std::runtime_error("class_gradient_wrt_embeddings: trace tape already released");
  if (cls < 0 || static_cast<std::size_t>(cls) >= output.logits.size())
    throw std::invalid_argument("class_gradient_wrt_embeddings: class " + std::to_string(cls) +
                                " out of range");
  Tensor root = def == ScoreDef::Logit ? pick(logits_tensor_, cls)
                                       : pick(softmax(logits_tensor_), cls);
  tape_->backward(root);
  if (tape_->has_gradient(token_embeddings)) return tape_->gradient(token_embeddings);
  return std::vector<double>(token_embeddings.size(), 0.0);
}

void TracedPrediction::release_tape() { tape_.reset(); }

double accuracy(const TextClassifier& model, const Corpus& corpus) {
  if (corpus.examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const Example& ex : corpus.examples) {
    if (model.predict(ex.ids).predicted == ex.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(corpus.examples.size());
}

}  // namespace faithbench

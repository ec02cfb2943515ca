#include "faithbench/explain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "faithbench/rng.hpp"

namespace faithbench {

const char* method_name(Method m) {
  switch (m) {
    case Method::Random: return "random";
    case Method::RawAtt: return "raw_att";
    case Method::AttGrad: return "att_grad";
    case Method::AttGradAbs: return "att_grad_abs";
    case Method::AttGradSign: return "att_grad_sign";
    case Method::AttIn: return "att_in";
    case Method::InputGrad: return "input_grad";
    case Method::IntegratedGradients: return "ig";
    case Method::Plrp: return "plrp";
    case Method::Rollout: return "rollout";
    case Method::TransAtt: return "trans_att";
    case Method::GenAtt: return "gen_att";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::Random, Method::RawAtt, Method::AttGrad, Method::AttGradAbs,
                   Method::AttGradSign, Method::AttIn, Method::InputGrad,
                   Method::IntegratedGradients, Method::Plrp, Method::Rollout, Method::TransAtt,
                   Method::GenAtt}) {
    if (s == method_name(m)) return m;
  }
  throw std::invalid_argument("unknown explanation method '" + s + "'");
}

bool method_applicable(Method m, bool is_transformer) {
  switch (m) {
    case Method::Plrp:
    case Method::Rollout:
    case Method::TransAtt:
    case Method::GenAtt:
      return is_transformer;
    default:
      return true;
  }
}

bool method_single_polarity(Method m) {
  return m == Method::RawAtt || m == Method::AttIn || m == Method::Rollout;
}

std::vector<Method> general_methods() {
  return {Method::Random,   Method::RawAtt,    Method::AttGrad,
          Method::AttIn,    Method::InputGrad, Method::IntegratedGradients};
}

std::vector<Method> transformer_methods() {
  std::vector<Method> out = general_methods();
  out.insert(out.end(), {Method::Plrp, Method::Rollout, Method::TransAtt, Method::GenAtt});
  return out;
}

namespace {

// Small square-matrix helper for the layer-aggregation methods.
struct Mat {
  int n = 0;
  std::vector<double> v;

  static Mat identity(int n) {
    Mat m;
    m.n = n;
    m.v.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) m.v[static_cast<std::size_t>(i) * n + i] = 1.0;
    return m;
  }
  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * n + j]; }
};

Mat matmul_sq(const Mat& a, const Mat& b) {
  Mat out;
  out.n = a.n;
  out.v.assign(a.v.size(), 0.0);
  for (int i = 0; i < a.n; ++i)
    for (int k = 0; k < a.n; ++k) {
      const double x = a.at(i, k);
      if (x == 0.0) continue;
      for (int j = 0; j < a.n; ++j) out.at(i, j) += x * b.at(k, j);
    }
  return out;
}

Mat head_mean(const std::vector<std::vector<double>>& per_head, int n) {
  Mat out;
  out.n = n;
  out.v.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (const auto& h : per_head)
    for (std::size_t i = 0; i < h.size(); ++i) out.v[i] += h[i];
  const double denom = static_cast<double>(per_head.size());
  for (double& x : out.v) x /= denom;
  return out;
}

std::vector<double> cls_row_over_tokens(const Mat& m) {
  std::vector<double> out(static_cast<std::size_t>(m.n - 1));
  for (int j = 1; j < m.n; ++j) out[static_cast<std::size_t>(j - 1)] = m.at(0, j);
  return out;
}

void normalize_if_positive(std::vector<double>& w) {
  double s = 0.0;
  for (double x : w) s += x;
  if (s > 0.0)
    for (double& x : w) x /= s;
}

}  // namespace

ExplanationSet::ExplanationSet(const TrainedModel& model, std::vector<int> ids,
                               const ExplainOptions& options)
    : model_(model), ids_(std::move(ids)), options_(options) {
  TraceOptions topt;
  topt.position_ids = options_.position_ids;
  trace_ = model_.predict_traced(ids_, topt);
  if (trace_.cache.modules.empty())
    throw std::runtime_error("explanations require at least one cached attention module");
}

const lrp::RelevanceMap& ExplanationSet::relevance() {
  if (!relevance_) {
    lrp::Options o;
    o.eps = options_.lrp_eps;
    relevance_ = lrp::propagate_relevance(trace_, o);
  }
  return *relevance_;
}

std::vector<std::vector<double>> ExplanationSet::selected_alpha() const {
  const int t_len = static_cast<int>(ids_.size());
  const AttentionModuleRecord& last = trace_.cache.modules.back();
  std::vector<std::vector<double>> out;
  if (!model_.is_transformer()) {
    out.push_back(last.alpha[0].values());
    return out;
  }
  const int s = last.alpha[0].dim(0);
  for (const Tensor& alpha : last.alpha) {
    std::vector<double> row(static_cast<std::size_t>(t_len));
    for (int j = 0; j < t_len; ++j) row[static_cast<std::size_t>(j)] = alpha[static_cast<std::size_t>(j + 1)];
    (void)s;
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<double>> ExplanationSet::selected_alpha_grad() {
  const int t_len = static_cast<int>(ids_.size());
  const TraceGradients& grads = trace_.gradients(options_.score_def);
  const std::size_t last = trace_.cache.modules.size() - 1;
  std::vector<std::vector<double>> out;
  if (!model_.is_transformer()) {
    out.push_back(grads.alpha[last][0]);
    return out;
  }
  const int s = trace_.cache.modules[last].alpha[0].dim(0);
  for (const std::vector<double>& g : grads.alpha[last]) {
    std::vector<double> row(static_cast<std::size_t>(t_len));
    // classification-token query row, token key columns
    for (int j = 0; j < t_len; ++j) row[static_cast<std::size_t>(j)] = g[static_cast<std::size_t>(j + 1)];
    (void)s;
    out.push_back(std::move(row));
  }
  return out;
}

const Explanation& ExplanationSet::get(Method m) {
  auto it = cache_.find(m);
  if (it != cache_.end()) return it->second;
  if (!method_applicable(m, model_.is_transformer()))
    throw std::invalid_argument(std::string("method ") + method_name(m) +
                                " is only defined for transformer models");
  Explanation e;
  e.method = m;
  e.target_class = trace_.output.predicted;
  e.weights = compute(m);
  if (e.weights.size() != ids_.size())
    throw std::logic_error("explanation length mismatch");
  for (double w : e.weights)
    if (!std::isfinite(w)) throw std::runtime_error("explanation produced a non-finite weight");
  auto [pos, inserted] = cache_.emplace(m, std::move(e));
  (void)inserted;
  return pos->second;
}

std::vector<double> ExplanationSet::compute(Method m) {
  const int t_len = static_cast<int>(ids_.size());
  switch (m) {
    case Method::Random:
      return random_explanation(static_cast<std::size_t>(t_len), options_.random_seed).weights;

    case Method::RawAtt: {
      auto alpha = selected_alpha();
      std::vector<double> w(static_cast<std::size_t>(t_len), 0.0);
      for (const auto& head : alpha)
        for (int i = 0; i < t_len; ++i) w[static_cast<std::size_t>(i)] += head[static_cast<std::size_t>(i)];
      for (double& x : w) x /= static_cast<double>(alpha.size());
      return w;
    }

    case Method::AttGrad:
    case Method::AttGradAbs:
    case Method::AttGradSign: {
      auto alpha = selected_alpha();
      auto grad = selected_alpha_grad();
      std::vector<double> w(static_cast<std::size_t>(t_len), 0.0);
      for (std::size_t h = 0; h < alpha.size(); ++h) {
        for (int i = 0; i < t_len; ++i) {
          const double a = alpha[h][static_cast<std::size_t>(i)];
          const double g = grad[h][static_cast<std::size_t>(i)];
          double factor = g;
          if (m == Method::AttGradAbs) factor = std::abs(g);
          if (m == Method::AttGradSign) factor = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
          w[static_cast<std::size_t>(i)] += a * factor;
        }
      }
      for (double& x : w) x /= static_cast<double>(alpha.size());
      return w;
    }

    case Method::AttIn: {
      auto alpha = selected_alpha();
      const AttentionModuleRecord& last = trace_.cache.modules.back();
      const int key_offset = model_.is_transformer() ? 1 : 0;
      std::vector<double> w(static_cast<std::size_t>(t_len), 0.0);
      for (std::size_t h = 0; h < alpha.size(); ++h) {
        const std::vector<double>& norms = last.value_norms[h];
        for (int i = 0; i < t_len; ++i)
          w[static_cast<std::size_t>(i)] +=
              alpha[h][static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(i + key_offset)];
      }
      for (double& x : w) x /= static_cast<double>(alpha.size());
      return w;
    }

    case Method::InputGrad: {
      const TraceGradients& grads = trace_.gradients(options_.score_def);
      const Tensor& emb = trace_.token_embeddings;
      const int e_dim = emb.dim(1);
      std::vector<double> w(static_cast<std::size_t>(t_len), 0.0);
      for (int i = 0; i < t_len; ++i) {
        double acc = 0.0;
        for (int j = 0; j < e_dim; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * e_dim + j;
          acc += emb[idx] * grads.token_embeddings[idx];
        }
        w[static_cast<std::size_t>(i)] = acc;
      }
      return w;
    }

    case Method::IntegratedGradients:
      return integrated_gradients(model_, ids_, options_).weights;

    case Method::Plrp: {
      const lrp::RelevanceMap& map = relevance();
      const auto& last = map.alpha.back();
      std::vector<double> w(static_cast<std::size_t>(t_len), 0.0);
      const int s = map.seq_len;
      for (const std::vector<double>& head : last)
        for (int j = 0; j < t_len; ++j)
          w[static_cast<std::size_t>(j)] += head[static_cast<std::size_t>(j + 1)];
      (void)s;
      for (double& x : w) x /= static_cast<double>(last.size());
      return w;
    }

    case Method::Rollout: {
      const auto& modules = trace_.cache.modules;
      const int s = modules.front().alpha[0].dim(0);
      Mat product;
      for (std::size_t l = 0; l < modules.size(); ++l) {
        std::vector<std::vector<double>> heads;
        for (const Tensor& a : modules[l].alpha) heads.push_back(a.values());
        Mat a_bar = head_mean(heads, s);
        // 0.5 * headmean + 0.5 * identity, rows re-normalized
        for (int i = 0; i < s; ++i) {
          double row_sum = 0.0;
          for (int j = 0; j < s; ++j) {
            double x = 0.5 * a_bar.at(i, j) + (i == j ? 0.5 : 0.0);
            a_bar.at(i, j) = x;
            row_sum += x;
          }
          for (int j = 0; j < s; ++j) a_bar.at(i, j) /= row_sum;
        }
        product = l == 0 ? a_bar : matmul_sq(a_bar, product);
      }
      return cls_row_over_tokens(product);
    }

    case Method::TransAtt:
    case Method::GenAtt: {
      const TraceGradients& grads = trace_.gradients(options_.score_def);
      const auto& modules = trace_.cache.modules;
      const int s = modules.front().alpha[0].dim(0);
      const lrp::RelevanceMap* map = m == Method::TransAtt ? &relevance() : nullptr;
      Mat c = Mat::identity(s);
      for (std::size_t l = 0; l < modules.size(); ++l) {
        std::vector<std::vector<double>> heads;
        for (std::size_t h = 0; h < modules[l].alpha.size(); ++h) {
          const std::vector<double>& g = grads.alpha[l][h];
          std::vector<double> prod(g.size());
          if (m == Method::TransAtt) {
            const std::vector<double>& r = map->alpha[l][h];
            for (std::size_t i = 0; i < g.size(); ++i) prod[i] = std::max(0.0, g[i] * r[i]);
          } else {
            const std::vector<double>& a = modules[l].alpha[h].values();
            for (std::size_t i = 0; i < g.size(); ++i) prod[i] = std::max(0.0, a[i] * g[i]);
          }
          heads.push_back(std::move(prod));
        }
        Mat a_l = head_mean(heads, s);
        Mat update = matmul_sq(a_l, c);  // C <- (I + A_l) C
        for (std::size_t i = 0; i < c.v.size(); ++i) c.v[i] += update.v[i];
      }
      std::vector<double> w = cls_row_over_tokens(c);
      normalize_if_positive(w);
      return w;
    }
  }
  throw std::logic_error("compute: unreachable method");
}

Explanation random_explanation(std::size_t n_tokens, std::uint64_t seed) {
  if (n_tokens == 0) throw std::invalid_argument("random_explanation: empty example");
  std::mt19937_64 rng = make_rng(seed, 99);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Explanation e;
  e.method = Method::Random;
  e.weights.resize(n_tokens);
  for (double& w : e.weights) w = dist(rng);
  return e;
}

Explanation integrated_gradients(const TrainedModel& model, const std::vector<int>& ids,
                                 const ExplainOptions& options) {
  if (options.ig_steps < 1)
    throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  const int t_len = static_cast<int>(ids.size());
  const bool transformer = model.is_transformer();
  const int e_dim = transformer ? model.spec().hidden_dim : model.spec().embed_dim;

  // Real token embeddings and the baseline.
  const Tensor& table =
      transformer ? model.transformer_params().embedding : model.general_params().embedding;
  Tensor x = embedding_lookup(table, ids);
  std::vector<double> baseline(static_cast<std::size_t>(t_len) * e_dim, 0.0);
  if (options.ig_baseline == IgBaseline::MaskToken) {
    const int mask_id = model.mask_token_id();
    for (int i = 0; i < t_len; ++i)
      for (int j = 0; j < e_dim; ++j)
        baseline[static_cast<std::size_t>(i) * e_dim + j] =
            table[static_cast<std::size_t>(mask_id) * e_dim + j];
  }
  Tensor x_base({t_len, e_dim}, baseline);

  PredictOutput original;
  if (options.position_ids) {
    TraceOptions topt0;
    topt0.position_ids = options.position_ids;
    original = model.predict_traced(ids, topt0).output;
  } else {
    original = model.predict(ids);
  }
  const int target = original.predicted;

  const int steps = options.ig_steps;
  std::vector<double> grad_avg(static_cast<std::size_t>(t_len) * e_dim, 0.0);
  for (int k = 0; k <= steps; ++k) {
    const double gamma = static_cast<double>(k) / static_cast<double>(steps);
    std::vector<double> interp(grad_avg.size());
    for (std::size_t i = 0; i < interp.size(); ++i)
      interp[i] = baseline[i] + gamma * (x[i] - baseline[i]);
    Tensor point({t_len, e_dim}, std::move(interp));
    TraceOptions topt;
    topt.embedding_override = &point;
    topt.position_ids = options.position_ids;
    TracedPrediction tp = model.predict_traced(ids, topt);
    const std::vector<double> g = tp.class_gradient_wrt_embeddings(target, options.score_def);
    const double weight = (k == 0 || k == steps) ? 0.5 : 1.0;  // trapezoidal rule
    for (std::size_t i = 0; i < grad_avg.size(); ++i) grad_avg[i] += weight * g[i];
  }
  for (double& g : grad_avg) g /= static_cast<double>(steps);

  Explanation e;
  e.method = Method::IntegratedGradients;
  e.target_class = target;
  e.weights.assign(static_cast<std::size_t>(t_len), 0.0);
  for (int i = 0; i < t_len; ++i) {
    double acc = 0.0;
    for (int j = 0; j < e_dim; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * e_dim + j;
      acc += (x[idx] - baseline[idx]) * grad_avg[idx];
    }
    e.weights[static_cast<std::size_t>(i)] = acc;
  }
  return e;
}

std::string explanation_jsonl_row(int example_id, const Explanation& e) {
  nlohmann::json j{{"example", example_id},
                   {"method", method_name(e.method)},
                   {"target", e.target_class},
                   {"weights", e.weights}};
  return j.dump();
}

}  // namespace faithbench

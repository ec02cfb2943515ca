#include "faithbench/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "faithbench/rng.hpp"
#include "faithbench/threading.hpp"

namespace fs = std::filesystem;

namespace faithbench {

namespace {

const std::set<std::string> kKnownMetrics = {"violation", "auc_tp", "sufficiency",
                                             "comprehensiveness", "rank_correlation"};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
}

std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // trim to the shortest representation that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    char trial[32];
    std::snprintf(trial, sizeof(trial), "%.*g", prec, v);
    double parsed = 0.0;
    std::sscanf(trial, "%lf", &parsed);
    if (parsed == v) return trial;
  }
  return buf;
}

void ExperimentConfig::validate() const {
  if (datasets.empty()) throw std::invalid_argument("config: no datasets");
  if (models.empty()) throw std::invalid_argument("config: no models");
  if (explainers.empty()) throw std::invalid_argument("config: no explainers");
  if (strategies.empty()) throw std::invalid_argument("config: no strategies");
  if (seeds.empty()) throw std::invalid_argument("config: no seeds");
  for (const std::string& m : metrics)
    if (!kKnownMetrics.count(m)) throw std::invalid_argument("config: unknown metric '" + m + "'");
  if (eval_limit < 1) throw std::invalid_argument("config: eval_limit must be >= 1");
  for (const DatasetConfig& d : datasets)
    if (d.kind != "synthetic" && d.kind != "file")
      throw std::invalid_argument("config: unknown dataset kind '" + d.kind + "'");
}

namespace {

SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.positive_tokens = j.value("positive_tokens", s.positive_tokens);
  s.negative_tokens = j.value("negative_tokens", s.negative_tokens);
  s.neutral_tokens = j.value("neutral_tokens", s.neutral_tokens);
  s.magnitude_min = j.value("magnitude_min", s.magnitude_min);
  s.magnitude_max = j.value("magnitude_max", s.magnitude_max);
  s.min_length = j.value("min_length", s.min_length);
  s.max_length = j.value("max_length", s.max_length);
  s.margin = j.value("margin", s.margin);
  s.polar_token_prob = j.value("polar_token_prob", s.polar_token_prob);
  s.noise_rate = j.value("noise_rate", s.noise_rate);
  s.count = j.value("count", s.count);
  s.seed = j.value("seed", s.seed);
  return s;
}

nlohmann::json synthetic_to_json(const SyntheticSpec& s) {
  return {{"positive_tokens", s.positive_tokens},
          {"negative_tokens", s.negative_tokens},
          {"neutral_tokens", s.neutral_tokens},
          {"magnitude_min", s.magnitude_min},
          {"magnitude_max", s.magnitude_max},
          {"min_length", s.min_length},
          {"max_length", s.max_length},
          {"margin", s.margin},
          {"polar_token_prob", s.polar_token_prob},
          {"noise_rate", s.noise_rate},
          {"count", s.count},
          {"seed", s.seed}};
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  for (const auto& dj : j.value("datasets", nlohmann::json::array())) {
    DatasetConfig d;
    d.name = dj.value("name", d.name);
    d.kind = dj.value("kind", d.kind);
    if (dj.contains("synthetic")) d.synthetic = synthetic_from_json(dj["synthetic"]);
    d.train_path = dj.value("train", "");
    d.val_path = dj.value("val", "");
    d.test_path = dj.value("test", "");
    if (dj.value("format", "tsv") == "jsonl")
      d.format = CorpusFormat::JsonLines;
    if (dj.contains("split")) {
      const auto split = dj["split"].get<std::vector<double>>();
      if (split.size() != 3) throw std::invalid_argument("config: split needs 3 fractions");
      d.split_fractions = {split[0], split[1], split[2]};
    }
    c.datasets.push_back(std::move(d));
  }
  for (const auto& mj : j.value("models", nlohmann::json::array()))
    c.models.push_back(spec_from_json(mj));
  for (const auto& e : j.value("explainers", nlohmann::json::array()))
    c.explainers.push_back(parse_method(e.get<std::string>()));
  if (j.contains("strategies")) {
    for (const auto& s : j["strategies"]) c.strategies.push_back(parse_strategy(s.get<std::string>()));
  } else {
    c.strategies.assign(std::begin(kAllStrategies), std::end(kAllStrategies));
  }
  if (j.contains("metrics")) {
    for (const auto& m : j["metrics"]) c.metrics.push_back(m.get<std::string>());
  } else {
    c.metrics.assign(kKnownMetrics.begin(), kKnownMetrics.end());
  }
  if (j.contains("metric_config")) {
    const auto& mj = j["metric_config"];
    if (mj.contains("sparsity_levels"))
      c.metric_config.sparsity_levels = mj["sparsity_levels"].get<std::vector<double>>();
    if (mj.contains("auc_thresholds"))
      c.metric_config.auc_thresholds = mj["auc_thresholds"].get<std::vector<double>>();
    c.metric_config.auc_use_confidence =
        mj.value("auc_use_confidence", c.metric_config.auc_use_confidence);
    c.metric_config.rc_cumulative = mj.value("rc_cumulative", c.metric_config.rc_cumulative);
    c.metric_config.strategy_options.renormalize_after_mask =
        mj.value("renormalize_after_mask",
                 c.metric_config.strategy_options.renormalize_after_mask);
  }
  if (j.contains("explain")) {
    const auto& ej = j["explain"];
    c.explain_options.score_def =
        ej.value("score_def", "logit") == "probability" ? ScoreDef::Probability : ScoreDef::Logit;
    c.explain_options.ig_steps = ej.value("ig_steps", c.explain_options.ig_steps);
    c.explain_options.ig_baseline =
        ej.value("ig_baseline", "mask") == "zero" ? IgBaseline::Zero : IgBaseline::MaskToken;
    c.explain_options.lrp_eps = ej.value("lrp_eps", c.explain_options.lrp_eps);
  }
  if (j.contains("train")) {
    const auto& tj = j["train"];
    c.train.learning_rate = tj.value("learning_rate", c.train.learning_rate);
    c.train.batch_size = tj.value("batch_size", c.train.batch_size);
    c.train.max_epochs = tj.value("max_epochs", c.train.max_epochs);
    c.train.patience = tj.value("patience", c.train.patience);
    c.train.accuracy_floor = tj.value("accuracy_floor", c.train.accuracy_floor);
  }
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  c.eval_limit = j.value("eval_limit", c.eval_limit);
  c.threads = j.value("threads", c.threads);
  if (j.contains("depths")) c.depths = j["depths"].get<std::vector<int>>();
  c.train_if_missing = j.value("train_if_missing", c.train_if_missing);
  c.emit_explanations = j.value("emit_explanations", c.emit_explanations);
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["datasets"] = nlohmann::json::array();
  for (const DatasetConfig& d : c.datasets) {
    nlohmann::json dj{{"name", d.name}, {"kind", d.kind}};
    if (d.kind == "synthetic") dj["synthetic"] = synthetic_to_json(d.synthetic);
    if (!d.train_path.empty()) dj["train"] = d.train_path;
    if (!d.val_path.empty()) dj["val"] = d.val_path;
    if (!d.test_path.empty()) dj["test"] = d.test_path;
    dj["format"] = d.format == CorpusFormat::Tsv ? "tsv" : "jsonl";
    dj["split"] = {d.split_fractions[0], d.split_fractions[1], d.split_fractions[2]};
    j["datasets"].push_back(std::move(dj));
  }
  j["models"] = nlohmann::json::array();
  for (const ModelSpec& m : c.models) j["models"].push_back(spec_to_json(m));
  j["explainers"] = nlohmann::json::array();
  for (Method m : c.explainers) j["explainers"].push_back(method_name(m));
  j["strategies"] = nlohmann::json::array();
  for (Strategy s : c.strategies) j["strategies"].push_back(strategy_name(s));
  j["metrics"] = c.metrics;
  j["metric_config"] = {
      {"sparsity_levels", c.metric_config.sparsity_levels},
      {"auc_thresholds", c.metric_config.auc_thresholds},
      {"auc_use_confidence", c.metric_config.auc_use_confidence},
      {"rc_cumulative", c.metric_config.rc_cumulative},
      {"renormalize_after_mask", c.metric_config.strategy_options.renormalize_after_mask}};
  j["explain"] = {
      {"score_def", c.explain_options.score_def == ScoreDef::Logit ? "logit" : "probability"},
      {"ig_steps", c.explain_options.ig_steps},
      {"ig_baseline", c.explain_options.ig_baseline == IgBaseline::MaskToken ? "mask" : "zero"},
      {"lrp_eps", c.explain_options.lrp_eps}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},
                {"patience", c.train.patience},
                {"accuracy_floor", c.train.accuracy_floor}};
  j["seeds"] = c.seeds;
  j["eval_limit"] = c.eval_limit;
  j["threads"] = c.threads;
  j["depths"] = c.depths;
  j["train_if_missing"] = c.train_if_missing;
  j["emit_explanations"] = c.emit_explanations;
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return config_from_json(j);
}

PreparedDataset prepare_dataset(const DatasetConfig& config) {
  PreparedDataset out;
  out.name = config.name;
  if (config.kind == "synthetic") {
    Corpus full = generate_synthetic(config.synthetic);
    auto parts = split_corpus(full, config.split_fractions[0], config.split_fractions[1],
                              config.split_fractions[2], config.synthetic.seed);
    out.train = std::move(parts[0]);
    out.val = std::move(parts[1]);
    out.test = std::move(parts[2]);
  } else {
    out.train = load_corpus(config.train_path, config.format);
    const int classes = out.train.num_classes;
    if (!config.val_path.empty())
      out.val = load_corpus(config.val_path, config.format, out.train.vocab, 2, classes);
    else
      out.val.vocab = out.train.vocab;
    if (!config.test_path.empty())
      out.test = load_corpus(config.test_path, config.format, out.train.vocab, 2, classes);
    else
      out.test.vocab = out.train.vocab;
    out.val.num_classes = out.test.num_classes = classes;
  }
  return out;
}

std::string checkpoint_filename(const std::string& dataset, const ModelSpec& spec,
                                std::uint64_t seed) {
  return dataset + "__" + spec.name() + "_d" + std::to_string(spec.classifier_depth) + "__s" +
         std::to_string(seed) + ".ckpt";
}

namespace {

void echo_config(const ExperimentConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/effective_config.json", json_text(config_to_json(config)));
}

ModelSpec resolved_spec(ModelSpec spec, const PreparedDataset& data, std::uint64_t seed) {
  spec.vocab_size = data.train.vocab->size();
  spec.num_classes = data.train.num_classes;
  spec.seed = seed;
  return spec;
}

TrainedModel obtain_model(const ExperimentConfig& config, const PreparedDataset& data,
                          const ModelSpec& base_spec, std::uint64_t seed,
                          const std::string& checkpoint_dir, std::string* log) {
  const ModelSpec spec = resolved_spec(base_spec, data, seed);
  const std::string path = checkpoint_dir + "/" + checkpoint_filename(data.name, spec, seed);
  if (fs::exists(path)) return load_checkpoint(path);
  if (!config.train_if_missing)
    throw std::runtime_error("missing checkpoint " + path +
                             " (run the train subcommand first, or set train_if_missing)");
  TrainedModel model = train(data.train, data.val, spec, config.train);
  fs::create_directories(checkpoint_dir);
  save_checkpoint(model, path);
  if (log) {
    *log += "trained " + data.name + "/" + spec.name() + " seed " + std::to_string(seed) +
            ": train_acc=" + format_double(model.meta().train_accuracy) +
            " val_acc=" + format_double(model.meta().val_accuracy) + "\n";
  }
  return model;
}

Corpus eval_slice(const Corpus& test, int limit) {
  Corpus out = test;
  if (static_cast<int>(out.examples.size()) > limit)
    out.examples.resize(static_cast<std::size_t>(limit));
  return out;
}

bool metric_enabled(const ExperimentConfig& config, const std::string& name) {
  return std::find(config.metrics.begin(), config.metrics.end(), name) != config.metrics.end();
}

// Explanation weights for all requested methods of one example, plus the
// unperturbed prediction. Shared across strategies and metrics.
struct ExampleExplanations {
  PredictOutput original;
  std::map<Method, std::vector<double>> weights;
};

std::vector<ExampleExplanations> explain_corpus(const ExperimentConfig& config,
                                                const TrainedModel& model, const Corpus& corpus,
                                                std::uint64_t seed,
                                                const std::vector<Method>& methods) {
  std::vector<ExampleExplanations> out(corpus.examples.size());
  parallel_for(corpus.examples.size(), config.threads, [&](std::size_t i) {
    ExplainOptions options = config.explain_options;
    options.random_seed = mix_seed(seed, i);
    ExplanationSet set(model, corpus.examples[i].ids, options);
    ExampleExplanations& slot = out[i];
    slot.original = set.output();
    for (Method m : methods) {
      if (!method_applicable(m, model.is_transformer())) continue;
      slot.weights[m] = set.get(m).weights;
    }
  });
  return out;
}

struct CellRecord {
  int example = 0;
  int x_star = -1;
  double weight = 0.0;
  double delta_c = 0.0;
  bool violation = false;
  bool defined = true;
  std::optional<double> suff, comp, rc;
};

struct CellResult {
  std::vector<CellRecord> records;
  std::optional<double> auc;
};

nlohmann::json cell_to_json(const CellResult& cell) {
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (const CellRecord& r : cell.records) {
    nlohmann::json rj{{"example", r.example}, {"defined", r.defined}};
    if (r.defined) {
      rj["x_star"] = r.x_star;
      rj["weight"] = r.weight;
      rj["delta_c"] = r.delta_c;
      rj["violation"] = r.violation;
    }
    if (r.suff) rj["sufficiency"] = *r.suff;
    if (r.comp) rj["comprehensiveness"] = *r.comp;
    if (r.rc) rj["rank_correlation"] = *r.rc;
    j["records"].push_back(std::move(rj));
  }
  if (cell.auc) j["auc_tp"] = *cell.auc;
  return j;
}

CellResult cell_from_json(const nlohmann::json& j) {
  CellResult cell;
  for (const auto& rj : j.at("records")) {
    CellRecord r;
    r.example = rj.at("example").get<int>();
    r.defined = rj.at("defined").get<bool>();
    if (r.defined) {
      r.x_star = rj.at("x_star").get<int>();
      r.weight = rj.at("weight").get<double>();
      r.delta_c = rj.at("delta_c").get<double>();
      r.violation = rj.at("violation").get<bool>();
    }
    if (rj.contains("sufficiency")) r.suff = rj["sufficiency"].get<double>();
    if (rj.contains("comprehensiveness")) r.comp = rj["comprehensiveness"].get<double>();
    if (rj.contains("rank_correlation")) r.rc = rj["rank_correlation"].get<double>();
    cell.records.push_back(r);
  }
  if (j.contains("auc_tp")) cell.auc = j["auc_tp"].get<double>();
  return cell;
}

CellResult compute_cell(const ExperimentConfig& config, const TrainedModel& model,
                        const Corpus& corpus,
                        const std::vector<ExampleExplanations>& explanations, Method method,
                        Strategy strategy) {
  CellResult cell;
  cell.records.resize(corpus.examples.size());
  const bool want_violation = metric_enabled(config, "violation");
  const bool want_suff = metric_enabled(config, "sufficiency");
  const bool want_comp = metric_enabled(config, "comprehensiveness");
  const bool want_rc = metric_enabled(config, "rank_correlation");
  parallel_for(corpus.examples.size(), config.threads, [&](std::size_t i) {
    const std::vector<int>& ids = corpus.examples[i].ids;
    const std::vector<double>& w = explanations[i].weights.at(method);
    const PredictOutput& orig = explanations[i].original;
    CellRecord& r = cell.records[i];
    r.example = static_cast<int>(i);
    if (want_violation) {
      const ViolationRecord v =
          violation_test(model, ids, w, strategy, config.metric_config.strategy_options, &orig,
                         static_cast<int>(i));
      r.x_star = v.x_star;
      r.weight = v.weight;
      r.delta_c = v.delta_c;
      r.violation = v.violation;
      r.defined = v.defined;
    }
    if (want_suff)
      r.suff = sufficiency(model, ids, w, strategy, config.metric_config, &orig);
    if (want_comp)
      r.comp = comprehensiveness(model, ids, w, strategy, config.metric_config, &orig);
    if (want_rc)
      r.rc = rank_correlation(model, ids, w, strategy, config.metric_config, &orig);
  });
  if (metric_enabled(config, "auc_tp")) {
    cell.auc = auc_tp(
        model, corpus,
        [&explanations, method](const Example&, std::size_t i) {
          return explanations[i].weights.at(method);
        },
        strategy, config.metric_config, config.threads);
  }
  return cell;
}

MethodStrategyStats stats_from_cell(const CellResult& cell, bool want_violation) {
  MethodStrategyStats s;
  double suff_acc = 0.0, comp_acc = 0.0, rc_acc = 0.0;
  int violations = 0;
  for (const CellRecord& r : cell.records) {
    if (want_violation) {
      if (r.defined) {
        ++s.violation_defined;
        if (r.violation) ++violations;
      } else {
        ++s.violation_undefined;
      }
    }
    if (r.suff) {
      suff_acc += *r.suff;
      ++s.sufficiency_count;
    }
    if (r.comp) {
      comp_acc += *r.comp;
      ++s.comprehensiveness_count;
    }
    if (r.rc) {
      rc_acc += *r.rc;
      ++s.rank_correlation_defined;
    } else if (want_violation || r.suff || r.comp) {
      // only counted as undefined when the metric ran at all
    }
  }
  s.violation_count = violations;
  if (want_violation && s.violation_defined > 0)
    s.violation_ratio = static_cast<double>(violations) / s.violation_defined;
  if (s.sufficiency_count > 0) s.sufficiency = suff_acc / s.sufficiency_count;
  if (s.comprehensiveness_count > 0) s.comprehensiveness = comp_acc / s.comprehensiveness_count;
  if (s.rank_correlation_defined > 0) s.rank_correlation = rc_acc / s.rank_correlation_defined;
  if (cell.auc) s.auc_tp = cell.auc;
  return s;
}

std::string opt_str(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("");
}

}  // namespace

void run_train(const ExperimentConfig& config, const std::string& out_dir) {
  echo_config(config, out_dir);
  const std::string ckpt_dir = out_dir + "/checkpoints";
  fs::create_directories(ckpt_dir);
  nlohmann::json log = nlohmann::json::array();
  for (const DatasetConfig& dc : config.datasets) {
    PreparedDataset data = prepare_dataset(dc);
    for (const ModelSpec& base : config.models) {
      for (std::uint64_t seed : config.seeds) {
        const ModelSpec spec = resolved_spec(base, data, seed);
        TrainedModel model = train(data.train, data.val, spec, config.train);
        const std::string path = ckpt_dir + "/" + checkpoint_filename(data.name, spec, seed);
        save_checkpoint(model, path);
        log.push_back({{"dataset", data.name},
                       {"model", spec.name()},
                       {"classifier_depth", spec.classifier_depth},
                       {"seed", seed},
                       {"epochs", model.meta().epochs},
                       {"train_accuracy", model.meta().train_accuracy},
                       {"val_accuracy", model.meta().val_accuracy},
                       {"final_loss", model.meta().final_loss},
                       {"accuracy_floor_met", model.meta().accuracy_floor_met},
                       {"checkpoint", fs::path(path).filename().string()}});
      }
    }
  }
  write_text_file(out_dir + "/train_log.json", json_text(log));
}

void run_evaluate(const ExperimentConfig& config, const std::string& out_dir) {
  echo_config(config, out_dir);
  const std::string ckpt_dir = out_dir + "/checkpoints";
  const std::string partial_dir = out_dir + "/partial";
  fs::create_directories(partial_dir);

  std::string aggregate_csv =
      "dataset,model,seed,method,auc_tp,violation,sufficiency,comprehensiveness,rank_correlation\n";
  std::string by_strategy_csv =
      "dataset,model,seed,method,strategy,auc_tp,violation,violation_defined,violation_undefined,"
      "sufficiency,comprehensiveness,rank_correlation,rc_defined,rc_undefined\n";
  std::string records_jsonl;
  std::string explanations_jsonl;
  std::string log_text;

  for (const DatasetConfig& dc : config.datasets) {
    PreparedDataset data = prepare_dataset(dc);
    const Corpus eval = eval_slice(data.test, config.eval_limit);
    for (const ModelSpec& base : config.models) {
      for (std::uint64_t seed : config.seeds) {
        TrainedModel model = obtain_model(config, data, base, seed, ckpt_dir, &log_text);
        std::vector<Method> methods;
        for (Method m : config.explainers)
          if (method_applicable(m, model.is_transformer())) methods.push_back(m);

        // Resume: a cell that already has a partial file is not recomputed.
        std::vector<std::pair<Method, Strategy>> missing;
        auto cell_path = [&](Method m, Strategy s) {
          return partial_dir + "/" + data.name + "__" + model.spec().name() + "__s" +
                 std::to_string(seed) + "__" + method_name(m) + "__" + strategy_name(s) + ".json";
        };
        for (Method m : methods)
          for (Strategy s : config.strategies)
            if (!fs::exists(cell_path(m, s))) missing.emplace_back(m, s);

        std::vector<ExampleExplanations> explanations;
        if (!missing.empty()) explanations = explain_corpus(config, model, eval, seed, methods);

        if (config.emit_explanations && !explanations.empty()) {
          for (std::size_t i = 0; i < explanations.size(); ++i) {
            for (Method m : methods) {
              Explanation e;
              e.method = m;
              e.target_class = explanations[i].original.predicted;
              e.weights = explanations[i].weights.at(m);
              explanations_jsonl += explanation_jsonl_row(static_cast<int>(i), e) + "\n";
            }
          }
        }

        for (Method m : methods) {
          std::vector<MethodStrategyStats> per_strategy;
          for (Strategy s : config.strategies) {
            CellResult cell;
            const std::string path = cell_path(m, s);
            if (fs::exists(path)) {
              std::ifstream in(path);
              nlohmann::json j;
              in >> j;
              cell = cell_from_json(j);
            } else {
              cell = compute_cell(config, model, eval, explanations, m, s);
              write_text_file(path, json_text(cell_to_json(cell)));
            }
            const MethodStrategyStats stats =
                stats_from_cell(cell, metric_enabled(config, "violation"));
            per_strategy.push_back(stats);

            for (const CellRecord& r : cell.records) {
              nlohmann::json rj{{"dataset", data.name}, {"model", model.spec().name()},
                                {"seed", seed},        {"method", method_name(m)},
                                {"strategy", strategy_name(s)}, {"example", r.example},
                                {"defined", r.defined}};
              if (r.defined) {
                rj["x_star"] = r.x_star;
                rj["weight"] = r.weight;
                rj["delta_c"] = r.delta_c;
                rj["violation"] = r.violation;
              }
              if (r.suff) rj["sufficiency"] = *r.suff;
              if (r.comp) rj["comprehensiveness"] = *r.comp;
              if (r.rc) rj["rank_correlation"] = *r.rc;
              records_jsonl += rj.dump() + "\n";
            }

            by_strategy_csv += data.name + "," + model.spec().name() + "," +
                               std::to_string(seed) + "," + method_name(m) + "," +
                               strategy_name(s) + "," + opt_str(stats.auc_tp) + "," +
                               opt_str(stats.violation_ratio) + "," +
                               std::to_string(stats.violation_defined) + "," +
                               std::to_string(stats.violation_undefined) + "," +
                               opt_str(stats.sufficiency) + "," +
                               opt_str(stats.comprehensiveness) + "," +
                               opt_str(stats.rank_correlation) + "," +
                               std::to_string(stats.rank_correlation_defined) + "," +
                               std::to_string(stats.rank_correlation_undefined) + "\n";
          }
          const MethodStrategyStats agg = aggregate_over_strategies(per_strategy);
          aggregate_csv += data.name + "," + model.spec().name() + "," + std::to_string(seed) +
                           "," + method_name(m) + "," + opt_str(agg.auc_tp) + "," +
                           opt_str(agg.violation_ratio) + "," + opt_str(agg.sufficiency) + "," +
                           opt_str(agg.comprehensiveness) + "," +
                           opt_str(agg.rank_correlation) + "\n";
        }
      }
    }
  }

  write_text_file(out_dir + "/report_aggregate.csv", aggregate_csv);
  write_text_file(out_dir + "/report_by_strategy.csv", by_strategy_csv);
  write_text_file(out_dir + "/records.jsonl", records_jsonl);
  if (config.emit_explanations)
    write_text_file(out_dir + "/explanations.jsonl", explanations_jsonl);
  write_text_file(out_dir + "/run.log", log_text.empty() ? "evaluate: used existing checkpoints\n"
                                                         : log_text);
}

namespace {

// Violation ratio for one (model, method) pair averaged over strategies.
double mean_violation_ratio(const ExperimentConfig& config, const TrainedModel& model,
                            const Corpus& eval,
                            const std::vector<ExampleExplanations>& explanations, Method method) {
  double acc = 0.0;
  int cells = 0;
  for (Strategy s : config.strategies) {
    int defined = 0, violations = 0;
    std::vector<char> flags(eval.examples.size(), 0);
    std::vector<char> ok(eval.examples.size(), 0);
    parallel_for(eval.examples.size(), config.threads, [&](std::size_t i) {
      const ViolationRecord r = violation_test(
          model, eval.examples[i].ids, explanations[i].weights.at(method), s,
          config.metric_config.strategy_options, &explanations[i].original,
          static_cast<int>(i));
      ok[i] = r.defined ? 1 : 0;
      flags[i] = r.violation ? 1 : 0;
    });
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (ok[i]) {
        ++defined;
        violations += flags[i];
      }
    }
    if (defined > 0) {
      acc += static_cast<double>(violations) / defined;
      ++cells;
    }
  }
  return cells > 0 ? acc / cells : 0.0;
}

}  // namespace

void run_ablation(const ExperimentConfig& config, const std::string& out_dir) {
  echo_config(config, out_dir);
  const std::string ckpt_dir = out_dir + "/checkpoints";
  const std::vector<Method> variants = {Method::RawAtt, Method::AttGrad, Method::AttGradAbs,
                                        Method::AttGradSign};
  const char* basis[] = {"alpha", "alpha*grad", "alpha*|grad|", "alpha*sign(grad)"};
  std::string csv = "dataset,method,basis,violation\n";
  std::string log_text;
  for (const DatasetConfig& dc : config.datasets) {
    PreparedDataset data = prepare_dataset(dc);
    const Corpus eval = eval_slice(data.test, config.eval_limit);
    std::vector<double> ratio_acc(variants.size(), 0.0);
    int runs = 0;
    for (const ModelSpec& base : config.models) {
      if (base.encoder == EncoderKind::Transformer) continue;  // general attention models only
      for (std::uint64_t seed : config.seeds) {
        TrainedModel model = obtain_model(config, data, base, seed, ckpt_dir, &log_text);
        std::vector<ExampleExplanations> explanations =
            explain_corpus(config, model, eval, seed, variants);
        for (std::size_t vi = 0; vi < variants.size(); ++vi)
          ratio_acc[vi] += mean_violation_ratio(config, model, eval, explanations, variants[vi]);
        ++runs;
      }
    }
    if (runs == 0) throw std::runtime_error("run_ablation: no general attention models configured");
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      csv += data.name + "," + method_name(variants[vi]) + "," + basis[vi] + "," +
             format_double(ratio_acc[vi] / runs) + "\n";
    }
  }
  write_text_file(out_dir + "/ablation.csv", csv);
  write_text_file(out_dir + "/run.log", log_text.empty() ? "ablation: used existing checkpoints\n"
                                                         : log_text);
}

void run_depth_study(const ExperimentConfig& config, const std::string& out_dir) {
  echo_config(config, out_dir);
  const std::string ckpt_dir = out_dir + "/checkpoints";
  std::string csv = "depth,method,violation\n";
  std::string log_text;
  std::map<Method, std::vector<std::pair<double, double>>> curves;  // method -> (depth, ratio)
  for (int depth : config.depths) {
    std::map<Method, double> acc;
    std::map<Method, int> counts;
    for (const DatasetConfig& dc : config.datasets) {
      PreparedDataset data = prepare_dataset(dc);
      const Corpus eval = eval_slice(data.test, config.eval_limit);
      for (const ModelSpec& base : config.models) {
        if (base.encoder == EncoderKind::Transformer) continue;
        ModelSpec spec = base;
        spec.classifier_depth = depth;
        for (std::uint64_t seed : config.seeds) {
          TrainedModel model = obtain_model(config, data, spec, seed, ckpt_dir, &log_text);
          std::vector<Method> methods;
          for (Method m : config.explainers)
            if (method_applicable(m, false)) methods.push_back(m);
          std::vector<ExampleExplanations> explanations =
              explain_corpus(config, model, eval, seed, methods);
          for (Method m : methods) {
            acc[m] += mean_violation_ratio(config, model, eval, explanations, m);
            counts[m] += 1;
          }
        }
      }
    }
    for (const auto& [m, total] : acc) {
      const double ratio = total / counts[m];
      csv += std::to_string(depth) + "," + method_name(m) + "," + format_double(ratio) + "\n";
      curves[m].emplace_back(static_cast<double>(depth), ratio);
    }
  }
  std::string trend_csv = "method,depth_violation_spearman\n";
  for (const auto& [m, points] : curves) {
    std::vector<double> xs, ys;
    for (const auto& [x, y] : points) {
      xs.push_back(x);
      ys.push_back(y);
    }
    trend_csv += std::string(method_name(m)) + "," + format_double(spearman(xs, ys)) + "\n";
  }
  write_text_file(out_dir + "/depth_curve.csv", csv);
  write_text_file(out_dir + "/depth_trend.csv", trend_csv);
  write_text_file(out_dir + "/run.log",
                  log_text.empty() ? "depth-study: used existing checkpoints\n" : log_text);
}

void run_datamap(const ExperimentConfig& config, const std::string& out_dir) {
  echo_config(config, out_dir);
  const std::string ckpt_dir = out_dir + "/checkpoints";
  const Method method = config.explainers.front();
  std::string csv =
      "dataset,model,seed,strategy,example,rank_correlation,delta_c_top10,violation\n";
  std::string log_text;
  for (const DatasetConfig& dc : config.datasets) {
    PreparedDataset data = prepare_dataset(dc);
    const Corpus eval = eval_slice(data.test, config.eval_limit);
    for (const ModelSpec& base : config.models) {
      for (std::uint64_t seed : config.seeds) {
        TrainedModel model = obtain_model(config, data, base, seed, ckpt_dir, &log_text);
        if (!method_applicable(method, model.is_transformer()))
          throw std::runtime_error("run_datamap: method not applicable to configured model");
        std::vector<ExampleExplanations> explanations =
            explain_corpus(config, model, eval, seed, {method});
        for (Strategy s : config.strategies) {
          struct Row {
            std::optional<double> rc;
            double dc10 = 0.0;
            bool violation = false;
            bool defined = true;
          };
          std::vector<Row> rows(eval.examples.size());
          parallel_for(eval.examples.size(), config.threads, [&](std::size_t i) {
            const std::vector<int>& ids = eval.examples[i].ids;
            const std::vector<double>& w = explanations[i].weights.at(method);
            const PredictOutput& orig = explanations[i].original;
            Row& row = rows[i];
            row.rc = rank_correlation(model, ids, w, s, config.metric_config, &orig);
            const std::vector<int> removal = top_fraction_indices(w, 0.10, TopMode::RemoveTop);
            row.dc10 = delta_confidence(model, ids, removal, s,
                                        config.metric_config.strategy_options, &orig)
                           .delta_c;
            const ViolationRecord v = violation_test(
                model, ids, w, s, config.metric_config.strategy_options, &orig,
                static_cast<int>(i));
            row.violation = v.violation;
            row.defined = v.defined;
          });
          for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i].defined) continue;
            csv += data.name + "," + model.spec().name() + "," + std::to_string(seed) + "," +
                   strategy_name(s) + "," + std::to_string(i) + "," + opt_str(rows[i].rc) + "," +
                   format_double(rows[i].dc10) + "," + (rows[i].violation ? "1" : "0") + "\n";
          }
        }
      }
    }
  }
  write_text_file(out_dir + "/datamap.csv", csv);
  write_text_file(out_dir + "/run.log", log_text.empty() ? "datamap: used existing checkpoints\n"
                                                         : log_text);
}

void run_behavior(const ExperimentConfig& config, const std::string& out_dir) {
  echo_config(config, out_dir);
  const std::string ckpt_dir = out_dir + "/checkpoints";
  const Method method = config.explainers.front();
  std::string csv = "dataset,model,seed,strategy,group,rank,mean_weight,mean_delta_c,"
                    "mean_sign_product,count\n";
  std::string group_csv = "dataset,model,seed,strategy,group,examples\n";
  std::string log_text;
  for (const DatasetConfig& dc : config.datasets) {
    PreparedDataset data = prepare_dataset(dc);
    const Corpus eval = eval_slice(data.test, config.eval_limit);
    std::size_t max_len = 0;
    for (const Example& ex : eval.examples) max_len = std::max(max_len, ex.ids.size());
    for (const ModelSpec& base : config.models) {
      for (std::uint64_t seed : config.seeds) {
        TrainedModel model = obtain_model(config, data, base, seed, ckpt_dir, &log_text);
        if (!method_applicable(method, model.is_transformer()))
          throw std::runtime_error("run_behavior: method not applicable to configured model");
        std::vector<ExampleExplanations> explanations =
            explain_corpus(config, model, eval, seed, {method});
        for (Strategy s : config.strategies) {
          struct PerExample {
            bool defined = false;
            bool violation = false;
            std::vector<double> rank_weight;  // signed weight at each rank
            std::vector<double> rank_delta;   // predicted-class delta at each rank
          };
          std::vector<PerExample> per(eval.examples.size());
          parallel_for(eval.examples.size(), config.threads, [&](std::size_t i) {
            const std::vector<int>& ids = eval.examples[i].ids;
            const std::vector<double>& w = explanations[i].weights.at(method);
            const PredictOutput& orig = explanations[i].original;
            PerExample& pe = per[i];
            const ViolationRecord v = violation_test(
                model, ids, w, s, config.metric_config.strategy_options, &orig,
                static_cast<int>(i));
            if (!v.defined) return;
            pe.defined = true;
            pe.violation = v.violation;
            const std::vector<int> order = rank_by_magnitude(w);
            for (int idx : order) {
              pe.rank_weight.push_back(w[static_cast<std::size_t>(idx)]);
              pe.rank_delta.push_back(delta_confidence(model, ids, {idx}, s,
                                                       config.metric_config.strategy_options,
                                                       &orig)
                                          .delta_c);
            }
          });
          for (int group = 0; group < 2; ++group) {  // 0 = non-violators, 1 = violators
            const char* group_name = group == 0 ? "non_violators" : "violators";
            int group_size = 0;
            for (const PerExample& pe : per)
              if (pe.defined && (pe.violation == (group == 1))) ++group_size;
            group_csv += data.name + "," + model.spec().name() + "," + std::to_string(seed) +
                         "," + strategy_name(s) + "," + group_name + "," +
                         std::to_string(group_size) + "\n";
            for (std::size_t rank = 0; rank < max_len; ++rank) {
              double w_acc = 0.0, d_acc = 0.0, sp_acc = 0.0;
              int count = 0;
              for (const PerExample& pe : per) {
                if (!pe.defined || pe.violation != (group == 1)) continue;
                if (rank >= pe.rank_weight.size()) continue;
                const double w = pe.rank_weight[rank];
                const double d = pe.rank_delta[rank];
                w_acc += w;
                d_acc += d;
                const double p = w * d;
                sp_acc += p > 0.0 ? 1.0 : (p < 0.0 ? -1.0 : 0.0);
                ++count;
              }
              if (count == 0) continue;
              csv += data.name + "," + model.spec().name() + "," + std::to_string(seed) + "," +
                     strategy_name(s) + "," + group_name + "," + std::to_string(rank + 1) + "," +
                     format_double(w_acc / count) + "," + format_double(d_acc / count) + "," +
                     format_double(sp_acc / count) + "," + std::to_string(count) + "\n";
            }
          }
        }
      }
    }
  }
  write_text_file(out_dir + "/behavior.csv", csv);
  write_text_file(out_dir + "/behavior_groups.csv", group_csv);
  write_text_file(out_dir + "/run.log", log_text.empty() ? "behavior: used existing checkpoints\n"
                                                         : log_text);
}

}  // namespace faithbench

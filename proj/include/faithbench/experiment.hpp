#ifndef FAITHBENCH_EXPERIMENT_HPP
#define FAITHBENCH_EXPERIMENT_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "faithbench/checkpoint.hpp"
#include "faithbench/explain.hpp"
#include "faithbench/metrics.hpp"

namespace faithbench {

struct DatasetConfig {
  std::string name = "synthetic";
  std::string kind = "synthetic";  // "synthetic" | "file"
  SyntheticSpec synthetic;
  std::string train_path, val_path, test_path;
  CorpusFormat format = CorpusFormat::Tsv;
  std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
};

struct ExperimentConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<ModelSpec> models;
  std::vector<Method> explainers;
  std::vector<Strategy> strategies;
  std::vector<std::string> metrics;  // violation, auc_tp, sufficiency,
                                     // comprehensiveness, rank_correlation
  MetricConfig metric_config;
  ExplainOptions explain_options;
  TrainHyperparams train;
  std::vector<std::uint64_t> seeds{1};
  int eval_limit = 500;
  std::size_t threads = 0;
  std::vector<int> depths{1, 2, 4, 6};
  bool train_if_missing = false;
  bool emit_explanations = false;

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

struct PreparedDataset {
  std::string name;
  Corpus train, val, test;
};

/// Synthetic generation + split, or file loading with the vocabulary built
/// from the training file.
PreparedDataset prepare_dataset(const DatasetConfig& config);

std::string checkpoint_filename(const std::string& dataset, const ModelSpec& spec,
                                std::uint64_t seed);

/// Emitted-file value formatting: shortest lossless decimal (%.17g trimmed).
std::string format_double(double v);

// ---- runners -------------------------------------------------------------
// Every runner echoes the effective config into out_dir and writes only
// deterministic content (no timestamps), so reruns are byte-identical.

void run_train(const ExperimentConfig& config, const std::string& out_dir);
void run_evaluate(const ExperimentConfig& config, const std::string& out_dir);
void run_ablation(const ExperimentConfig& config, const std::string& out_dir);
void run_depth_study(const ExperimentConfig& config, const std::string& out_dir);
void run_datamap(const ExperimentConfig& config, const std::string& out_dir);
void run_behavior(const ExperimentConfig& config, const std::string& out_dir);

}  // namespace faithbench

#endif

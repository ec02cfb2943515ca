#include "faithbench/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace faithbench {

nlohmann::json spec_to_json(const ModelSpec& spec) {
  return nlohmann::json{{"encoder", encoder_kind_name(spec.encoder)},
                        {"attention", attention_kind_name(spec.attention)},
                        {"embed_dim", spec.embed_dim},
                        {"hidden_dim", spec.hidden_dim},
                        {"encoder_layers", spec.encoder_layers},
                        {"heads", spec.heads},
                        {"classifier_depth", spec.classifier_depth},
                        {"num_classes", spec.num_classes},
                        {"vocab_size", spec.vocab_size},
                        {"max_positions", spec.max_positions},
                        {"ffn_dim", spec.ffn_dim},
                        {"cnn_width", spec.cnn_width},
                        {"attention_dim", spec.attention_dim},
                        {"seed", spec.seed}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.encoder = parse_encoder_kind(j.at("encoder").get<std::string>());
  spec.attention = parse_attention_kind(j.at("attention").get<std::string>());
  spec.embed_dim = j.value("embed_dim", spec.embed_dim);
  spec.hidden_dim = j.value("hidden_dim", spec.hidden_dim);
  spec.encoder_layers = j.value("encoder_layers", spec.encoder_layers);
  spec.heads = j.value("heads", spec.heads);
  spec.classifier_depth = j.value("classifier_depth", spec.classifier_depth);
  spec.num_classes = j.value("num_classes", spec.num_classes);
  spec.vocab_size = j.value("vocab_size", spec.vocab_size);
  spec.max_positions = j.value("max_positions", spec.max_positions);
  spec.ffn_dim = j.value("ffn_dim", spec.ffn_dim);
  spec.cnn_width = j.value("cnn_width", spec.cnn_width);
  spec.attention_dim = j.value("attention_dim", spec.attention_dim);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

void save_checkpoint(const TrainedModel& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = "faithbench-checkpoint";
  j["version"] = 1;
  j["spec"] = spec_to_json(model.spec());
  j["vocab"] = model.vocab().tokens();
  j["meta"] = {{"epochs", model.meta().epochs},
               {"train_accuracy", model.meta().train_accuracy},
               {"val_accuracy", model.meta().val_accuracy},
               {"final_loss", model.meta().final_loss},
               {"seed", model.meta().seed},
               {"accuracy_floor_met", model.meta().accuracy_floor_met}};
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, tensor] : model.parameters()) {
    params.push_back(nlohmann::json{
        {"name", name}, {"shape", tensor->shape()}, {"data", tensor->values()}});
  }
  j["params"] = std::move(params);

  const std::vector<std::uint8_t> blob = nlohmann::json::to_cbor(j);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  nlohmann::json j = nlohmann::json::from_cbor(blob);
  if (j.value("format", "") != "faithbench-checkpoint")
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");

  ModelSpec spec = spec_from_json(j.at("spec"));
  auto vocab = std::make_shared<Vocabulary>();
  const auto tokens = j.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() < 3) throw std::runtime_error("load_checkpoint: vocabulary too small");
  for (std::size_t i = 3; i < tokens.size(); ++i) vocab->add(tokens[i]);
  if (vocab->size() != static_cast<int>(tokens.size()))
    throw std::runtime_error("load_checkpoint: duplicate vocabulary entries");

  TrainedModel model(spec, vocab);
  auto params = model.parameters();
  const nlohmann::json& stored = j.at("params");
  if (stored.size() != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nlohmann::json& entry = stored[i];
    if (entry.at("name").get<std::string>() != params[i].first)
      throw std::runtime_error("load_checkpoint: parameter order mismatch at '" +
                               params[i].first + "'");
    if (entry.at("shape").get<std::vector<int>>() != params[i].second->shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + params[i].first + "'");
    params[i].second->values_mut() = entry.at("data").get<std::vector<double>>();
  }

  const nlohmann::json& meta = j.at("meta");
  model.meta().epochs = meta.value("epochs", 0);
  model.meta().train_accuracy = meta.value("train_accuracy", 0.0);
  model.meta().val_accuracy = meta.value("val_accuracy", 0.0);
  model.meta().final_loss = meta.value("final_loss", 0.0);
  model.meta().seed = meta.value("seed", std::uint64_t{0});
  model.meta().accuracy_floor_met = meta.value("accuracy_floor_met", true);
  return model;
}

}  // namespace faithbench

#ifndef FAITHBENCH_CHECKPOINT_HPP
#define FAITHBENCH_CHECKPOINT_HPP

#include <string>

#include <json.hpp>

#include "faithbench/model.hpp"

namespace faithbench {

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

/// Self-describing binary checkpoint (CBOR): spec, vocabulary, training
/// metadata, and every parameter as shape + IEEE-754 doubles. Round-trips
/// parameters bit-exactly.
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace faithbench

#endif

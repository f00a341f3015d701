#pragma once

#include <json.hpp>

#include "tdet/config.hpp"

namespace tdet {

using json = nlohmann::json;

json to_json(const ModelConfig& c);
json to_json(const TrainConfig& c);
// Throw std::invalid_argument on missing or mistyped fields.
ModelConfig model_config_from_json(const json& j);
TrainConfig train_config_from_json(const json& j);

}  // namespace tdet

#pragma once

#include <nlohmann/json.hpp>

#include "affdet/model.hpp"

namespace affdet {

nlohmann::json detector_config_to_json(const DetectorConfig& cfg);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

nlohmann::json detection_to_json(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);

}  // namespace affdet

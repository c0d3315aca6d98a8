#pragma once

#include <json.hpp>

#include "iskd/checkpoint.hpp"
#include "iskd/distill.hpp"
#include "iskd/network.hpp"

namespace iskd {

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

nlohmann::json meta_to_json(const CheckpointMeta& meta);
CheckpointMeta meta_from_json(const nlohmann::json& j);

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// Full resolved config; config_from_json(config_to_json(c)) == c.
nlohmann::json config_to_json(const RunConfig& config);

}  // namespace iskd

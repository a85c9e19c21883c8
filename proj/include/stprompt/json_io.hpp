#pragma once

#include <nlohmann/json.hpp>

#include "stprompt/scenesim.hpp"

namespace stp {

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
/// Missing fields keep their defaults.
SceneSpec scene_spec_from_json(const nlohmann::json& j);

}  // namespace stp

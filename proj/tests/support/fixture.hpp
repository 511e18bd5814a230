#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cilforge/harness.hpp"

namespace cilforge::testing {

// 12 blob classes in 3 tasks of 4, 16-dim inputs, a small pre-fit backbone and
// two epochs per task: enough to exercise every learner quickly.
nlohmann::json small_config(const std::string& model,
                            const nlohmann::json& model_specific = nlohmann::json::object());

// 4 classes in 2 tasks over an 8-dim random backbone, for gradient checks.
nlohmann::json tiny_config(const std::string& model,
                           const nlohmann::json& model_specific = nlohmann::json::object());

// Model-specific settings that fit the depth-2 test backbones.
nlohmann::json default_model_specific(const std::string& model);

// Hash of each component's tensors, keyed by component name.
std::vector<std::pair<std::string, std::uint64_t>> component_hashes(const Learner& learner);

}  // namespace cilforge::testing

#pragma once

// Internal JSON (de)serialization for model specs and parameter layouts,
// shared between the model checkpoint and the trainer state checkpoint.

#include <json.hpp>
#include <vector>

#include "medcl/segnet.hpp"

namespace medcl::detail {

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::ordered_json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

nlohmann::ordered_json layout_to_json(const std::vector<ParamEntry>& layout);
std::vector<ParamEntry> layout_from_json(const nlohmann::json& j);

// The layout (and hence parameter count) the architecture dictates.
std::vector<ParamEntry> expected_layout(const ModelSpec& spec);

}  // namespace medcl::detail

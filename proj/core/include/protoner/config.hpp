#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "protoner/pipeline.hpp"

namespace protoner {

// Flat key=value experiment config. Every RunConfig field is addressable by
// name; unknown keys are rejected. Environment variables named
// PROTONER_<KEY> (upper-cased key) override both defaults and file values.
RunConfig parse_config_text(std::string_view text, bool apply_env = true);
RunConfig parse_config_file(const std::filesystem::path& path, bool apply_env = true);
std::string config_to_text(const RunConfig& config);

}  // namespace protoner

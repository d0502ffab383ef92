#pragma once

// JSON mappings for configuration types.

#include <nlohmann/json.hpp>

#include "pathseek/pyramid.hpp"

namespace pathseek {

void to_json(nlohmann::json& j, const PyramidConfig& c);
void from_json(const nlohmann::json& j, PyramidConfig& c);

std::string sha256_hex(const std::string& bytes);

}  // namespace pathseek

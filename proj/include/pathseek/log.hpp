#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace pathseek {

// Applies PATHSEEK_LOG (error | info | debug) to the default logger.
inline void configure_logging() {
  if (!spdlog::get("pathseek")) spdlog::set_default_logger(spdlog::stderr_color_mt("pathseek"));
  const char* env = std::getenv("PATHSEEK_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%l] %v");
}

}  // namespace pathseek

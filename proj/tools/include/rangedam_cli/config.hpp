#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "rangedam/projection.hpp"

namespace rangedam::cli {

/// Bad flags, bad config keys or values: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { verify, fast };

Precision parse_precision(const std::string& text);
const char* to_string(Precision p);

struct Config {
  std::uint32_t width = 2048;
  std::uint32_t height = 64;
  projection::FieldOfView fov;
  std::string channel_order = "x,y,z,range,intensity";
  std::optional<std::filesystem::path> class_map;
  std::uint64_t seed = 0;
  Precision precision = Precision::fast;
  bool normalize_intensity = false;
  std::size_t threads = 1;

  /// Throws UsageError when a value violates a module precondition.
  void validate() const;
};

/// Applies `key = value` lines onto `cfg`. Blank lines and `#` comments are
/// skipped; unknown keys and malformed values are usage errors.
void apply_config_text(Config& cfg, const std::string& text);
void apply_config_file(Config& cfg, const std::filesystem::path& path);

/// Precision from RANGE_DAM_PRECISION when set.
void apply_environment(Config& cfg);

}  // namespace rangedam::cli

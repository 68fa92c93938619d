#include "rangedam_cli/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rangedam/error.hpp"

namespace rangedam::cli {
namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("config: bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw UsageError("config: bad boolean for " + key + ": '" + value + "'");
}

}  // namespace

Precision parse_precision(const std::string& text) {
  if (text == "verify") return Precision::verify;
  if (text == "fast") return Precision::fast;
  throw UsageError("precision must be 'verify' or 'fast', got '" + text + "'");
}

const char* to_string(Precision p) { return p == Precision::verify ? "verify" : "fast"; }

void Config::validate() const {
  if (width == 0 || height == 0) throw UsageError("width and height must be positive");
  if (height > 65536) throw UsageError("height exceeds the ring index range");
  if (threads == 0) throw UsageError("threads must be at least 1");
  try {
    fov.validate();
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  if (channel_order != "x,y,z,range,intensity")
    throw UsageError("unsupported channel_order '" + channel_order + "' (only x,y,z,range,intensity)");
}

void apply_config_text(Config& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "width") cfg.width = parse_number<std::uint32_t>(key, value);
    else if (key == "height") cfg.height = parse_number<std::uint32_t>(key, value);
    else if (key == "lvfov") cfg.fov.lvfov = parse_number<double>(key, value);
    else if (key == "hvfov") cfg.fov.hvfov = parse_number<double>(key, value);
    else if (key == "lhfov") cfg.fov.lhfov = parse_number<double>(key, value);
    else if (key == "hhfov") cfg.fov.hhfov = parse_number<double>(key, value);
    else if (key == "channel_order") cfg.channel_order = value;
    else if (key == "class_map") cfg.class_map = value;
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "precision") cfg.precision = parse_precision(value);
    else if (key == "normalize_intensity") cfg.normalize_intensity = parse_bool(key, value);
    else if (key == "threads") cfg.threads = parse_number<std::size_t>(key, value);
    else throw UsageError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
}

void apply_config_file(Config& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(cfg, text.str());
}

void apply_environment(Config& cfg) {
  if (const char* env = std::getenv("RANGE_DAM_PRECISION"); env && *env) cfg.precision = parse_precision(env);
}

}  // namespace rangedam::cli

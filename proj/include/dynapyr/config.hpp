#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "dynapyr/train.hpp"

namespace dynapyr {

/// Bad config text or value. `key()` is empty when no key is involved
/// (unreadable file, malformed line).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what) : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError(std::string(key), "config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return v;
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(parse_number<T>(key, trim(text.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf.data(), ptr);
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace detail

/// Keys accepted in config files and as CLI overrides, in manifest order.
inline constexpr std::array<std::string_view, 16> kConfigKeys{
    "seed",    "data_seed",  "epochs",      "batch_size",  "learning_rate",    "alpha_budget", "lambda",  "tau",
    "variant", "train_size", "test_size",   "max_objects", "pyramid_channels", "widths",       "kernels", "dilations"};

/// Assigns one key. Throws ConfigError naming the key on an unknown key or
/// an unparsable value; range checks happen in validate_config.
inline void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  using detail::parse_list;
  using detail::parse_number;
  value = detail::trim(value);
  if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "data_seed") cfg.data_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "epochs") cfg.epochs = parse_number<std::size_t>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(key, value);
  else if (key == "alpha_budget") cfg.alpha_budget = parse_number<double>(key, value);
  else if (key == "lambda") cfg.lambda = parse_number<double>(key, value);
  else if (key == "tau") cfg.tau = parse_number<double>(key, value);
  else if (key == "train_size") cfg.train_size = parse_number<std::size_t>(key, value);
  else if (key == "test_size") cfg.test_size = parse_number<std::size_t>(key, value);
  else if (key == "max_objects") cfg.max_objects = parse_number<std::size_t>(key, value);
  else if (key == "pyramid_channels") cfg.model.pyramid_channels = parse_number<std::size_t>(key, value);
  else if (key == "kernels") cfg.model.kernels = parse_list<std::size_t>(key, value);
  else if (key == "dilations") cfg.model.dilations = parse_list<std::size_t>(key, value);
  else if (key == "variant") {
    try {
      cfg.model.variant = parse_variant(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(key), "config key 'variant': " + std::string(e.what()));
    }
  } else if (key == "widths") {
    const auto w = parse_list<std::size_t>(key, value);
    if (w.size() != kLevelCount) {
      throw ConfigError(std::string(key), "config key 'widths': need " + std::to_string(kLevelCount) + " values, got " +
                                              std::to_string(w.size()));
    }
    std::copy(w.begin(), w.end(), cfg.model.widths.begin());
  } else {
    throw ConfigError(std::string(key), "unknown config key '" + std::string(key) + "'");
  }
}

/// Range checks on a resolved config; the ConfigError names the first
/// offending key.
inline void validate_config(const TrainConfig& cfg) {
  auto fail = [](const char* key, const std::string& why) {
    throw ConfigError(key, "invalid config key '" + std::string(key) + "': " + why);
  };
  const std::pair<const char*, std::size_t> counts[] = {
      {"epochs", cfg.epochs},         {"batch_size", cfg.batch_size},   {"train_size", cfg.train_size},
      {"test_size", cfg.test_size},   {"max_objects", cfg.max_objects}, {"pyramid_channels", cfg.model.pyramid_channels}};
  for (const auto& [key, v] : counts)
    if (v == 0) fail(key, "must be positive");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) fail("learning_rate", "must be a positive number");
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) fail("tau", "must be a positive number");
  if (!(cfg.alpha_budget > 0.0 && cfg.alpha_budget <= 1.0)) fail("alpha_budget", "must lie in (0, 1]");
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda)) fail("lambda", "must be a non-negative number");
  for (std::size_t w : cfg.model.widths) {
    if (w == 0) fail("widths", "must be positive");
    if (cfg.model.variant == Variant::dyfpn && w % 4 != 0) fail("widths", "must be divisible by 4 for dyfpn gates");
  }
  if (cfg.model.kernels.size() != cfg.model.dilations.size()) fail("dilations", "needs one entry per kernel");
  try {
    InceptionConfig::from_lists(cfg.model.widths[0], cfg.model.pyramid_channels, cfg.model.kernels, cfg.model.dilations);
  } catch (const std::invalid_argument& e) {
    fail("kernels", e.what());
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", std::string("invalid config: ") + e.what());
  }
}

/// Applies `key = value` lines on top of `cfg`. `#` starts a comment; blank
/// lines are ignored.
inline TrainConfig parse_config(std::string_view text, TrainConfig cfg = {}) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("", "config line " + std::to_string(line_no) + ": expected 'key = value', got '" + std::string(line) + "'");
    }
    set_config_value(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path, TrainConfig cfg = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), cfg);
}

/// Every key, one per line, in a form parse_config reads back exactly.
inline std::string format_config(const TrainConfig& cfg) {
  using detail::format_double;
  using detail::join;
  std::ostringstream os;
  os << "seed = " << cfg.seed << '\n'
     << "data_seed = " << cfg.data_seed << '\n'
     << "epochs = " << cfg.epochs << '\n'
     << "batch_size = " << cfg.batch_size << '\n'
     << "learning_rate = " << format_double(cfg.learning_rate) << '\n'
     << "alpha_budget = " << format_double(cfg.alpha_budget) << '\n'
     << "lambda = " << format_double(cfg.lambda) << '\n'
     << "tau = " << format_double(cfg.tau) << '\n'
     << "variant = " << to_string(cfg.model.variant) << '\n'
     << "train_size = " << cfg.train_size << '\n'
     << "test_size = " << cfg.test_size << '\n'
     << "max_objects = " << cfg.max_objects << '\n'
     << "pyramid_channels = " << cfg.model.pyramid_channels << '\n'
     << "widths = " << join(std::vector<std::size_t>(cfg.model.widths.begin(), cfg.model.widths.end())) << '\n'
     << "kernels = " << join(cfg.model.kernels) << '\n'
     << "dilations = " << join(cfg.model.dilations) << '\n';
  return os.str();
}

}  // namespace dynapyr

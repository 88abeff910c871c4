#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "texsr/error.hpp"

namespace texsr::io {

/// Plain-text `key = value` file with `[section]` headers. Keys are addressed
/// as "section.key". Unknown keys are reported by `unused_keys`.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in, const std::string& name) {
    Config c;
    c.name_ = name;
    try {
      boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(name + ": line " + std::to_string(e.line()) + ": " + e.message());
    }
    return c;
  }

  static Config parse_string(const std::string& text, const std::string& name = "<config>") {
    std::istringstream in(text);
    return parse(in, name);
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    return parse(in, path.string());
  }

  [[nodiscard]] const std::string& name() const { return name_; }

  [[nodiscard]] bool has(const std::string& key) const {
    return static_cast<bool>(tree_.get_optional<std::string>(key));
  }

  template <typename T>
  [[nodiscard]] T get(const std::string& key, const T& fallback) const {
    if (!has(key)) return fallback;
    return require<T>(key);
  }

  template <typename T>
  [[nodiscard]] T require(const std::string& key) const {
    used_.insert(key);
    const auto raw = tree_.get_optional<std::string>(key);
    if (!raw) throw ConfigError(name_ + ": missing required key '" + key + "'");
    if constexpr (std::is_same_v<T, std::string>) {
      return *raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (*raw == "1" || *raw == "true" || *raw == "yes" || *raw == "on") return true;
      if (*raw == "0" || *raw == "false" || *raw == "no" || *raw == "off") return false;
      throw ConfigError(name_ + ": key '" + key + "' expects a boolean, got '" + *raw + "'");
    } else {
      std::istringstream is(*raw);
      T v{};
      if constexpr (std::is_unsigned_v<T>) {
        if (!raw->empty() && raw->front() == '-') {
          throw ConfigError(name_ + ": key '" + key + "' must be non-negative, got '" + *raw + "'");
        }
      }
      if (!(is >> v) || !(is >> std::ws).eof()) {
        throw ConfigError(name_ + ": key '" + key + "' has invalid value '" + *raw + "'");
      }
      return v;
    }
  }

  /// Comma separated numbers.
  [[nodiscard]] std::vector<double> get_list(const std::string& key,
                                             const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::string raw = require<std::string>(key);
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::istringstream is(item);
      double v = 0.0;
      if (!(is >> v) || !(is >> std::ws).eof()) {
        throw ConfigError(name_ + ": key '" + key + "' has invalid list item '" + item + "'");
      }
      out.push_back(v);
    }
    if (out.empty()) throw ConfigError(name_ + ": key '" + key + "' is an empty list");
    return out;
  }

  /// Keys present in the file that no getter asked for.
  [[nodiscard]] std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [section, body] : tree_) {
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        if (!used_.count(full)) out.push_back(full);
      }
    }
    return out;
  }

 private:
  std::string name_;
  boost::property_tree::ptree tree_;
  mutable std::set<std::string> used_;
};

/// Shortest text that reads back to the same double.
inline std::string format_exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace texsr::io

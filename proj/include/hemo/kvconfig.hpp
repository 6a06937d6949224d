#pragma once

#include <map>
#include <optional>
#include <string>

namespace hemo::config {

// Flat `key = value` configuration text with `#` comments. Parsing keeps the
// source line of each key so later validation can point at the exact line.
struct Config {
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, Entry> entries;

  bool has(const std::string& key) const { return entries.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  // Throw std::runtime_error naming the key and line on a malformed number.
  std::optional<double> get_double(const std::string& key) const;
  std::optional<long long> get_int(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;  // true/false/1/0
};

// Throws std::runtime_error with the offending line number on syntax errors
// and on duplicate keys.
Config parse_kv(const std::string& text);
Config load_kv_file(const std::string& path);

}  // namespace hemo::config

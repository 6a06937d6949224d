#include "hemo/kvconfig.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hemo::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::optional<std::string> Config::get(const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) return std::nullopt;
  return it->second.value;
}

std::optional<double> Config::get_double(const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) return std::nullopt;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second.value, &used);
    if (used != it->second.value.size()) throw std::invalid_argument(it->second.value);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config line " + std::to_string(it->second.line) + ": key '" + key +
                             "' wants a number, got '" + it->second.value + "'");
  }
}

std::optional<long long> Config::get_int(const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) return std::nullopt;
  try {
    std::size_t used = 0;
    long long v = std::stoll(it->second.value, &used);
    if (used != it->second.value.size()) throw std::invalid_argument(it->second.value);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config line " + std::to_string(it->second.line) + ": key '" + key +
                             "' wants an integer, got '" + it->second.value + "'");
  }
}

std::optional<bool> Config::get_bool(const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) return std::nullopt;
  const std::string& v = it->second.value;
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config line " + std::to_string(it->second.line) + ": key '" + key +
                           "' wants true/false, got '" + v + "'");
}

Config parse_kv(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
    }
    if (cfg.entries.count(key)) {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": duplicate key '" +
                               key + "'");
    }
    cfg.entries.emplace(key, Config::Entry{value, line_no});
  }
  return cfg;
}

Config load_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv(buf.str());
}

}  // namespace hemo::config

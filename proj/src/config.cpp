#include "emff/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace emff {
namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool parse_number(const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end != nullptr && *end == '\0' && !s.empty();
}

// Splits a bracket list body at top-level commas.
std::vector<std::string> split_top_level(const std::string& body) {
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (char ch : body) {
    if (ch == '[') ++depth;
    if (ch == ']') --depth;
    if (ch == ',' && depth == 0) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!trim(cur).empty()) parts.push_back(trim(cur));
  return parts;
}

ConfigValue parse_value(const std::string& raw, const std::string& key,
                        const std::string& origin) {
  ConfigValue v;
  const std::string s = trim(raw);
  if (s.empty()) throw ConfigError(origin + ": empty value for key '" + key + "'");
  if (s == "true" || s == "false") {
    v.type = ConfigValue::Type::boolean;
    v.flag = s == "true";
    return v;
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError(origin + ": unbalanced brackets for key '" + key + "'");
    const std::string body = trim(s.substr(1, s.size() - 2));
    const auto parts = split_top_level(body);
    const bool nested = !parts.empty() && !parts.front().empty() && parts.front().front() == '[';
    if (nested) {
      v.type = ConfigValue::Type::array2;
      for (const auto& p : parts) {
        if (p.front() != '[' || p.back() != ']')
          throw ConfigError(origin + ": ragged nested array for key '" + key + "'");
        std::vector<double> row;
        for (const auto& q : split_top_level(trim(p.substr(1, p.size() - 2)))) {
          double d;
          if (!parse_number(q, d))
            throw ConfigError(origin + ": non-numeric entry '" + q + "' in key '" + key + "'");
          row.push_back(d);
        }
        v.arr2.push_back(std::move(row));
      }
    } else {
      v.type = ConfigValue::Type::array;
      for (const auto& p : parts) {
        double d;
        if (!parse_number(p, d))
          throw ConfigError(origin + ": non-numeric entry '" + p + "' in key '" + key + "'");
        v.arr.push_back(d);
      }
    }
    return v;
  }
  double d;
  if (parse_number(s, d)) {
    v.type = ConfigValue::Type::number;
    v.num = d;
    return v;
  }
  v.type = ConfigValue::Type::text;
  v.str = s;
  return v;
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = parse_value(line.substr(eq + 1), key, origin + ":" + std::to_string(lineno));
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str(), path);
}

const ConfigValue& Config::fetch(const std::string& key, ConfigValue::Type want) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  if (it->second.type != want) {
    // Promote scalars to 1-element arrays where an array is requested.
    if (!(want == ConfigValue::Type::array && it->second.type == ConfigValue::Type::number))
      throw ConfigError(origin_ + ": key '" + key + "' has the wrong type");
  }
  consumed_.insert(key);
  return it->second;
}

double Config::number(const std::string& key) { return fetch(key, ConfigValue::Type::number).num; }

double Config::number(const std::string& key, double fallback) {
  if (!has(key)) return fallback;
  return number(key);
}

std::string Config::text(const std::string& key) {
  return fetch(key, ConfigValue::Type::text).str;
}

std::string Config::text(const std::string& key, const std::string& fallback) {
  if (!has(key)) return fallback;
  return text(key);
}

bool Config::flag(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  return fetch(key, ConfigValue::Type::boolean).flag;
}

std::vector<double> Config::array(const std::string& key) {
  const ConfigValue& v = fetch(key, ConfigValue::Type::array);
  if (v.type == ConfigValue::Type::number) return {v.num};
  return v.arr;
}

std::vector<double> Config::array(const std::string& key, const std::vector<double>& fallback) {
  if (!has(key)) return fallback;
  return array(key);
}

std::vector<std::vector<double>> Config::array2(const std::string& key) {
  return fetch(key, ConfigValue::Type::array2).arr2;
}

std::vector<std::vector<double>> Config::array2(
    const std::string& key, const std::vector<std::vector<double>>& fallback) {
  if (!has(key)) return fallback;
  return array2(key);
}

void Config::finish() const {
  std::vector<std::string> leftover;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) leftover.push_back(key);
  if (!leftover.empty()) {
    std::string msg = origin_ + ": unknown key(s):";
    for (const auto& k : leftover) msg += " '" + k + "'";
    throw ConfigError(msg);
  }
}

void Config::set_number(const std::string& key, double v) {
  ConfigValue cv;
  cv.type = ConfigValue::Type::number;
  cv.num = v;
  values_[key] = cv;
}

void Config::set_text(const std::string& key, const std::string& v) {
  ConfigValue cv;
  cv.type = ConfigValue::Type::text;
  cv.str = v;
  values_[key] = cv;
}

}  // namespace emff

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "emff/linalg.hpp"

// Key-value configuration files: `key = value` lines, `#` comments, values
// are numbers, strings, booleans, or (nested) bracket arrays. Physical
// quantities carry their unit as a key suffix (e.g. dt_gnd_s, mass_kg).
// Every key must be consumed by the command that loads the file; leftovers
// are reported as errors, so typos never become silent defaults.

namespace emff {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigValue {
  enum class Type { number, text, boolean, array, array2 };
  Type type = Type::number;
  double num = 0.0;
  std::string str;
  bool flag = false;
  std::vector<double> arr;
  std::vector<std::vector<double>> arr2;
};

class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  double number(const std::string& key);
  double number(const std::string& key, double fallback);
  std::string text(const std::string& key);
  std::string text(const std::string& key, const std::string& fallback);
  bool flag(const std::string& key, bool fallback);
  std::vector<double> array(const std::string& key);
  std::vector<double> array(const std::string& key, const std::vector<double>& fallback);
  std::vector<std::vector<double>> array2(const std::string& key);
  std::vector<std::vector<double>> array2(const std::string& key,
                                          const std::vector<std::vector<double>>& fallback);

  // Throws listing any keys that were never consumed.
  void finish() const;

  void set_number(const std::string& key, double v);
  void set_text(const std::string& key, const std::string& v);

 private:
  const ConfigValue& fetch(const std::string& key, ConfigValue::Type want);
  std::map<std::string, ConfigValue> values_;
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

}  // namespace emff

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "emoattn/error.hpp"

namespace emoattn {

/// Ordered key=value settings; '#' starts a comment line.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    values_[key] = os.str();
  }
  void set(const std::string& key, std::size_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  void set(const std::string& key, const char* value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void remove(const std::string& key) { values_.erase(key); }
  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error("missing setting '" + key + "'");
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }
  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    try {
      return std::stod(get(key));
    } catch (const std::exception&) {
      throw Error("setting '" + key + "' is not a number: '" + get(key) + "'");
    }
  }
  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    try {
      return static_cast<std::size_t>(std::stoull(get(key)));
    } catch (const std::exception&) {
      throw Error("setting '" + key + "' is not a non-negative integer: '" + get(key) + "'");
    }
  }
  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error("setting '" + key + "' is not a boolean: '" + v + "'");
  }

  void merge(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  const std::map<std::string, std::string>& items() const { return values_; }

  /// Parses one `key=value` assignment.
  void assign(const std::string& line, const std::string& where = "") {
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ParseError((where.empty() ? "" : where + ": ") + "expected key=value, got '" + line + "'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  static KeyValues parse(std::istream& in, const std::string& source = "<stream>") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      kv.assign(line, source + ": line " + std::to_string(lineno));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse(in, path.string());
  }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : values_) out << k << "=" << v << "\n";
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write(out);
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace emoattn

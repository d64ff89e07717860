// key = value configuration files: UTF-8, one pair per line, '#' comments.
// Parse errors carry the line number; missing keys name the key.
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace xemb::harness {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class Config {
 public:
  static Config parse_string(const std::string& text,
                             const std::string& origin = "<string>");
  static Config parse_file(const std::string& path);

  // "key=value" or "key = value" from a CLI override.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;  // throws when absent
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int_or(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  uint64_t get_u64_or(const std::string& key, uint64_t fallback) const;
  void set(const std::string& key, const std::string& value);

  // sorted "key = value" lines, the hashing surface
  std::string canonical() const;
  uint64_t hash() const;  // FNV-1a of canonical()

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

uint64_t fnv1a(const std::string& s);

}  // namespace xemb::harness

#include "xemb/config.hpp"

#include <fstream>
#include <sstream>

namespace xemb::harness {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

Config Config::parse_string(const std::string& text,
                            const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override has empty key");
  values_[key] = trim(assignment.substr(eq + 1));
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("missing config key '" + key + "' (no default)");
  return it->second;
}

std::string Config::get_or(const std::string& key,
                           const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

namespace {
template <typename T, typename Fn>
T parse_num(const std::string& key, const std::string& raw, Fn&& fn) {
  try {
    size_t pos = 0;
    T v = fn(raw, &pos);
    if (pos != raw.size())
      throw ConfigError("config key '" + key + "': trailing characters in '" +
                        raw + "'");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + raw + "'");
  }
}
}  // namespace

int64_t Config::get_int(const std::string& key) const {
  return parse_num<int64_t>(key, get(key), [](const std::string& s, size_t* p) {
    return std::stoll(s, p);
  });
}

int64_t Config::get_int_or(const std::string& key, int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double Config::get_double(const std::string& key) const {
  return parse_num<double>(key, get(key), [](const std::string& s, size_t* p) {
    return std::stod(s, p);
  });
}

double Config::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool Config::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v +
                    "'");
}

uint64_t Config::get_u64_or(const std::string& key, uint64_t fallback) const {
  if (!has(key)) return fallback;
  return parse_num<uint64_t>(key, get(key),
                             [](const std::string& s, size_t* p) {
                               return std::stoull(s, p);
                             });
}

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

uint64_t Config::hash() const { return fnv1a(canonical()); }

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace xemb::harness

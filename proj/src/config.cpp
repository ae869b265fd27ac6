#include "cbnn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cbnn/errors.hpp"

namespace cbnn {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto piece = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Config Config::parse(std::string_view text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::string current;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ValidationError(origin + ":" + std::to_string(line_no) + ": unterminated section");
      }
      current = trim(std::string_view(line).substr(1, line.size() - 2));
      cfg.find_or_add(current);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) {
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    cfg.set(current, key, trim(std::string_view(line).substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const Config::Section* Config::find(const std::string& section) const {
  for (const auto& s : sections_) {
    if (s.name == section) return &s;
  }
  return nullptr;
}

Config::Section& Config::find_or_add(const std::string& section) {
  for (auto& s : sections_) {
    if (s.name == section) return s;
  }
  sections_.push_back(Section{section, {}});
  return sections_.back();
}

bool Config::has_section(const std::string& section) const { return find(section) != nullptr; }

bool Config::has(const std::string& section, const std::string& key) const {
  const Section* s = find(section);
  if (!s) return false;
  for (const auto& [k, v] : s->entries) {
    if (k == key) return true;
  }
  return false;
}

const std::string& Config::get(const std::string& section, const std::string& key) const {
  if (const Section* s = find(section)) {
    for (const auto& [k, v] : s->entries) {
      if (k == key) return v;
    }
  }
  throw ValidationError(origin_ + ": missing key [" + section + "] " + key);
}

std::string Config::get_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& v = get(section, key);
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ValidationError(origin_ + ": [" + section + "] " + key + " is not a number: " + v);
  }
  return out;
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::uint64_t fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& v = get(section, key);
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ValidationError(origin_ + ": [" + section + "] " + key +
                          " is not a non-negative integer: " + v);
  }
  return out;
}

std::size_t Config::get_size(const std::string& section, const std::string& key,
                             std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(section, key, fallback));
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& v = get(section, key);
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ValidationError(origin_ + ": [" + section + "] " + key + " is not a boolean: " + v);
}

std::vector<std::string> Config::get_list(const std::string& section,
                                          const std::string& key) const {
  return split_list(get(section, key));
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  Section& s = find_or_add(section);
  for (auto& [k, v] : s.entries) {
    if (k == key) {
      v = value;
      return;
    }
  }
  s.entries.emplace_back(key, value);
}

std::vector<std::string> Config::sections() const {
  std::vector<std::string> out;
  for (const auto& s : sections_) out.push_back(s.name);
  return out;
}

const std::vector<std::pair<std::string, std::string>>& Config::entries(
    const std::string& section) const {
  static const std::vector<std::pair<std::string, std::string>> kEmpty;
  const Section* s = find(section);
  return s ? s->entries : kEmpty;
}

std::string Config::serialize() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& s : sections_) {
    if (!s.name.empty()) {
      if (!first) os << "\n";
      os << "[" << s.name << "]\n";
    }
    for (const auto& [k, v] : s.entries) os << k << " = " << v << "\n";
    first = false;
  }
  return os.str();
}

}  // namespace cbnn

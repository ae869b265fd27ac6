#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cbnn {

// Plain key/value text with [sections]. '#' or ';' start a comment line.
// Keys before any section header land in the "" section. Order of
// sections and keys is preserved for serialization.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "<string>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const;
  // Throws ValidationError if missing.
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& section, const std::string& key,
                       std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  // Comma-separated list, entries trimmed, empties dropped.
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);
  std::vector<std::string> sections() const;
  const std::vector<std::pair<std::string, std::string>>& entries(const std::string& section) const;

  std::string serialize() const;
  const std::string& origin() const { return origin_; }

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  const Section* find(const std::string& section) const;
  Section& find_or_add(const std::string& section);

  std::vector<Section> sections_;
  std::string origin_;
};

std::string trim(std::string_view s);
std::vector<std::string> split_list(std::string_view s, char sep = ',');
// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace cbnn

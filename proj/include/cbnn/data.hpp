#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "cbnn/matrix.hpp"

namespace cbnn {

enum class ColumnKind { continuous, ordinal, one_hot };

// Observations in rows, one named column per feature. No missing values.
struct DataMatrix {
  std::vector<std::string> names;
  Matrix values;
  std::vector<ColumnKind> kinds;
  // Column-index sets whose entries sum to 1 in every row.
  std::vector<std::vector<std::size_t>> one_hot_groups;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  // Throws ValidationError for an unknown name.
  std::size_t column_index(const std::string& name) const;
  std::vector<double> column(std::size_t index) const;
  // Matches exact names, or a prefix when the pattern ends in '*'.
  std::vector<std::size_t> match_columns(const std::string& pattern) const;
  DataMatrix select_rows(const std::vector<std::size_t>& rows) const;
  // Checks shape agreement, finiteness and one-hot sums.
  void validate() const;
};

// Lines starting with '#' before the header are returned as comments.
struct CsvDocument {
  std::vector<std::string> comments;
  DataMatrix data;
};

CsvDocument read_csv(const std::filesystem::path& path);
CsvDocument parse_csv(const std::string& text, const std::string& origin = "<string>");
std::string format_csv(const DataMatrix& data, const std::vector<std::string>& comments = {});
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cbnn

#include "cbnn/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cbnn/config.hpp"
#include "cbnn/errors.hpp"

namespace cbnn {

std::size_t DataMatrix::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ValidationError("unknown column '" + name + "'");
}

std::vector<double> DataMatrix::column(std::size_t index) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) out[r] = values(r, index);
  return out;
}

std::vector<std::size_t> DataMatrix::match_columns(const std::string& pattern) const {
  std::vector<std::size_t> out;
  if (!pattern.empty() && pattern.back() == '*') {
    const std::string prefix = pattern.substr(0, pattern.size() - 1);
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i].compare(0, prefix.size(), prefix) == 0) out.push_back(i);
    }
  } else {
    out.push_back(column_index(pattern));
  }
  return out;
}

DataMatrix DataMatrix::select_rows(const std::vector<std::size_t>& rows) const {
  DataMatrix out = *this;
  out.values = gather_rows(values, rows);
  return out;
}

void DataMatrix::validate() const {
  if (names.size() != values.cols()) {
    throw ValidationError("data has " + std::to_string(names.size()) + " names for " +
                          std::to_string(values.cols()) + " columns");
  }
  if (kinds.size() != names.size()) throw ValidationError("column kinds do not match columns");
  if (!values.all_finite()) throw ValidationError("data contains missing or non-finite values");
  for (const auto& group : one_hot_groups) {
    for (std::size_t r = 0; r < rows(); ++r) {
      double s = 0.0;
      for (std::size_t c : group) s += values(r, c);
      if (std::abs(s - 1.0) > 1e-12) {
        throw ValidationError("one-hot group starting at column '" + names[group.front()] +
                              "' does not sum to 1 in row " + std::to_string(r));
      }
    }
  }
}

CsvDocument parse_csv(const std::string& text, const std::string& origin) {
  CsvDocument doc;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::vector<double> cells;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!have_header && line[0] == '#') {
      doc.comments.push_back(line.substr(1));
      continue;
    }
    if (!have_header) {
      doc.data.names = split_list(line);
      have_header = true;
      continue;
    }
    std::size_t fields = 0;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      const std::string cell = trim(std::string_view(line).substr(
          start, pos == std::string::npos ? std::string::npos : pos - start));
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        throw ValidationError(origin + ":" + std::to_string(line_no) +
                              ": missing or non-numeric value '" + cell + "'");
      }
      cells.push_back(v);
      ++fields;
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (fields != doc.data.names.size()) {
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(doc.data.names.size()) + " fields, got " +
                            std::to_string(fields));
    }
    ++rows;
  }
  if (!have_header) throw ValidationError(origin + ": no header row");
  doc.data.values = Matrix(rows, doc.data.names.size(), std::move(cells));
  doc.data.kinds.assign(doc.data.names.size(), ColumnKind::continuous);
  return doc;
}

CsvDocument read_csv(const std::filesystem::path& path) {
  return parse_csv(read_text_file(path), path.string());
}

std::string format_csv(const DataMatrix& data, const std::vector<std::string>& comments) {
  std::string out;
  for (const auto& c : comments) out += "#" + c + "\n";
  for (std::size_t i = 0; i < data.names.size(); ++i) {
    if (i) out += ",";
    out += data.names[i];
  }
  out += "\n";
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < data.cols(); ++c) {
      if (c) out += ",";
      out += format_double(data.values(r, c));
    }
    out += "\n";
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace cbnn

#ifndef HMCECS_DATA_IO_HPP
#define HMCECS_DATA_IO_HPP

#include <hmcecs/model.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace hmcecs {

/// Shortest-safe decimal form with 17 significant digits; round-trips exactly.
inline std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const std::string& context) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw IoError(context + ": cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Reads a CSV with a header row. The column named "y" holds the responses;
/// every other column is a covariate, kept in file order. No intercept is
/// added.
inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("data file " + path.string() + " is empty");
  const auto header = split_csv_line(line);
  Index y_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == "y") {
      if (y_col >= 0) throw IoError("data file has more than one 'y' column");
      y_col = static_cast<Index>(i);
    }
  }
  if (y_col < 0) throw IoError("data file " + path.string() + " has no 'y' column");
  const Index d = static_cast<Index>(header.size()) - 1;
  if (d < 1) throw IoError("data file has no covariate columns");

  std::vector<double> xs;
  std::vector<double> ys;
  Index row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IoError("data file row " + std::to_string(row + 1) + " has " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(header.size()));
    }
    const std::string ctx = "data file row " + std::to_string(row + 1);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const double v = parse_double(fields[i], ctx);
      if (static_cast<Index>(i) == y_col) {
        ys.push_back(v);
      } else {
        xs.push_back(v);
      }
    }
    ++row;
  }
  Dataset data{RowMatrix(row, d), Vector(row)};
  for (Index k = 0; k < row; ++k) {
    data.y[k] = ys[static_cast<std::size_t>(k)];
    for (Index j = 0; j < d; ++j) data.x(k, j) = xs[static_cast<std::size_t>(k * d + j)];
  }
  data.validate();
  return data;
}

/// Writes "y,x1,...,xd" with 17 significant digits.
inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write data file " + path.string());
  out << "y";
  for (Index j = 0; j < data.dim(); ++j) out << ",x" << (j + 1);
  out << '\n';
  for (Index k = 0; k < data.size(); ++k) {
    out << format_double(data.y[k]);
    for (Index j = 0; j < data.dim(); ++j) out << ',' << format_double(data.x(k, j));
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace hmcecs

#endif  // HMCECS_DATA_IO_HPP

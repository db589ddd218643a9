#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ferm/util/error.hpp"

namespace ferm {

// Locale-independent numeric formatting (round-trip shortest form).
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_int(int64_t v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    raise(ErrorKind::io, "bad numeric field: '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// Append-oriented CSV writer. The header is written once on open; each row is
// flushed immediately so partial runs still leave readable files.
class CsvWriter {
 public:
  CsvWriter() = default;

  void open(const std::string& path, const std::vector<std::string>& columns) {
    columns_ = columns;
    os_.open(path, std::ios::out | std::ios::trunc);
    if (!os_) raise(ErrorKind::io, "cannot open csv for writing: " + path);
    for (size_t i = 0; i < columns.size(); ++i) {
      if (i) os_ << ',';
      os_ << columns[i];
    }
    os_ << '\n';
    os_.flush();
  }

  bool is_open() const { return os_.is_open(); }
  size_t num_columns() const { return columns_.size(); }

  void write_row(const std::vector<std::string>& fields) {
    if (!os_.is_open()) raise(ErrorKind::state, "csv writer not open");
    if (fields.size() != columns_.size())
      raise(ErrorKind::invalid_argument, "csv row width mismatch");
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) os_ << ',';
      os_ << fields[i];
    }
    os_ << '\n';
    os_.flush();
  }

  void close() {
    if (os_.is_open()) os_.close();
  }

 private:
  std::ofstream os_;
  std::vector<std::string> columns_;
};

}  // namespace ferm

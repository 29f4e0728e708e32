#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"

namespace percsens {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Raw payloads: little-endian IEEE-754 float32, row-major, channels last, no
// header. The manifest carries the shape.
// ---------------------------------------------------------------------------

inline std::vector<float> read_f32_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open payload " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % 4 != 0) throw ValidationError("payload " + path.string() + " size is not a multiple of 4 bytes");
  std::vector<float> out(bytes / 4);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : out) {
      auto u = std::bit_cast<std::uint32_t>(v);
      u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
      v = std::bit_cast<float>(u);
    }
  }
  return out;
}

inline void write_f32_file(const fs::path& path, std::span<const double> values) {
  std::vector<float> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f = static_cast<float>(values[i]);
    if constexpr (std::endian::native == std::endian::big) {
      auto u = std::bit_cast<std::uint32_t>(f);
      u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
      f = std::bit_cast<float>(u);
    }
    buf[i] = f;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write payload " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

inline ImageTensor read_image_payload(const fs::path& path, Shape shape, Range range) {
  const auto raw = read_f32_file(path);
  if (raw.size() != shape.size())
    throw ValidationError("shape mismatch: " + path.string() + " holds " + std::to_string(raw.size()) +
                          " floats, manifest declares " + shape.str() + " (" + std::to_string(shape.size()) + ")");
  return ImageTensor(shape, range, std::vector<double>(raw.begin(), raw.end()));
}

inline void write_image_payload(const fs::path& path, const ImageTensor& img) { write_f32_file(path, img.data()); }

// ---------------------------------------------------------------------------
// CSV. Fields never contain commas or quotes (ids are validated), so the
// format is plain comma-separated with a header row. Missing numeric values
// are written as NA and read back as NaN.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMissing = "NA";

inline bool is_missing(double v) { return std::isnan(v); }
inline constexpr double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }

/// Shortest representation that round-trips exactly.
inline std::string format_number(double v) {
  if (std::isnan(v)) return std::string(kMissing);
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_number(std::string_view s, std::string_view context) {
  if (s == kMissing || s.empty()) return missing_value();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ValidationError("cannot parse number '" + std::string(s) + "' in " + std::string(context));
  return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline void validate_field(std::string_view s, std::string_view what) {
  if (s.find_first_of(",\"\n\r") != std::string_view::npos)
    throw ValidationError(std::string(what) + " '" + std::string(s) + "' contains a comma, quote or newline");
}

struct CsvDocument {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ValidationError("missing column '" + std::string(name) + "'");
  }
  bool has_column(std::string_view name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
};

inline CsvDocument read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  CsvDocument doc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (doc.header.empty()) {
      doc.header = std::move(fields);
      continue;
    }
    if (fields.size() != doc.header.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(doc.header.size()) + " fields, got " + std::to_string(fields.size()));
    doc.rows.push_back(std::move(fields));
    doc.line_numbers.push_back(lineno);
  }
  if (doc.header.empty()) throw ValidationError(path.string() + ": empty CSV (no header)");
  return doc;
}

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    if (!out_) throw Error("cannot write " + path.string());
  }

  CsvWriter& header(const std::vector<std::string>& cols) { return row_strings(cols); }

  CsvWriter& row_strings(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
    return *this;
  }

  // Mixed row: leading string fields followed by numbers.
  CsvWriter& row(std::initializer_list<std::string> labels, std::initializer_list<double> numbers) {
    std::vector<std::string> f(labels);
    for (double v : numbers) f.push_back(format_number(v));
    return row_strings(f);
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace percsens

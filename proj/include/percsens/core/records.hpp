#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"
#include "percsens/core/io.hpp"

namespace percsens {

struct ImagePair {
  std::string pair_id;
  ImageTensor reference;
  ImageTensor distorted;
  double epsilon = 0.0;  // sphere radius, canonical-range L2 units
  double rmse = 0.0;     // [0,1]-range units
};

/// RMSE between two images expressed in [0,1]-range units.
inline double rmse_unit(const ImageTensor& a, const ImageTensor& b) {
  if (a.range() != b.range()) throw ValidationError("range mismatch between images");
  const double mse = squared_distance(a, b) / static_cast<double>(a.size());
  return std::sqrt(mse) * unit_scale(a.range());
}

// The eight probability surrogates of one (x, x~) pair. Missing values (for
// capabilities the density model lacks) are NaN.
struct DescriptorRecord {
  std::string pair_id;
  double logp_x = missing_value();
  double logp_xt = missing_value();
  double grad_norm_x = missing_value();
  double grad_norm_xt = missing_value();
  double dir_proj = missing_value();
  double mu_x = missing_value();
  double sigma_x = missing_value();
  double path_integral = missing_value();

  static constexpr std::array<std::string_view, 8> kFields = {"logp_x",  "logp_xt", "grad_norm_x",
                                                              "grad_norm_xt", "dir_proj", "mu_x",
                                                              "sigma_x", "path_integral"};

  std::array<double, 8> values() const {
    return {logp_x, logp_xt, grad_norm_x, grad_norm_xt, dir_proj, mu_x, sigma_x, path_integral};
  }
  void set(std::size_t i, double v) {
    double* f[] = {&logp_x, &logp_xt, &grad_norm_x, &grad_norm_xt, &dir_proj, &mu_x, &sigma_x, &path_integral};
    *f[i] = v;
  }
};

struct SensitivityRow {
  std::string pair_id;
  std::string metric;
  double distance = 0.0;
  double rmse = 0.0;         // [0,1]-range units
  double sensitivity = 0.0;  // distance / canonical-range L2 norm
};

/// Canonical-range L2 norm implied by an RMSE in [0,1] units over `dim`
/// elements: the denominator of the sensitivity ratio.
inline double l2_from_unit_rmse(double rmse, std::size_t dim) { return 2.0 * rmse * std::sqrt(static_cast<double>(dim)); }

inline const std::vector<std::string>& descriptor_header() {
  static const std::vector<std::string> h = [] {
    std::vector<std::string> v{"pair_id"};
    for (auto f : DescriptorRecord::kFields) v.emplace_back(f);
    return v;
  }();
  return h;
}

inline const std::vector<std::string>& distance_header() {
  static const std::vector<std::string> h{"pair_id", "metric", "distance", "rmse", "sensitivity"};
  return h;
}

inline void write_descriptors_csv(const fs::path& path, const std::vector<DescriptorRecord>& records) {
  CsvWriter w(path);
  w.header(descriptor_header());
  for (const auto& r : records) {
    std::vector<std::string> f{r.pair_id};
    for (double v : r.values()) f.push_back(format_number(v));
    w.row_strings(f);
  }
}

inline std::vector<DescriptorRecord> read_descriptors_csv(const fs::path& path) {
  const auto doc = read_csv(path);
  if (doc.header != descriptor_header())
    throw ValidationError(path.string() + ": descriptor header mismatch");
  std::vector<DescriptorRecord> out;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    DescriptorRecord rec;
    rec.pair_id = doc.rows[r][0];
    for (std::size_t i = 0; i < 8; ++i)
      rec.set(i, parse_number(doc.rows[r][i + 1], path.string() + ":" + std::to_string(doc.line_numbers[r])));
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_distances_csv(const fs::path& path, const std::vector<SensitivityRow>& rows) {
  CsvWriter w(path);
  w.header(distance_header());
  for (const auto& r : rows) w.row({r.pair_id, r.metric}, {r.distance, r.rmse, r.sensitivity});
}

inline std::vector<SensitivityRow> read_distances_csv(const fs::path& path) {
  const auto doc = read_csv(path);
  if (doc.header != distance_header()) throw ValidationError(path.string() + ": distances header mismatch");
  std::vector<SensitivityRow> out;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto ctx = path.string() + ":" + std::to_string(doc.line_numbers[r]);
    const auto& f = doc.rows[r];
    out.push_back({f[0], f[1], parse_number(f[2], ctx), parse_number(f[3], ctx), parse_number(f[4], ctx)});
  }
  return out;
}

// Column-oriented numeric table keyed by row id. The joined
// descriptors + sensitivity table consumed by the analysis stages uses this
// layout: `pair_id,<descriptor columns>,rmse,sens_<metric>...`.
class DataTable {
 public:
  DataTable() = default;
  explicit DataTable(std::vector<std::string> ids) : ids_(std::move(ids)) {}

  std::size_t rows() const { return ids_.size(); }
  std::size_t cols() const { return names_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& column_names() const { return names_; }

  bool has(std::string_view name) const { return find(name) >= 0; }

  const std::vector<double>& column(std::string_view name) const {
    const auto i = find(name);
    if (i < 0) throw ValidationError("missing column '" + std::string(name) + "'");
    return data_[static_cast<std::size_t>(i)];
  }

  void add_column(std::string name, std::vector<double> values) {
    if (values.size() != ids_.size())
      throw ValidationError("column '" + name + "' has " + std::to_string(values.size()) + " values, table has " +
                            std::to_string(ids_.size()) + " rows");
    if (has(name)) throw ValidationError("duplicate column '" + name + "'");
    names_.push_back(std::move(name));
    data_.push_back(std::move(values));
  }

  /// Columns whose names start with `prefix`.
  std::vector<std::string> columns_with_prefix(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& n : names_)
      if (n.rfind(prefix, 0) == 0) out.push_back(n);
    return out;
  }

  /// Rows where every listed column is present (not NaN).
  DataTable complete_rows(const std::vector<std::string>& required) const {
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < rows(); ++r) {
      bool ok = true;
      for (const auto& c : required) ok = ok && !is_missing(column(c)[r]);
      if (ok) keep.push_back(r);
    }
    return subset(keep);
  }

  DataTable subset(const std::vector<std::size_t>& rows_idx) const {
    std::vector<std::string> ids;
    for (auto r : rows_idx) ids.push_back(ids_[r]);
    DataTable t(std::move(ids));
    for (std::size_t c = 0; c < cols(); ++c) {
      std::vector<double> v;
      v.reserve(rows_idx.size());
      for (auto r : rows_idx) v.push_back(data_[c][r]);
      t.add_column(names_[c], std::move(v));
    }
    return t;
  }

  void write_csv(const fs::path& path, std::string_view id_column = "pair_id") const {
    CsvWriter w(path);
    std::vector<std::string> h{std::string(id_column)};
    h.insert(h.end(), names_.begin(), names_.end());
    w.header(h);
    for (std::size_t r = 0; r < rows(); ++r) {
      std::vector<std::string> f{ids_[r]};
      for (std::size_t c = 0; c < cols(); ++c) f.push_back(format_number(data_[c][r]));
      w.row_strings(f);
    }
  }

  static DataTable read_csv_file(const fs::path& path) {
    const auto doc = read_csv(path);
    std::vector<std::string> ids;
    for (const auto& row : doc.rows) ids.push_back(row[0]);
    DataTable t(std::move(ids));
    for (std::size_t c = 1; c < doc.header.size(); ++c) {
      std::vector<double> v;
      v.reserve(doc.rows.size());
      for (std::size_t r = 0; r < doc.rows.size(); ++r)
        v.push_back(parse_number(doc.rows[r][c], path.string() + ":" + std::to_string(doc.line_numbers[r])));
      t.add_column(doc.header[c], std::move(v));
    }
    return t;
  }

 private:
  long find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<long>(i);
    return -1;
  }

  std::vector<std::string> ids_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> data_;
};

inline std::string sensitivity_column(std::string_view metric) { return "sens_" + std::string(metric); }

/// Joins descriptor records with per-metric sensitivities on pair_id. Pairs
/// without a sensitivity for some metric get NaN in that column.
inline DataTable join_tables(const std::vector<DescriptorRecord>& descriptors, const std::vector<SensitivityRow>& rows) {
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> pos;
  for (const auto& d : descriptors) {
    if (!pos.emplace(d.pair_id, ids.size()).second) throw ValidationError("duplicate descriptor row '" + d.pair_id + "'");
    ids.push_back(d.pair_id);
  }
  DataTable t(ids);
  for (std::size_t i = 0; i < 8; ++i) {
    std::vector<double> col;
    for (const auto& d : descriptors) col.push_back(d.values()[i]);
    t.add_column(std::string(DescriptorRecord::kFields[i]), std::move(col));
  }
  std::vector<std::string> metrics;
  std::map<std::string, std::vector<double>> sens;
  std::vector<double> rmse(ids.size(), missing_value());
  for (const auto& r : rows) {
    auto it = pos.find(r.pair_id);
    if (it == pos.end()) throw ValidationError("sensitivity row for unknown pair '" + r.pair_id + "'");
    auto [col, inserted] = sens.try_emplace(r.metric, ids.size(), missing_value());
    if (inserted) metrics.push_back(r.metric);
    if (!is_missing(col->second[it->second]))
      throw ValidationError("duplicate sensitivity for pair '" + r.pair_id + "', metric '" + r.metric + "'");
    col->second[it->second] = r.sensitivity;
    rmse[it->second] = r.rmse;
  }
  t.add_column("rmse", std::move(rmse));
  for (const auto& m : metrics) t.add_column(sensitivity_column(m), std::move(sens[m]));
  return t;
}

}  // namespace percsens

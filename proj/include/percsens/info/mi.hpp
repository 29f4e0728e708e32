#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"
#include "percsens/core/parallel.hpp"
#include "percsens/core/records.hpp"
#include "percsens/info/rbig.hpp"

namespace percsens {

struct MiResult {
  double mi_nats = 0.0;  // clamped at 0
  double mi_raw = 0.0;   // before clamping
  double icc = 0.0;
  std::size_t n_samples = 0;
  std::vector<std::string> group_a;
  std::vector<std::string> group_b;
  RbigResult joint, marginal_a, marginal_b;

  double mi_bits() const { return mi_nats / std::numbers::ln2; }
};

/// Information coefficient of correlation, sqrt(1 - exp(-2 I)) for I in nats.
/// Equals |rho| for a bivariate Gaussian. Always strictly below 1.
inline double icc(double mi_nats) {
  if (!(mi_nats >= 0.0)) throw ValidationError("icc: mutual information must be >= 0, got " + format_number(mi_nats));
  const double v = std::sqrt(-std::expm1(-2.0 * mi_nats));
  return std::min(v, std::nextafter(1.0, 0.0));
}

// I(A;B) = TC([A|B]) - TC(A) - TC(B).
inline MiResult mutual_information(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const RbigConfig& cfg,
                                   std::vector<std::string> labels_a = {}, std::vector<std::string> labels_b = {}) {
  if (a.rows() != b.rows())
    throw ValidationError("mutual_information: groups have " + std::to_string(a.rows()) + " and " +
                          std::to_string(b.rows()) + " rows");
  if (a.cols() < 1 || b.cols() < 1) throw ValidationError("mutual_information: empty group");
  MiResult r;
  r.n_samples = static_cast<std::size_t>(a.rows());
  r.group_a = std::move(labels_a);
  r.group_b = std::move(labels_b);
  Eigen::MatrixXd joint(a.rows(), a.cols() + b.cols());
  joint << a, b;
  r.joint = rbig_total_correlation(joint, cfg);
  r.marginal_a = rbig_total_correlation(a, cfg);
  r.marginal_b = rbig_total_correlation(b, cfg);
  r.mi_raw = r.joint.total_correlation - r.marginal_a.total_correlation - r.marginal_b.total_correlation;
  r.mi_nats = std::max(0.0, r.mi_raw);
  r.icc = icc(r.mi_nats);
  return r;
}

/// Stacks the named table columns into an n x k matrix.
inline Eigen::MatrixXd table_matrix(const DataTable& t, const std::vector<std::string>& cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& c = t.column(cols[j]);
    for (std::size_t i = 0; i < c.size(); ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c[i];
  }
  return m;
}

struct SweepCandidate {
  int size = 0;
  std::vector<std::string> factors;
  double mi_nats = 0.0;
  double mi_raw = 0.0;
  double icc = 0.0;
  bool selected = false;
};

struct SweepResult {
  std::string metric;
  std::size_t n_samples = 0;
  std::vector<std::string> candidates;       // descriptor columns considered, in tie-break order
  std::vector<std::string> dropped;          // requested descriptors with no usable values
  std::vector<SweepCandidate> evaluated;     // every set evaluated, grouped by size
  std::vector<SweepCandidate> best;          // the selected set per size
};

struct SweepOptions {
  int max_factors = 6;
  std::vector<std::string> descriptors;  // empty: all descriptor columns of the table
  std::size_t threads = 0;
};

namespace detail {

// Keeps the requested descriptors that have at least one value, then the rows
// where all of them and the sensitivity are present.
inline DataTable usable_rows(const DataTable& table, const std::string& sens, std::vector<std::string>& cols,
                             std::vector<std::string>& dropped) {
  if (!table.has(sens)) throw ValidationError("missing sensitivity column '" + sens + "'");
  std::vector<std::string> keep;
  for (const auto& c : cols) {
    if (!table.has(c)) throw ValidationError("missing descriptor column '" + c + "'");
    const auto& v = table.column(c);
    if (std::any_of(v.begin(), v.end(), [](double x) { return !is_missing(x); }))
      keep.push_back(c);
    else
      dropped.push_back(c);
  }
  cols = keep;
  auto required = cols;
  required.push_back(sens);
  return table.complete_rows(required);
}

}  // namespace detail

// Greedy forward selection. At each size every remaining descriptor is added
// to the incumbent set; the highest ICC wins and ties keep the candidate that
// comes first in column order. Every candidate set uses the same rotation
// seed, so identical columns tie exactly.
inline SweepResult factor_sweep(const DataTable& table, const std::string& metric, const RbigConfig& cfg,
                                const SweepOptions& opt = {}) {
  SweepResult res;
  res.metric = metric;
  const std::string sens = sensitivity_column(metric);
  std::vector<std::string> cols = opt.descriptors;
  if (cols.empty())
    for (const auto& f : DescriptorRecord::kFields)
      if (table.has(f)) cols.emplace_back(f);
  auto data = detail::usable_rows(table, sens, cols, res.dropped);
  if (cols.size() < 2) throw ValidationError("factor sweep needs at least 2 descriptor columns with values");
  if (opt.max_factors < 1 || static_cast<std::size_t>(opt.max_factors) > cols.size())
    throw ValidationError("factor sweep: max_factors " + std::to_string(opt.max_factors) + " exceeds the " +
                          std::to_string(cols.size()) + " available descriptors");
  res.candidates = cols;
  res.n_samples = data.rows();
  const Eigen::MatrixXd s = table_matrix(data, {sens});

  std::vector<std::string> incumbent;
  std::vector<std::string> remaining = cols;
  for (int k = 1; k <= opt.max_factors; ++k) {
    std::vector<SweepCandidate> step(remaining.size());
    parallel_for(remaining.size(), opt.threads, [&](std::size_t i) {
      auto set = incumbent;
      set.push_back(remaining[i]);
      const auto mi = mutual_information(table_matrix(data, set), s, cfg);
      step[i] = {k, set, mi.mi_nats, mi.mi_raw, mi.icc, false};
    });
    std::size_t win = 0;
    for (std::size_t i = 1; i < step.size(); ++i)
      if (step[i].icc > step[win].icc) win = i;
    step[win].selected = true;
    res.best.push_back(step[win]);
    incumbent = step[win].factors;
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(win));
    res.evaluated.insert(res.evaluated.end(), step.begin(), step.end());
  }
  return res;
}

struct IccPair {
  std::string factor_i, factor_j;
  double icc = 0.0;
  double mi_nats = 0.0;
};

/// ICC between sensitivity and every pair of descriptors {f_i, f_j}, i <= j.
/// The diagonal holds the single-descriptor ICC.
inline std::vector<IccPair> pairwise_icc(const DataTable& table, const std::string& metric, const RbigConfig& cfg,
                                            std::vector<std::string> cols = {}, std::size_t threads = 0) {
  const std::string sens = sensitivity_column(metric);
  if (cols.empty())
    for (const auto& f : DescriptorRecord::kFields)
      if (table.has(f)) cols.emplace_back(f);
  std::vector<std::string> dropped;
  auto data = detail::usable_rows(table, sens, cols, dropped);
  const Eigen::MatrixXd s = table_matrix(data, {sens});
  std::vector<IccPair> out;
  for (std::size_t i = 0; i < cols.size(); ++i)
    for (std::size_t j = i; j < cols.size(); ++j) out.push_back({cols[i], cols[j], 0.0, 0.0});
  parallel_for(out.size(), threads, [&](std::size_t k) {
    std::vector<std::string> set{out[k].factor_i};
    if (out[k].factor_j != out[k].factor_i) set.push_back(out[k].factor_j);
    const auto mi = mutual_information(table_matrix(data, set), s, cfg);
    out[k].icc = mi.icc;
    out[k].mi_nats = mi.mi_nats;
  });
  return out;
}

}  // namespace percsens

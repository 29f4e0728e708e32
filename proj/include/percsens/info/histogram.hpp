#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"
#include "percsens/core/io.hpp"
#include "percsens/info/stats.hpp"

namespace percsens {

// matrix(s_bin, x_bin): column j is the distribution of s given x in bin j.
struct ConditionalHistogram {
  int bins = 0;
  std::size_t n_samples = 0;
  std::vector<double> x_edges;  // bins + 1 quantile edges
  std::vector<double> s_edges;  // bins + 1 equal-width edges over [P1, P99]
  Eigen::MatrixXd matrix;
  std::vector<std::size_t> column_counts;
  std::vector<bool> empty_column;
  Correlations corr;

  bool any_empty() const { return std::find(empty_column.begin(), empty_column.end(), true) != empty_column.end(); }
};

/// Index of the bin in [edges[0], edges[m]] holding v; interior edges are
/// inclusive on the right. Values outside the outer edges go to the end bins.
inline int bin_of(const std::vector<double>& edges, double v) {
  const int m = static_cast<int>(edges.size()) - 1;
  const auto it = std::lower_bound(edges.begin() + 1, edges.end() - 1, v);
  return std::clamp(static_cast<int>(it - (edges.begin() + 1)), 0, m - 1);
}

inline ConditionalHistogram conditional_histogram(std::span<const double> x, std::span<const double> s, int m_bins) {
  if (m_bins < 2) throw ValidationError("conditional histogram: need at least 2 bins, got " + std::to_string(m_bins));
  if (x.size() != s.size()) throw ValidationError("conditional histogram: length mismatch");
  if (x.size() < 2) throw ValidationError("conditional histogram: need at least 2 samples");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(s[i])) throw ValidationError("conditional histogram: non-finite value at row " + std::to_string(i));

  ConditionalHistogram h;
  h.bins = m_bins;
  h.n_samples = x.size();
  const std::vector<double> xv(x.begin(), x.end()), sv(s.begin(), s.end());
  const double lo = percentile(sv, 1.0), hi = percentile(sv, 99.0);
  if (!(hi > lo)) throw NumericalError("conditional histogram: sensitivity is degenerate (1st and 99th percentiles equal)");

  const auto m = static_cast<std::size_t>(m_bins);
  std::vector<double> sorted = xv;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k <= m; ++k) {
    const double pos = static_cast<double>(k) / static_cast<double>(m) * static_cast<double>(sorted.size() - 1);
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const auto i1 = std::min(i0 + 1, sorted.size() - 1);
    h.x_edges.push_back(sorted[i0] + (pos - static_cast<double>(i0)) * (sorted[i1] - sorted[i0]));
    h.s_edges.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(m));
  }

  h.matrix = Eigen::MatrixXd::Zero(m_bins, m_bins);
  h.column_counts.assign(m, 0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const int bx = bin_of(h.x_edges, xv[i]);
    const int bs = bin_of(h.s_edges, sv[i]);
    h.matrix(bs, bx) += 1.0;
    ++h.column_counts[static_cast<std::size_t>(bx)];
  }
  h.empty_column.assign(m, false);
  for (std::size_t j = 0; j < m; ++j) {
    if (h.column_counts[j] == 0)
      h.empty_column[j] = true;
    else
      h.matrix.col(static_cast<Eigen::Index>(j)) /= static_cast<double>(h.column_counts[j]);
  }
  h.corr = correlations(x, s);
  return h;
}

/// Long-form rows: x_bin, s_bin, edges, normalized frequency, column flags.
inline void write_conditional_histogram_csv(const fs::path& path, const ConditionalHistogram& h,
                                            const std::string& descriptor, const std::string& metric) {
  CsvWriter w(path);
  w.header({"descriptor", "metric", "x_bin", "s_bin", "x_lo", "x_hi", "s_lo", "s_hi", "frequency", "column_count",
            "empty_column", "pearson", "spearman"});
  for (int j = 0; j < h.bins; ++j)
    for (int i = 0; i < h.bins; ++i) {
      const auto ju = static_cast<std::size_t>(j), iu = static_cast<std::size_t>(i);
      w.row_strings({descriptor, metric, std::to_string(j), std::to_string(i), format_number(h.x_edges[ju]),
                     format_number(h.x_edges[ju + 1]), format_number(h.s_edges[iu]), format_number(h.s_edges[iu + 1]),
                     format_number(h.matrix(i, j)), std::to_string(h.column_counts[ju]),
                     h.empty_column[ju] ? "1" : "0", format_number(h.corr.pearson), format_number(h.corr.spearman)});
    }
}

}  // namespace percsens

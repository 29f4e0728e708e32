#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "percsens/core/error.hpp"
#include "percsens/core/io.hpp"

namespace percsens {

enum class Figure { CondHist, IccBars, IccPairs, Importances };

inline Figure parse_figure(const std::string& s) {
  if (s == "cond-hist") return Figure::CondHist;
  if (s == "icc-bars") return Figure::IccBars;
  if (s == "icc-pairs") return Figure::IccPairs;
  if (s == "importances") return Figure::Importances;
  throw ValidationError("unknown figure '" + s + "' (expected cond-hist, icc-bars, icc-pairs or importances)");
}

struct PlotOptions {
  std::string metric;      // required
  std::string descriptor = "logp_xt";  // cond-hist
  std::string fit = "rf_poly2";        // importances
  int top_k = 6;                       // importances
};

namespace detail {

inline CsvDocument bundle_table(const fs::path& bundle, const fs::path& rel) {
  const auto p = bundle / rel;
  if (!fs::is_regular_file(p)) throw ValidationError("bundle is missing table '" + rel.generic_string() + "'");
  return read_csv(p);
}

inline std::size_t col(const CsvDocument& d, const std::string& name) {
  for (std::size_t i = 0; i < d.header.size(); ++i)
    if (d.header[i] == name) return i;
  throw ValidationError("table has no column '" + name + "'");
}

}  // namespace detail

/// Reshapes bundle tables into long-form CSVs laid out along each figure's
/// axes. Nothing is rendered.
inline void emit_plot_data(const fs::path& bundle, Figure figure, const PlotOptions& opt, const fs::path& out) {
  if (opt.metric.empty()) throw ValidationError("emit-plots needs a metric");
  switch (figure) {
    case Figure::CondHist: {
      const auto d = detail::bundle_table(bundle, fs::path("hist") / (opt.metric + "__" + opt.descriptor + ".csv"));
      const auto xb = detail::col(d, "x_bin"), sb = detail::col(d, "s_bin"), f = detail::col(d, "frequency");
      CsvWriter w(out);
      w.header({"x_bin", "s_bin", "mass"});
      for (const auto& r : d.rows) w.row_strings({r[xb], r[sb], r[f]});
      break;
    }
    case Figure::IccBars: {
      const auto d = detail::bundle_table(bundle, fs::path("mi") / (opt.metric + "_table3.csv"));
      const auto sz = detail::col(d, "size"), fac = detail::col(d, "factors"), add = detail::col(d, "added"), icc = detail::col(d, "icc");
      CsvWriter w(out);
      w.header({"size", "added", "factors", "icc"});
      for (const auto& r : d.rows) w.row_strings({r[sz], r[add], r[fac], r[icc]});
      break;
    }
    case Figure::IccPairs: {
      const auto d = detail::bundle_table(bundle, fs::path("mi") / (opt.metric + "_pairs.csv"));
      const auto fi = detail::col(d, "factor_i"), fj = detail::col(d, "factor_j"), icc = detail::col(d, "icc");
      CsvWriter w(out);
      w.header({"factor_i", "factor_j", "icc"});
      for (const auto& r : d.rows) w.row_strings({r[fi], r[fj], r[icc]});
      break;
    }
    case Figure::Importances: {
      if (opt.top_k < 1) throw ValidationError("top_k must be >= 1");
      const auto d = detail::bundle_table(bundle, fs::path("regression") / (opt.metric + "_" + opt.fit + "_importances.csv"));
      const auto feat = detail::col(d, "feature"), imp = detail::col(d, "importance");
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t i = 0; i < d.rows.size(); ++i) order.emplace_back(parse_number(d.rows[i][imp], "importance"), i);
      std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      CsvWriter w(out);
      w.header({"rank", "feature", "importance"});
      for (std::size_t k = 0; k < order.size() && k < static_cast<std::size_t>(opt.top_k); ++k)
        w.row_strings({std::to_string(k + 1), d.rows[order[k].second][feat], d.rows[order[k].second][imp]});
      break;
    }
  }
}

}  // namespace percsens

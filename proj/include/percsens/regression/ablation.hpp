#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"
#include "percsens/core/io.hpp"
#include "percsens/core/parallel.hpp"
#include "percsens/core/records.hpp"
#include "percsens/info/stats.hpp"
#include "percsens/regression/features.hpp"
#include "percsens/regression/lasso.hpp"
#include "percsens/regression/ols.hpp"
#include "percsens/regression/split.hpp"

namespace percsens {

/// The nine candidate terms in canonical order, p = logp_xt, s = sigma_x.
inline const std::array<std::string, 9>& ablation_universe() {
  static const std::array<std::string, 9> u{"b", "p", "p^2", "s", "s^2", "1/s", "p/s", "s/p", "p*s"};
  return u;
}

inline FeatureTerm ablation_term(const std::string& t) {
  auto term = parse_feature_term(t, "ablation term");
  term.label = t;
  return term;
}

struct AblationRow {
  std::string mode;      // "sequential" or "lasso"
  int step = 0;
  std::array<bool, 9> included{};
  int n_terms = 0;       // lasso rows: active penalized terms (bias implicit, not counted)
  std::vector<double> pearson;  // per metric, held-out
  double mean_pearson = 0.0;
  bool selected = false;
  std::string removed;   // sequential candidates: the term dropped
  double lambda = std::nan("");
};

struct AblationReport {
  std::vector<std::string> metrics;
  std::size_t n_train = 0, n_test = 0;
  std::vector<AblationRow> rows;        // path models then lasso rows, term count descending
  std::vector<AblationRow> candidates;  // every sequential candidate evaluated, with the chosen one flagged
  std::vector<int> lasso_sizes_missing; // active-set sizes the lambda grid never produced
  std::vector<std::string> warnings;
};

struct AblationOptions {
  std::vector<std::string> metrics;  // empty: every sens_ column
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
  double tie_tolerance = 1e-4;
  int lasso_grid = 300;              // lambda values from lambda_max down to lambda_max * lasso_min_ratio
  double lasso_min_ratio = 1e-6;
  bool lasso = true;
  std::size_t threads = 0;
};

namespace detail {

struct AblationData {
  Eigen::MatrixXd x_train, x_test;    // all nine terms, canonical order
  std::vector<Eigen::VectorXd> y_train, y_test;
};

// Held-out Pearson; a constant prediction carries no ranking signal and
// scores 0.
inline double heldout_pearson(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  try {
    return pearson(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                   std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())));
  } catch (const NumericalError&) {
    return 0.0;
  }
}

inline Eigen::MatrixXd pick_columns(const Eigen::MatrixXd& x, const std::array<bool, 9>& inc) {
  std::vector<Eigen::Index> cols;
  for (std::size_t j = 0; j < 9; ++j)
    if (inc[j]) cols.push_back(static_cast<Eigen::Index>(j));
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = x.col(cols[k]);
  return out;
}

inline void score_ols(const AblationData& d, AblationRow& row, std::vector<std::string>* warnings) {
  row.pearson.clear();
  const auto xtr = pick_columns(d.x_train, row.included), xte = pick_columns(d.x_test, row.included);
  for (std::size_t m = 0; m < d.y_train.size(); ++m) {
    const auto fit = fit_ols(xtr, d.y_train[m], {true});
    if (warnings)
      for (const auto& w : fit.warnings) warnings->push_back(w);
    row.pearson.push_back(heldout_pearson(fit.predict(xte), d.y_test[m]));
  }
  row.mean_pearson = mean(row.pearson);
}

}  // namespace detail

// Sequential mode starts from all nine terms and repeatedly drops the term
// whose removal keeps the mean held-out Pearson highest; removals within
// tie_tolerance of the best drop the term later in canonical order. Lasso
// mode fits the eight penalized terms on the metric-averaged z-scored
// response over a lambda grid, takes the largest lambda reaching each
// active-set size, and refits OLS per metric on that active set.
inline AblationReport ablation_study(const DataTable& table, const AblationOptions& opt = {}) {
  AblationReport rep;
  rep.metrics = opt.metrics;
  if (rep.metrics.empty())
    for (const auto& c : table.columns_with_prefix("sens_")) rep.metrics.push_back(c.substr(5));
  if (rep.metrics.empty()) throw ValidationError("ablation: no sensitivity columns");
  std::vector<std::string> required{"logp_xt", "sigma_x"};
  for (const auto& m : rep.metrics) required.push_back(sensitivity_column(m));
  for (const auto& c : required)
    if (!table.has(c)) throw ValidationError("ablation: missing column '" + c + "'");
  const auto data = table.complete_rows(required);

  FeatureSpec spec;
  for (const auto& t : ablation_universe()) spec.terms.push_back(ablation_term(t));
  const auto design = expand_features(data, spec);
  const auto split = train_test_split(data.rows(), opt.test_fraction, derive_seed(opt.seed, "ablation-split"));
  rep.n_train = split.train.size();
  rep.n_test = split.test.size();
  detail::AblationData d;
  d.x_train = select_rows(design.x, split.train);
  d.x_test = select_rows(design.x, split.test);
  for (const auto& m : rep.metrics) {
    const auto& col = data.column(sensitivity_column(m));
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(col.data(), static_cast<Eigen::Index>(col.size()));
    d.y_train.push_back(select_rows(y, split.train));
    d.y_test.push_back(select_rows(y, split.test));
  }

  // Sequential path.
  AblationRow cur;
  cur.mode = "sequential";
  cur.included.fill(true);
  cur.n_terms = 9;
  cur.selected = true;
  detail::score_ols(d, cur, &rep.warnings);
  std::vector<AblationRow> path{cur};
  for (int step = 1; cur.n_terms > 1; ++step) {
    std::vector<std::size_t> drop;
    for (std::size_t j = 0; j < 9; ++j)
      if (cur.included[j]) drop.push_back(j);
    std::vector<AblationRow> cand(drop.size());
    parallel_for(drop.size(), opt.threads, [&](std::size_t k) {
      auto& c = cand[k];
      c.mode = "sequential";
      c.step = step;
      c.included = cur.included;
      c.included[drop[k]] = false;
      c.n_terms = cur.n_terms - 1;
      c.removed = ablation_universe()[drop[k]];
      detail::score_ols(d, c, nullptr);
    });
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : cand) best = std::max(best, c.mean_pearson);
    std::size_t pick = 0;
    for (std::size_t k = 0; k < cand.size(); ++k)
      if (cand[k].mean_pearson >= best - opt.tie_tolerance) pick = k;  // later canonical term wins ties
    cand[pick].selected = true;
    rep.candidates.insert(rep.candidates.end(), cand.begin(), cand.end());
    cur = cand[pick];
    path.push_back(cur);
  }

  // Lasso path.
  std::vector<AblationRow> lasso_rows;
  const bool underdetermined = d.x_train.rows() <= 8;
  if (opt.lasso && underdetermined)
    rep.warnings.push_back("lasso path skipped: " + std::to_string(d.x_train.rows()) + " training rows for 8 penalized terms");
  if (opt.lasso && !underdetermined) {
    Eigen::VectorXd yavg = Eigen::VectorXd::Zero(d.x_train.rows());
    for (const auto& y : d.y_train) {
      const double mu = y.mean();
      const double sd = std::sqrt((y.array() - mu).square().mean());
      if (sd > 0.0) yavg += ((y.array() - mu) / sd).matrix();
    }
    yavg /= static_cast<double>(d.y_train.size());
    const Eigen::MatrixXd xpen = d.x_train.rightCols(8);
    const double lmax = lasso_lambda_max(xpen, yavg);
    std::vector<double> lambdas(static_cast<std::size_t>(opt.lasso_grid));
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      lambdas[i] = lmax * std::pow(opt.lasso_min_ratio, static_cast<double>(i) / static_cast<double>(lambdas.size() - 1));
    // Warm-started along the decreasing path.
    std::vector<std::vector<Eigen::Index>> active(lambdas.size());
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(8);
    std::size_t stalled = 0;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      try {
        const auto fit = fit_lasso(xpen, yavg, lambdas[i], {}, &warm);
        active[i] = fit.active;
        warm = fit.coef_std;
        if (!fit.warnings.empty()) ++stalled;
      } catch (const NumericalError& e) {
        rep.warnings.push_back(std::string("lasso path: grid point dropped: ") + e.what());
      }
    }
    if (stalled > 0)
      rep.warnings.push_back("lasso path: " + std::to_string(stalled) + " of " + std::to_string(lambdas.size()) +
                             " grid points stopped before full convergence (relative duality gap within tolerance)");
    std::map<int, std::size_t> first_hit;  // size -> largest lambda index reaching it
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      const int k = static_cast<int>(active[i].size());
      if (k > 0 && !first_hit.count(k)) first_hit[k] = i;
    }
    for (int k = 8; k >= 1; --k) {
      auto it = first_hit.find(k);
      if (it == first_hit.end()) {
        rep.lasso_sizes_missing.push_back(k);
        continue;
      }
      AblationRow r;
      r.mode = "lasso";
      r.n_terms = k;
      r.lambda = lambdas[it->second];
      r.included[0] = true;  // refits keep an intercept
      for (auto j : active[it->second]) r.included[static_cast<std::size_t>(j) + 1] = true;
      r.selected = true;
      detail::score_ols(d, r, &rep.warnings);
      r.included[0] = false;
      lasso_rows.push_back(r);
    }
  }

  rep.rows = path;
  rep.rows.insert(rep.rows.end(), lasso_rows.begin(), lasso_rows.end());
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const AblationRow& a, const AblationRow& b) { return a.n_terms > b.n_terms; });
  return rep;
}

inline void write_ablation_csv(const fs::path& path, const AblationReport& rep, const std::vector<AblationRow>& rows) {
  CsvWriter w(path);
  std::vector<std::string> h{"mode", "step"};
  for (const auto& t : ablation_universe()) h.push_back(t);
  h.insert(h.end(), {"n_terms", "removed", "lambda"});
  for (const auto& m : rep.metrics) h.push_back("pearson_" + m);
  h.insert(h.end(), {"mean_pearson", "selected"});
  w.header(h);
  for (const auto& r : rows) {
    std::vector<std::string> f{r.mode + (r.mode == "lasso" ? "*" : ""), std::to_string(r.step)};
    for (bool b : r.included) f.push_back(b ? "1" : "0");
    f.insert(f.end(), {std::to_string(r.n_terms), r.removed, format_number(r.lambda)});
    for (double p : r.pearson) f.push_back(format_number(p));
    f.insert(f.end(), {format_number(r.mean_pearson), r.selected ? "1" : "0"});
    w.row_strings(f);
  }
}

}  // namespace percsens

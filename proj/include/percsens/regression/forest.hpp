#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "percsens/core/error.hpp"
#include "percsens/core/parallel.hpp"
#include "percsens/core/rng.hpp"
#include "percsens/info/stats.hpp"
#include "percsens/regression/split.hpp"

namespace percsens {

inline constexpr Eigen::Index kForestMinRows = 10;

struct ForestParams {
  int n_trees = 200;
  int max_depth = 0;            // 0: unlimited
  int min_samples_leaf = 5;
  bool bootstrap = true;
  double bootstrap_fraction = 1.0;
  int max_features = 0;         // 0: max(1, d/3)
  double test_fraction = 0.3;
  std::size_t threads = 0;

  void validate() const {
    if (n_trees < 1) throw ValidationError("forest: n_trees must be >= 1");
    if (max_depth < 0) throw ValidationError("forest: max_depth must be >= 0");
    if (min_samples_leaf < 1) throw ValidationError("forest: min_samples_leaf must be >= 1");
    if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0)) throw ValidationError("forest: bootstrap_fraction must be in (0,1]");
    if (max_features < 0) throw ValidationError("forest: max_features must be >= 0");
  }
  nlohmann::ordered_json to_json() const {
    return {{"n_trees", n_trees}, {"max_depth", max_depth}, {"min_samples_leaf", min_samples_leaf}, {"bootstrap", bootstrap},
            {"bootstrap_fraction", bootstrap_fraction}, {"max_features", max_features}, {"test_fraction", test_fraction}};
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = row(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  /// Children in range, leaves carry no split, every node reachable once.
  bool valid() const {
    if (nodes.empty()) return false;
    std::vector<int> seen(nodes.size(), 0);
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      if (i < 0 || static_cast<std::size_t>(i) >= nodes.size() || seen[static_cast<std::size_t>(i)]++) return false;
      const auto& n = nodes[static_cast<std::size_t>(i)];
      if (n.feature >= 0) {
        stack.push_back(n.left);
        stack.push_back(n.right);
      } else if (n.left != -1 || n.right != -1) {
        return false;
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
  }
};

struct RandomForestModel {
  ForestParams params;
  std::uint64_t seed = 0;
  int n_features = 0;
  std::vector<RegressionTree> trees;
  std::vector<double> importances;  // sum to 1 unless all zero
  bool importances_degenerate = false;

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(row);
    return s / static_cast<double>(trees.size());
  }
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    if (x.cols() != n_features) throw ValidationError("forest: expected " + std::to_string(n_features) + " features");
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x.row(i));
    return out;
  }
};

namespace detail {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = -1.0;
  std::size_t n_left = 0;
};

// Best variance-reduction split of rows idx on feature f; idx is reordered.
inline void best_split_on(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::size_t>& idx, int f,
                          int min_leaf, SplitChoice& best) {
  const auto fi = static_cast<Eigen::Index>(f);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double va = x(static_cast<Eigen::Index>(a), fi), vb = x(static_cast<Eigen::Index>(b), fi);
    return va < vb || (va == vb && a < b);
  });
  const std::size_t n = idx.size();
  double total = 0.0;
  for (auto i : idx) total += y(static_cast<Eigen::Index>(i));
  double left = 0.0;
  const auto leaf = static_cast<std::size_t>(min_leaf);
  for (std::size_t k = 1; k < n; ++k) {
    left += y(static_cast<Eigen::Index>(idx[k - 1]));
    if (k < leaf || n - k < leaf) continue;
    const double lo = x(static_cast<Eigen::Index>(idx[k - 1]), fi), hi = x(static_cast<Eigen::Index>(idx[k]), fi);
    if (!(lo < hi)) continue;
    const double right = total - left;
    // SSE reduction = nl*ml^2 + nr*mr^2 - n*m^2.
    const double nl = static_cast<double>(k), nr = static_cast<double>(n - k);
    const double gain = left * left / nl + right * right / nr - total * total / static_cast<double>(n);
    if (gain > best.gain) {
      double thr = lo + 0.5 * (hi - lo);
      if (!(thr < hi)) thr = lo;
      best = {f, thr, gain, k};
    }
  }
}

inline RegressionTree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::size_t> rows,
                                const ForestParams& p, int max_features, Rng& rng, std::vector<double>& importance) {
  struct Work {
    int node;
    std::vector<std::size_t> rows;
    int depth;
  };
  const int d = static_cast<int>(x.cols());
  RegressionTree tree;
  tree.nodes.emplace_back();
  std::vector<Work> stack;
  stack.push_back({0, std::move(rows), 0});
  std::vector<int> features(static_cast<std::size_t>(d));
  while (!stack.empty()) {
    Work w = std::move(stack.back());
    stack.pop_back();
    double sum = 0.0, sq = 0.0;
    for (auto i : w.rows) {
      const double v = y(static_cast<Eigen::Index>(i));
      sum += v;
      sq += v * v;
    }
    const double n = static_cast<double>(w.rows.size());
    const double mean = sum / n;
    tree.nodes[static_cast<std::size_t>(w.node)].value = mean;
    const double sse = sq - sum * mean;
    const bool can_split = w.rows.size() >= 2 * static_cast<std::size_t>(p.min_samples_leaf) &&
                           (p.max_depth == 0 || w.depth < p.max_depth) && sse > 1e-12 * std::max(1.0, sq);
    if (!can_split) continue;

    std::iota(features.begin(), features.end(), 0);
    for (int k = 0; k < d - 1; ++k) std::swap(features[static_cast<std::size_t>(k)], features[static_cast<std::size_t>(k) + rng.below(static_cast<std::uint64_t>(d - k))]);
    SplitChoice best;
    for (int k = 0; k < d; ++k) {
      // Beyond the sampled features only while no valid split has been found.
      if (k >= max_features && best.feature >= 0) break;
      best_split_on(x, y, w.rows, features[static_cast<std::size_t>(k)], p.min_samples_leaf, best);
    }
    if (best.feature < 0) continue;

    importance[static_cast<std::size_t>(best.feature)] += std::max(0.0, best.gain);
    std::vector<std::size_t> lrows, rrows;
    for (auto i : w.rows)
      (x(static_cast<Eigen::Index>(i), best.feature) <= best.threshold ? lrows : rrows).push_back(i);
    const int l = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& node = tree.nodes[static_cast<std::size_t>(w.node)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = l + 1;
    stack.push_back({l + 1, std::move(rrows), w.depth + 1});
    stack.push_back({l, std::move(lrows), w.depth + 1});
  }
  return tree;
}

}  // namespace detail

// Bagged CART regression trees. Tree t uses the seed derive_seed(seed, t), so
// results do not depend on the thread count. Importances are the total SSE
// decrease per feature, normalized to sum 1.
inline RandomForestModel fit_random_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestParams& params,
                                           std::uint64_t seed) {
  params.validate();
  if (x.rows() != y.size()) throw ValidationError("forest: row mismatch");
  if (x.rows() < kForestMinRows) throw ValidationError("forest: need at least " + std::to_string(kForestMinRows) + " rows, got " + std::to_string(x.rows()));
  if (x.cols() < 1) throw ValidationError("forest: no features");
  if (!x.allFinite() || !y.allFinite()) throw ValidationError("forest: non-finite input");
  RandomForestModel m;
  m.params = params;
  m.seed = seed;
  m.n_features = static_cast<int>(x.cols());
  const int max_features = params.max_features > 0 ? std::min(params.max_features, m.n_features) : std::max(1, m.n_features / 3);
  // Centering keeps the SSE sums well conditioned; leaf values shift back.
  const double y_mean = y.mean();
  const Eigen::VectorXd yc = y.array() - y_mean;
  const auto n = static_cast<std::size_t>(x.rows());
  const auto draws = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(params.bootstrap_fraction * static_cast<double>(n))));

  m.trees.resize(static_cast<std::size_t>(params.n_trees));
  std::vector<std::vector<double>> imp(m.trees.size(), std::vector<double>(static_cast<std::size_t>(m.n_features), 0.0));
  parallel_for(m.trees.size(), params.threads, [&](std::size_t t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> rows;
    if (params.bootstrap) {
      rows.resize(draws);
      for (auto& r : rows) r = rng.below(n);
    } else {
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), 0);
    }
    m.trees[t] = detail::grow_tree(x, yc, std::move(rows), params, max_features, rng, imp[t]);
    for (auto& node : m.trees[t].nodes) node.value += y_mean;
  });
  m.importances.assign(static_cast<std::size_t>(m.n_features), 0.0);
  for (const auto& ti : imp)
    for (std::size_t j = 0; j < ti.size(); ++j) m.importances[j] += ti[j];
  const double total = std::accumulate(m.importances.begin(), m.importances.end(), 0.0);
  if (total > 0.0)
    for (auto& v : m.importances) v /= total;
  else
    m.importances_degenerate = true;
  return m;
}

struct ForestReport {
  RandomForestModel model;
  TrainTestSplit split;
  Correlations test;  // NaN when the test predictions or targets are constant
};

/// Fits on a seeded split and scores the held-out rows.
inline ForestReport fit_random_forest_split(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestParams& params,
                                            std::uint64_t seed) {
  ForestReport r;
  r.split = train_test_split(static_cast<std::size_t>(x.rows()), params.test_fraction, derive_seed(seed, "split"));
  r.model = fit_random_forest(select_rows(x, r.split.train), select_rows(y, r.split.train), params, seed);
  const Eigen::VectorXd pred = r.model.predict(select_rows(x, r.split.test));
  const Eigen::VectorXd truth = select_rows(y, r.split.test);
  try {
    r.test = correlations(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                          std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())));
  } catch (const NumericalError&) {
    r.test = {std::nan(""), std::nan("")};
  }
  return r;
}

}  // namespace percsens

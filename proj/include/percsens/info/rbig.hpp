#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"
#include "percsens/core/rng.hpp"
#include "percsens/info/entropy.hpp"
#include "percsens/info/stats.hpp"

namespace percsens {

struct RbigConfig {
  int n_layers = 100;
  int marginal_bins = 100;
  std::uint64_t rotation_seed = 0;
  double tc_tolerance = 1e-3;  // nats per layer
  // Consecutive sub-tolerance layers that end the iteration. Those trailing
  // increments are treated as estimator noise and not added to the total.
  int patience = 5;
  std::size_t min_samples = 100;
  // Layer increments are corrected by the estimator's null behaviour (see
  // rbig_null_increment): the null mean is subtracted, and a layer counts only
  // if it also exceeds noise_z null standard deviations.
  bool null_correction = true;
  double noise_z = 2.0;

  void validate() const {
    if (n_layers < 1) throw ValidationError("rbig: n_layers must be >= 1");
    if (marginal_bins < 16) throw ValidationError("rbig: marginal_bins must be >= 16");
    if (!(tc_tolerance >= 0.0)) throw ValidationError("rbig: tc_tolerance must be >= 0");
    if (patience < 1) throw ValidationError("rbig: patience must be >= 1");
  }
};

class DegenerateColumn : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct MarginalGaussianization {
  std::vector<double> values;
  double negentropy = 0.0;  // of the input column, nats
};

// Empirical CDF (mid-ranks, u = r / (n + 1), so u stays inside
// [1/(n+1), n/(n+1)]) followed by the standard normal quantile.
inline MarginalGaussianization marginal_gaussianize(std::span<const double> col, int bins = 100,
                                                    std::size_t min_samples = 100) {
  const std::size_t n = col.size();
  if (n < min_samples)
    throw ValidationError("marginal gaussianization needs at least " + std::to_string(min_samples) + " samples, got " +
                          std::to_string(n));
  for (double v : col)
    if (!std::isfinite(v)) throw ValidationError("marginal gaussianization: non-finite value");
  if (!(variance(col) > 0.0)) throw DegenerateColumn("degenerate column: zero variance");
  MarginalGaussianization out;
  out.negentropy = negentropy(col, bins);
  const auto ranks = mid_ranks(col);
  out.values.resize(n);
  const double denom = static_cast<double>(n) + 1.0;
  for (std::size_t i = 0; i < n; ++i) out.values[i] = normal_quantile(ranks[i] / denom);
  return out;
}

/// Haar-distributed orthonormal matrix: Q of a Gaussian matrix's QR
/// factorization with column signs fixed by diag(R).
inline Eigen::MatrixXd random_rotation(Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

struct NullIncrement {
  double mean = 0.0;
  double sd = 0.0;
};

/// Distribution of the summed negentropy estimate produced by one layer
/// applied to d independent, already Gaussianized columns of n samples: what
/// the estimator reports when the true increment is zero. Fixed seeds; cached
/// per (n, d, bins).
inline NullIncrement rbig_null_increment(std::size_t n, Eigen::Index d, int bins) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, Eigen::Index, int>, NullIncrement> cache;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_tuple(n, d, bins);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  constexpr int kReplicates = 32;
  std::vector<double> quantiles(n);
  for (std::size_t i = 0; i < n; ++i) quantiles[i] = normal_quantile((static_cast<double>(i) + 1.0) / (static_cast<double>(n) + 1.0));
  const auto rows = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd y(rows, d);
  std::vector<double> col(n);
  std::vector<double> sums(kReplicates, 0.0);
  for (int r = 0; r < kReplicates; ++r) {
    Rng rng(derive_seed(0x72626967ULL, static_cast<std::uint64_t>(r)));
    for (Eigen::Index j = 0; j < d; ++j) {
      col = quantiles;
      for (std::size_t i = n - 1; i > 0; --i) std::swap(col[i], col[rng.below(i + 1)]);
      y.col(j) = Eigen::Map<Eigen::VectorXd>(col.data(), rows);
    }
    const Eigen::MatrixXd rotated = y * random_rotation(d, rng.below(std::numeric_limits<std::uint64_t>::max()));
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) col[static_cast<std::size_t>(i)] = rotated(i, j);
      sums[static_cast<std::size_t>(r)] += negentropy(col, bins);
    }
  }
  NullIncrement out;
  out.mean = mean(sums);
  out.sd = std::sqrt(variance(sums) * kReplicates / (kReplicates - 1.0));
  return cache[key] = out;
}

struct RbigResult {
  double total_correlation = 0.0;           // nats
  std::vector<double> layer_increments;     // every layer run, including trailing ones not counted
  int layers_counted = 0;
};

// Total correlation by rotation-based iterative Gaussianization. The data
// are first marginally Gaussianized (this does not change total correlation);
// each layer then applies a random rotation and Gaussianizes every marginal
// again, and the summed marginal negentropy removed by that step is the
// layer's total-correlation increment.
inline RbigResult rbig_total_correlation(const Eigen::MatrixXd& samples, const RbigConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = samples.rows(), d = samples.cols();
  if (d < 1) throw ValidationError("rbig: need at least one dimension");
  if (static_cast<std::size_t>(n) < cfg.min_samples)
    throw ValidationError("rbig: need at least " + std::to_string(cfg.min_samples) + " samples, got " + std::to_string(n));
  RbigResult res;
  if (d == 1) return res;

  Eigen::MatrixXd y(n, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    std::vector<double> col(samples.col(j).data(), samples.col(j).data() + n);
    try {
      auto g = marginal_gaussianize(col, cfg.marginal_bins, cfg.min_samples);
      y.col(j) = Eigen::Map<Eigen::VectorXd>(g.values.data(), n);
    } catch (const DegenerateColumn&) {
      throw DegenerateColumn("rbig: degenerate column " + std::to_string(j) + " (zero variance)");
    }
  }

  NullIncrement null;
  if (cfg.null_correction) null = rbig_null_increment(static_cast<std::size_t>(n), d, cfg.marginal_bins);
  const double threshold = std::max(cfg.tc_tolerance, cfg.noise_z * null.sd);
  double pending = 0.0;
  int quiet = 0;
  std::vector<double> col(static_cast<std::size_t>(n));
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    const Eigen::MatrixXd rot = random_rotation(d, derive_seed(cfg.rotation_seed, static_cast<std::uint64_t>(layer)));
    y = (y * rot).eval();
    double increment = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = y(i, j);
      try {
        auto g = marginal_gaussianize(col, cfg.marginal_bins, cfg.min_samples);
        increment += g.negentropy;
        y.col(j) = Eigen::Map<Eigen::VectorXd>(g.values.data(), n);
      } catch (const DegenerateColumn&) {
        throw DegenerateColumn("rbig: degenerate column " + std::to_string(j) + " at layer " + std::to_string(layer + 1));
      }
    }
    increment -= null.mean;
    res.layer_increments.push_back(increment);
    if (increment < threshold) {
      pending += increment;
      if (++quiet >= cfg.patience) break;
    } else {
      res.total_correlation += pending + increment;
      res.layers_counted = layer + 1;
      pending = 0.0;
      quiet = 0;
    }
  }
  return res;
}

}  // namespace percsens

#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "percsens/core/error.hpp"
#include "percsens/info/stats.hpp"

namespace percsens {

/// Differential entropy of N(0, 1) in nats.
inline double standard_normal_entropy() { return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e); }

// Histogram estimate of differential entropy (nats) with the Miller-Madow
// bias correction. Bins are equal width over mean +/- 5 sd; the rare values
// beyond that span fall into the edge bins.
inline double histogram_entropy(std::span<const double> v, int bins) {
  if (bins < 2) throw ValidationError("histogram_entropy needs at least 2 bins");
  const std::size_t n = v.size();
  if (n < 2) throw ValidationError("histogram_entropy needs at least 2 samples");
  const double m = mean(v);
  const double sd = std::sqrt(variance(v));
  if (!(sd > 0.0)) throw NumericalError("histogram_entropy: zero-variance sample");
  const double lo = m - 5.0 * sd;
  const double width = 10.0 * sd / bins;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double x : v) {
    auto b = static_cast<long>(std::floor((x - lo) / width));
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  double h = 0.0;
  std::size_t occupied = 0;
  for (auto c : counts) {
    if (c == 0) continue;
    ++occupied;
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return h + std::log(width) + static_cast<double>(occupied - 1) / (2.0 * static_cast<double>(n));
}

/// Negentropy relative to the standard normal: H(N(0,1)) - H(v).
inline double negentropy(std::span<const double> v, int bins) { return standard_normal_entropy() - histogram_entropy(v, bins); }

}  // namespace percsens

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"
#include "percsens/core/records.hpp"
#include "percsens/core/rng.hpp"

namespace percsens {

struct DistortionConfig {
  double epsilon = 0.2;              // canonical-range L2 radius
  std::uint64_t seed = 0;
  double rmse_min = 0.0;             // [0,1]-range units, strict lower bound
  std::optional<double> rmse_max;    // strict upper bound when set

  void validate() const {
    if (!std::isfinite(epsilon) || epsilon <= 0.0) throw ValidationError("epsilon must be finite and > 0");
    if (!(rmse_min >= 0.0)) throw ValidationError("rmse_min must be >= 0");
    if (rmse_max && !(*rmse_max > rmse_min)) throw ValidationError("rmse_max must exceed rmse_min");
  }
};

/// Uniform sample on the sphere of radius `epsilon` in R^dim: `dim` standard
/// normals rescaled to the requested norm.
inline std::vector<double> sample_sphere_noise(std::size_t dim, double epsilon, std::uint64_t seed) {
  if (dim == 0) throw ValidationError("sphere dimension must be >= 1");
  if (!std::isfinite(epsilon) || epsilon <= 0.0) throw ValidationError("sphere radius must be finite and > 0");
  Rng rng(seed);
  std::vector<double> n(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& v : n) {
      v = rng.normal();
      norm2 += v * v;
    }
  } while (norm2 == 0.0);
  // Divide first: for dim = 1 this gives exactly +-epsilon.
  const double norm = std::sqrt(norm2);
  for (auto& v : n) v = v / norm * epsilon;
  return n;
}

/// Per-pair seed: mixes the run seed with the image id.
inline std::uint64_t pair_seed(std::uint64_t run_seed, std::string_view image_id) { return derive_seed(run_seed, image_id); }

/// x~ = clip(x + n, -1, 1) with n on the epsilon-sphere. RMSE is measured
/// after clipping, in [0,1] units.
inline ImagePair distort(const ImageTensor& x, const DistortionConfig& cfg, std::uint64_t seed, std::string pair_id = {}) {
  cfg.validate();
  if (x.range() != Range::Symmetric) throw ValidationError("distort expects an image in the canonical [-1,1] range");
  if (!x.within_range()) throw ValidationError("reference image has values outside [-1,1]");
  const auto noise = sample_sphere_noise(x.size(), cfg.epsilon, seed);
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(in[i] + noise[i], -1.0, 1.0);
  ImagePair p;
  p.pair_id = std::move(pair_id);
  p.reference = x;
  p.distorted = ImageTensor(x.shape(), Range::Symmetric, std::move(out));
  p.epsilon = cfg.epsilon;
  p.rmse = rmse_unit(p.reference, p.distorted);
  return p;
}

struct FilterSummary {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t below_min = 0;
  std::size_t above_max = 0;
};

/// Keeps pairs with rmse > rmse_min (and < rmse_max when set), in order.
inline std::vector<ImagePair> filter_pairs(std::vector<ImagePair> pairs, const DistortionConfig& cfg,
                                           FilterSummary* summary = nullptr) {
  FilterSummary s;
  s.input = pairs.size();
  std::vector<ImagePair> kept;
  for (auto& p : pairs) {
    if (!(p.rmse > cfg.rmse_min)) {
      ++s.below_min;
    } else if (cfg.rmse_max && !(p.rmse < *cfg.rmse_max)) {
      ++s.above_max;
    } else {
      kept.push_back(std::move(p));
    }
  }
  s.kept = kept.size();
  if (summary) *summary = s;
  return kept;
}

}  // namespace percsens

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"
#include "percsens/metrics/filters.hpp"

namespace percsens {

struct NlpdParams {
  int levels = 4;           // bandpass levels plus the lowpass residual
  double c_factor = 0.17;   // additive constant as a fraction of band RMS
  double c_floor = 1e-3;
};

/// Laplacian pyramid: `levels - 1` bandpass bands followed by the lowpass
/// residual. Decimation is blur (5-tap binomial) then 2x2 averaging.
inline std::vector<Plane> laplacian_pyramid(const Plane& img, int levels) {
  std::vector<Plane> bands;
  Plane cur = img;
  for (int k = 0; k + 1 < levels; ++k) {
    Plane down = downsample2(filter_separable(cur, binomial5_kernel()));
    Plane up = upsample2(down, cur.height, cur.width);
    Plane band(cur.height, cur.width);
    for (std::size_t i = 0; i < band.size(); ++i) band.v[i] = cur.v[i] - up.v[i];
    bands.push_back(std::move(band));
    cur = std::move(down);
  }
  bands.push_back(std::move(cur));
  return bands;
}

inline void nlpd_check_size(int height, int width, const NlpdParams& p) {
  if (p.levels < 1) throw ValidationError("NLPD: levels must be >= 1");
  // At least 2 px per side at the coarsest level.
  const int needed = p.levels == 1 ? 1 : (1 << p.levels);
  if (std::min(height, width) < needed)
    throw ValidationError("NLPD: image " + std::to_string(height) + "x" + std::to_string(width) + " too small for " +
                          std::to_string(p.levels) + " levels");
}

/// Divisive normalization of one band: b / (c + 3x3 box mean of |b|).
inline Plane normalize_band(const Plane& band, double c) {
  Plane mag(band.height, band.width);
  for (std::size_t i = 0; i < band.size(); ++i) mag.v[i] = std::abs(band.v[i]);
  static const std::vector<double> box{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const Plane local = filter_separable(mag, box);
  Plane out(band.height, band.width);
  for (std::size_t i = 0; i < band.size(); ++i) out.v[i] = band.v[i] / (c + local.v[i]);
  return out;
}

inline double mean_square(const Plane& p) {
  double s = 0.0;
  for (double v : p.v) s += v * v;
  return s / static_cast<double>(p.size());
}

/// Additive normalization constant for a band pair: c_factor times the RMS of
/// both images' band pooled together, floored. Pooling keeps the distance
/// symmetric.
inline double nlpd_band_constant(const Plane& bx, const Plane& by, const NlpdParams& p) {
  const double rms = std::sqrt(0.5 * (mean_square(bx) + mean_square(by)));
  return std::max(p.c_factor * rms, p.c_floor);
}

inline double nlpd_plane(const Plane& x, const Plane& y, const NlpdParams& p) {
  const auto px = laplacian_pyramid(x, p.levels), py = laplacian_pyramid(y, p.levels);
  double total = 0.0;
  for (std::size_t k = 0; k < px.size(); ++k) {
    const double c = nlpd_band_constant(px[k], py[k], p);
    const Plane nx = normalize_band(px[k], c), ny = normalize_band(py[k], c);
    double se = 0.0;
    for (std::size_t i = 0; i < nx.size(); ++i) {
      const double d = nx.v[i] - ny.v[i];
      se += d * d;
    }
    total += std::sqrt(se / static_cast<double>(nx.size()));
  }
  return total / static_cast<double>(px.size());
}

/// Normalized Laplacian pyramid distance in canonical units, per channel
/// then averaged.
inline double nlpd(const ImageTensor& a, const ImageTensor& b, const NlpdParams& p = {}) {
  if (a.shape() != b.shape()) throw ValidationError("NLPD: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  if (a.range() != b.range()) throw ValidationError("NLPD: range mismatch");
  nlpd_check_size(a.height(), a.width(), p);
  const auto ca = convert_range(a, Range::Symmetric), cb = convert_range(b, Range::Symmetric);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    total += nlpd_plane(Plane(a.height(), a.width(), channel_plane(ca, c)), Plane(b.height(), b.width(), channel_plane(cb, c)), p);
  return total / a.channels();
}

}  // namespace percsens

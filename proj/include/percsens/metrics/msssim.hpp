#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"
#include "percsens/metrics/filters.hpp"

namespace percsens {

struct MsSsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  int scales = 0;  // 0: as many of the canonical five as the image allows
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
};

// Smallest side allowed at the coarsest scale: the window radius plus one,
// so that a single symmetric reflection covers the filter support.
inline int msssim_min_side(const MsSsimParams& p) { return p.window / 2 + 1; }

/// Number of scales used for an image of the given size.
inline int msssim_scale_count(int height, int width, const MsSsimParams& p) {
  const int side = std::min(height, width);
  const int cap = static_cast<int>(p.weights.size());
  if (p.scales > 0) {
    if (p.scales > cap) throw ValidationError("MS-SSIM: " + std::to_string(p.scales) + " scales requested, only " +
                                              std::to_string(cap) + " weights configured");
    const int needed = (1 << (p.scales - 1)) * msssim_min_side(p);
    if (side < needed)
      throw ValidationError("MS-SSIM: image " + std::to_string(height) + "x" + std::to_string(width) + " too small for " +
                            std::to_string(p.scales) + " scales (needs min side " + std::to_string(needed) + ")");
    return p.scales;
  }
  int n = 0;
  while (n < cap && side >= (1 << n) * msssim_min_side(p)) ++n;
  if (n == 0)
    throw ValidationError("MS-SSIM: image " + std::to_string(height) + "x" + std::to_string(width) +
                          " smaller than one window");
  return n;
}

/// The canonical weights truncated to `scales` entries and renormalized.
inline std::vector<double> msssim_weights(int scales, const MsSsimParams& p) {
  std::vector<double> w(p.weights.begin(), p.weights.begin() + scales);
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  return w;
}

struct SsimTerms {
  double luminance_structure = 0.0;  // mean of l * cs over the map
  double contrast_structure = 0.0;   // mean of cs over the map
};

inline SsimTerms ssim_terms(const Plane& x, const Plane& y, const std::vector<double>& kernel, double c1, double c2) {
  Plane xx(x.height, x.width), yy(x.height, x.width), xy(x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx.v[i] = x.v[i] * x.v[i];
    yy.v[i] = y.v[i] * y.v[i];
    xy.v[i] = x.v[i] * y.v[i];
  }
  const Plane mx = filter_separable(x, kernel), my = filter_separable(y, kernel);
  const Plane sxx = filter_separable(xx, kernel), syy = filter_separable(yy, kernel), sxy = filter_separable(xy, kernel);
  double lcs = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double vx = sxx.v[i] - ux * ux, vy = syy.v[i] - uy * uy, cxy = sxy.v[i] - ux * uy;
    const double l = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
    const double c = (2.0 * cxy + c2) / (vx + vy + c2);
    lcs += l * c;
    cs += c;
  }
  const double n = static_cast<double>(x.size());
  return {lcs / n, cs / n};
}

/// MS-SSIM similarity of two single-channel planes with values in [0,1].
inline double msssim_similarity(Plane x, Plane y, const MsSsimParams& p) {
  const int scales = msssim_scale_count(x.height, x.width, p);
  const auto w = msssim_weights(scales, p);
  const auto kernel = gaussian_kernel(p.window, p.sigma);
  const double c1 = (p.k1 * 1.0) * (p.k1 * 1.0), c2 = (p.k2 * 1.0) * (p.k2 * 1.0);
  double sim = 1.0;
  for (int s = 0; s < scales; ++s) {
    const auto t = ssim_terms(x, y, kernel, c1, c2);
    // Negative means (anti-correlated structure) are clamped before the
    // fractional power.
    const double term = (s == scales - 1) ? t.luminance_structure : t.contrast_structure;
    sim *= std::pow(std::max(term, 0.0), w[static_cast<std::size_t>(s)]);
    if (s + 1 < scales) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return sim;
}

/// 1 - MS-SSIM, computed per channel on [0,1]-converted images and averaged.
inline double ms_ssim(const ImageTensor& a, const ImageTensor& b, const MsSsimParams& p = {}) {
  if (a.shape() != b.shape()) throw ValidationError("MS-SSIM: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  if (a.range() != b.range()) throw ValidationError("MS-SSIM: range mismatch");
  msssim_scale_count(a.height(), a.width(), p);
  const auto ua = convert_range(a, Range::Unit), ub = convert_range(b, Range::Unit);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    Plane pa(a.height(), a.width(), channel_plane(ua, c));
    Plane pb(b.height(), b.width(), channel_plane(ub, c));
    total += 1.0 - msssim_similarity(std::move(pa), std::move(pb), p);
  }
  return total / a.channels();
}

}  // namespace percsens

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace percsens {

// Dense single-channel plane used by the metric pipelines.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0) : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}
  Plane(int h, int w, std::vector<double> data) : height(h), width(w), v(std::move(data)) {}

  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return v.size(); }
};

namespace detail {

// Half-sample symmetric extension: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace detail

/// Separable correlation with a symmetric odd-length kernel and symmetric
/// boundary extension. Output has the input's size.
inline Plane filter_separable(const Plane& in, const std::vector<double>& kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  Plane tmp(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += kernel[static_cast<std::size_t>(k + r)] * in.at(y, detail::reflect_index(x + k, in.width));
      tmp.at(y, x) = s;
    }
  Plane out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += kernel[static_cast<std::size_t>(k + r)] * tmp.at(detail::reflect_index(y + k, in.height), x);
      out.at(y, x) = s;
    }
  return out;
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline const std::vector<double>& binomial5_kernel() {
  static const std::vector<double> k{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  return k;
}

/// Halves each dimension by averaging 2x2 blocks. An odd trailing row or
/// column is paired with itself.
inline Plane downsample2(const Plane& in) {
  const int h = (in.height + 1) / 2, w = (in.width + 1) / 2;
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int y0 = 2 * y, y1 = std::min(2 * y + 1, in.height - 1);
      const int x0 = 2 * x, x1 = std::min(2 * x + 1, in.width - 1);
      out.at(y, x) = 0.25 * (in.at(y0, x0) + in.at(y0, x1) + in.at(y1, x0) + in.at(y1, x1));
    }
  return out;
}

/// Inverse of downsample2 geometry: bilinear interpolation on the half-pixel
/// grid (weights 3/4, 1/4), clamped at the borders, cropped to h x w.
inline Plane upsample2(const Plane& in, int h, int w) {
  auto expand_1d = [](auto get, int n_coarse, int i) {
    const int c = i / 2;
    const int nb = (i % 2 == 0) ? std::max(c - 1, 0) : std::min(c + 1, n_coarse - 1);
    return 0.75 * get(c) + 0.25 * get(nb);
  };
  Plane tmp(in.height, w);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < w; ++x)
      tmp.at(y, x) = expand_1d([&](int i) { return in.at(y, i); }, in.width, x);
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(y, x) = expand_1d([&](int i) { return tmp.at(i, x); }, in.height, y);
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace percsens

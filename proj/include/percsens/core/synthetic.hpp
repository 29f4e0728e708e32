#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "percsens/core/image.hpp"
#include "percsens/core/rng.hpp"

namespace percsens {

// Random smooth-plus-texture images in the canonical range. Each image draws
// its own mean level, contrast, dominant frequency and texture amplitude, so a
// batch spans a useful spread of means, standard deviations and likelihoods
// under a fitted Gaussian. Values are kept inside [-0.9, 0.9].
inline ImageTensor synthetic_image(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  const double level = rng.uniform(-0.4, 0.4);
  const double contrast = rng.uniform(0.02, 0.35);
  const double texture = rng.uniform(0.0, 0.15);
  const double fy = rng.uniform(0.5, 3.0), fx = rng.uniform(0.5, 3.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> tint(static_cast<std::size_t>(shape.channels));
  for (auto& t : tint) t = rng.uniform(-0.1, 0.1);

  std::vector<double> data(shape.size());
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const double u = static_cast<double>(y) / shape.height, v = static_cast<double>(x) / shape.width;
      const double smooth = std::sin(2.0 * std::numbers::pi * (fy * u + fx * v) + phase);
      const double tex = texture * rng.normal();
      for (int c = 0; c < shape.channels; ++c) {
        const double val = level + tint[static_cast<std::size_t>(c)] + contrast * smooth + tex;
        data[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c] = std::clamp(val, -0.9, 0.9);
      }
    }
  }
  return ImageTensor(shape, Range::Symmetric, std::move(data));
}

inline std::string synthetic_id(std::size_t i) {
  std::string s = std::to_string(i + 1);
  return "img_" + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

}  // namespace percsens

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "percsens/core/error.hpp"

namespace percsens {

/// Declared value interval of an image. The library's canonical range is
/// Symmetric ([-1,1]); RMSE figures are always reported in Unit ([0,1]) terms.
enum class Range { Unit, Symmetric };

inline std::string_view to_string(Range r) { return r == Range::Unit ? "[0,1]" : "[-1,1]"; }

inline Range parse_range(std::string_view tag) {
  if (tag == "[0,1]") return Range::Unit;
  if (tag == "[-1,1]") return Range::Symmetric;
  throw ValidationError("unknown range tag '" + std::string(tag) + "' (expected [0,1] or [-1,1])");
}

inline double range_low(Range r) { return r == Range::Unit ? 0.0 : -1.0; }
inline double range_high(Range) { return 1.0; }

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

// H x W x C image, row-major with channels last. Values are held in double
// precision; on disk they are 32-bit floats (see io.hpp).
class ImageTensor {
 public:
  ImageTensor() = default;

  ImageTensor(Shape shape, Range range, std::vector<double> data)
      : shape_(shape), range_(range), data_(std::move(data)) {
    if (shape_.height < 1 || shape_.width < 1 || shape_.channels < 1)
      throw ValidationError("image dimensions must be >= 1, got " + shape_.str());
    if (data_.size() != shape_.size())
      throw ValidationError("image data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_.str());
  }

  ImageTensor(Shape shape, Range range, double fill) : ImageTensor(shape, range, std::vector<double>(shape.size(), fill)) {}

  const Shape& shape() const { return shape_; }
  Range range() const { return range_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }
  double& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
  }

  bool within_range(double slack = 0.0) const {
    const double lo = range_low(range_) - slack, hi = range_high(range_) + slack;
    return std::all_of(data_.begin(), data_.end(), [&](double v) { return v >= lo && v <= hi; });
  }

  bool operator==(const ImageTensor&) const = default;

 private:
  Shape shape_{};
  Range range_ = Range::Symmetric;
  std::vector<double> data_;
};

/// Affine map between the two supported ranges.
inline ImageTensor convert_range(const ImageTensor& img, Range target) {
  if (img.range() == target) return img;
  std::vector<double> out(img.size());
  const auto in = img.data();
  if (target == Range::Unit) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * in[i] + 0.5;
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * in[i] - 1.0;
  }
  return ImageTensor(img.shape(), target, std::move(out));
}

/// Rounds every element to the nearest 32-bit float, i.e. to what the payload
/// format can store.
inline ImageTensor round_to_payload(const ImageTensor& img) {
  std::vector<double> out(img.values());
  for (auto& v : out) v = static_cast<double>(static_cast<float>(v));
  return ImageTensor(img.shape(), img.range(), std::move(out));
}

/// One channel as a dense H x W plane.
inline std::vector<double> channel_plane(const ImageTensor& img, int c) {
  std::vector<double> plane(static_cast<std::size_t>(img.height()) * img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) plane[static_cast<std::size_t>(y) * img.width() + x] = img(y, x, c);
  return plane;
}

/// Squared L2 norm of the difference, in the images' own units.
inline double squared_distance(const ImageTensor& a, const ImageTensor& b) {
  if (a.shape() != b.shape()) throw ValidationError("shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  double s = 0.0;
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    s += d * d;
  }
  return s;
}

/// Factor that converts a difference in `r` units into [0,1] units.
inline double unit_scale(Range r) { return r == Range::Symmetric ? 0.5 : 1.0; }

}  // namespace percsens

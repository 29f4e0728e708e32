#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "percsens/core/error.hpp"
#include "percsens/core/records.hpp"
#include "percsens/density/density.hpp"

namespace percsens {

/// Average of log p along the straight segment from x to xt (nats), by the
/// composite trapezoid rule with `n_steps` intervals. Identical endpoints
/// return log p(x) without evaluating interior points.
inline double path_integral_logp(const DensityModel& model, const std::string& id, const ImageTensor& x,
                                 const ImageTensor& xt, int n_steps) {
  if (n_steps < 1) throw ValidationError("path integral needs n_steps >= 1");
  if (x.shape() != xt.shape()) throw ValidationError("path integral: shape mismatch");
  if (x.values() == xt.values()) return model.log_prob(id, x);
  if (!model.capabilities().off_sample)
    throw UnsupportedError("path integral unsupported: " + model.describe() + " cannot evaluate off-sample points");
  const auto f = model.log_prob_on_segment(x, xt, n_steps);
  double s = 0.5 * (f.front() + f.back());
  for (int k = 1; k < n_steps; ++k) s += f[static_cast<std::size_t>(k)];
  return s / n_steps;
}

/// Mean and (population) standard deviation of all pixels in [0,1] units.
inline std::pair<double, double> image_mean_std(const ImageTensor& img) {
  const auto u = convert_range(img, Range::Unit);
  double sum = 0.0;
  for (double v : u.data()) sum += v;
  const double mean = sum / static_cast<double>(u.size());
  double ss = 0.0;
  for (double v : u.data()) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(u.size()))};
}

struct DescriptorOptions {
  int path_steps = 64;
};

/// Fills the eight surrogates for a pair. Fields whose capability the model
/// lacks are left missing (NaN); ids default to the pair id and
/// "<pair id>.noisy" unless given.
inline DescriptorRecord descriptor_record(const DensityModel& model, const ImagePair& pair,
                                          const DescriptorOptions& opt = {}, std::string reference_id = {},
                                          std::string distorted_id = {}) {
  if (reference_id.empty()) reference_id = pair.pair_id;
  if (distorted_id.empty()) distorted_id = pair.pair_id + ".noisy";
  const auto& x = pair.reference;
  const auto& xt = pair.distorted;
  if (x.shape() != xt.shape()) throw ValidationError("pair '" + pair.pair_id + "': shape mismatch");
  const bool same = x.values() == xt.values();

  DescriptorRecord r;
  r.pair_id = pair.pair_id;
  r.logp_x = model.log_prob(reference_id, x);
  r.logp_xt = same ? r.logp_x : model.log_prob(distorted_id, xt);

  const auto caps = model.capabilities();
  auto try_grad = [&](const std::string& id, const ImageTensor& img) -> std::optional<Eigen::VectorXd> {
    if (!caps.gradient) return std::nullopt;
    try {
      return model.grad_log_prob(id, img);
    } catch (const UnsupportedError&) {
      return std::nullopt;
    }
  };
  const auto gx = try_grad(reference_id, x);
  if (gx) {
    r.grad_norm_x = gx->norm();
    r.dir_proj = (to_vector(x) - to_vector(xt)).dot(*gx);
  }
  if (same) r.dir_proj = 0.0;
  if (same && gx) {
    r.grad_norm_xt = r.grad_norm_x;
  } else if (auto gt = try_grad(distorted_id, xt)) {
    r.grad_norm_xt = gt->norm();
  }
  const auto [mu, sigma] = image_mean_std(x);
  r.mu_x = mu;
  r.sigma_x = sigma;
  if (same) {
    r.path_integral = r.logp_x;
  } else if (caps.off_sample) {
    r.path_integral = path_integral_logp(model, reference_id, x, xt, opt.path_steps);
  }
  return r;
}

}  // namespace percsens

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"
#include "percsens/core/io.hpp"

namespace percsens {

struct DensityCapabilities {
  bool log_prob = true;
  bool gradient = false;
  bool off_sample = false;  // can evaluate points that are not dataset images
};

/// Flattened canonical-range vector of an image.
inline Eigen::VectorXd to_vector(const ImageTensor& img) {
  const auto c = convert_range(img, Range::Symmetric);
  return Eigen::Map<const Eigen::VectorXd>(c.data().data(), static_cast<Eigen::Index>(c.size()));
}

// Density contract. Queries carry the image id so that file-backed models can
// answer by lookup; analytic models ignore the id and evaluate the tensor.
// Log-probabilities are in nats, gradients are with respect to the
// canonical-range pixel vector.
class DensityModel {
 public:
  virtual ~DensityModel() = default;

  virtual DensityCapabilities capabilities() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string describe() const = 0;

  virtual double log_prob(const std::string& id, const ImageTensor& img) const = 0;

  virtual Eigen::VectorXd grad_log_prob(const std::string& id, const ImageTensor&) const {
    throw UnsupportedError("density model has no gradient for '" + id + "'");
  }

  /// log p at x + t (xt - x) for t = k / n_steps, k = 0..n_steps.
  virtual std::vector<double> log_prob_on_segment(const ImageTensor&, const ImageTensor&, int) const {
    throw UnsupportedError("density model cannot evaluate off-sample points (segment integral unavailable)");
  }
};

// ---------------------------------------------------------------------------
// Gaussian with shrinkage-regularized covariance.
// ---------------------------------------------------------------------------

class GaussianDensity final : public DensityModel {
 public:
  GaussianDensity(Eigen::VectorXd mean, Eigen::MatrixXd chol_lower, double alpha)
      : mean_(std::move(mean)), chol_(std::move(chol_lower)), alpha_(alpha) {
    if (chol_.rows() != mean_.size() || chol_.cols() != mean_.size())
      throw ValidationError("Gaussian: Cholesky factor dimension does not match mean");
    for (Eigen::Index i = 0; i < chol_.rows(); ++i)
      if (!(chol_(i, i) > 0.0)) throw NumericalError("Gaussian: Cholesky factor has a non-positive diagonal");
    chol_.triangularView<Eigen::StrictlyUpper>().setZero();
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  DensityCapabilities capabilities() const override { return {true, true, true}; }
  std::size_t dimension() const override { return static_cast<std::size_t>(mean_.size()); }
  std::string describe() const override { return "gaussian(d=" + std::to_string(mean_.size()) + ")"; }

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cholesky() const { return chol_; }
  double alpha() const { return alpha_; }
  double log_det() const { return log_det_; }

  /// L^{-1} v
  Eigen::VectorXd whiten(const Eigen::VectorXd& v) const {
    return chol_.triangularView<Eigen::Lower>().solve(v);
  }

  double log_prob(const Eigen::VectorXd& x) const {
    check_dim(x);
    const Eigen::VectorXd z = whiten(x - mean_);
    return normalizer() - 0.5 * z.squaredNorm();
  }

  /// -Sigma^{-1} (x - mu)
  Eigen::VectorXd grad_log_prob(const Eigen::VectorXd& x) const {
    check_dim(x);
    const Eigen::VectorXd z = whiten(x - mean_);
    return -chol_.transpose().triangularView<Eigen::Upper>().solve(z);
  }

  double log_prob(const std::string&, const ImageTensor& img) const override { return log_prob(to_vector(img)); }
  Eigen::VectorXd grad_log_prob(const std::string&, const ImageTensor& img) const override {
    return grad_log_prob(to_vector(img));
  }

  // Whitened coordinates are affine in t, so each node is evaluated exactly
  // from two triangular solves.
  std::vector<double> log_prob_on_segment(const ImageTensor& x, const ImageTensor& xt, int n_steps) const override {
    const Eigen::VectorXd vx = to_vector(x), vt = to_vector(xt);
    check_dim(vx);
    const Eigen::VectorXd z0 = whiten(vx - mean_);
    const Eigen::VectorXd dz = whiten(vt - vx);
    std::vector<double> out(static_cast<std::size_t>(n_steps) + 1);
    for (int k = 0; k <= n_steps; ++k) {
      const double t = static_cast<double>(k) / n_steps;
      out[static_cast<std::size_t>(k)] = normalizer() - 0.5 * (z0 + t * dz).squaredNorm();
    }
    return out;
  }

  void save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kMagic, 8);
    const std::uint64_t d = static_cast<std::uint64_t>(mean_.size());
    out.write(reinterpret_cast<const char*>(&d), sizeof d);
    out.write(reinterpret_cast<const char*>(&alpha_), sizeof alpha_);
    out.write(reinterpret_cast<const char*>(mean_.data()), static_cast<std::streamsize>(d * sizeof(double)));
    for (Eigen::Index i = 0; i < mean_.size(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v = chol_(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }

  static GaussianDensity load(const fs::path& path) {
    static_assert(std::endian::native == std::endian::little, "model files are little-endian");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open Gaussian model " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kMagic, 8))
      throw ValidationError(path.string() + " is not a Gaussian model file");
    std::uint64_t d = 0;
    double alpha = 0.0;
    in.read(reinterpret_cast<char*>(&d), sizeof d);
    in.read(reinterpret_cast<char*>(&alpha), sizeof alpha);
    if (!in || d == 0 || d > (1u << 20)) throw ValidationError(path.string() + ": bad header");
    Eigen::VectorXd mean(static_cast<Eigen::Index>(d));
    in.read(reinterpret_cast<char*>(mean.data()), static_cast<std::streamsize>(d * sizeof(double)));
    Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < chol.rows(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) in.read(reinterpret_cast<char*>(&chol(i, j)), sizeof(double));
    if (!in) throw ValidationError(path.string() + ": truncated model file");
    return GaussianDensity(std::move(mean), std::move(chol), alpha);
  }

 private:
  static constexpr char kMagic[8] = {'P', 'S', 'G', 'A', 'U', 'S', 'S', '1'};

  double normalizer() const {
    return -0.5 * (static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi) + log_det_);
  }
  void check_dim(const Eigen::VectorXd& x) const {
    if (x.size() != mean_.size())
      throw ValidationError("dimension mismatch: model has " + std::to_string(mean_.size()) + ", input has " +
                            std::to_string(x.size()));
  }

  Eigen::VectorXd mean_;
  Eigen::MatrixXd chol_;
  double alpha_ = 0.0;
  double log_det_ = 0.0;
};

struct GaussianFitOptions {
  double alpha = 0.1;             // shrinkage weight toward the spherical target
  double variance_floor = 1e-6;   // lower bound on the spherical target variance
};

/// Sample mean and shrinkage covariance (1-a) S + a (tr S / d) I of the rows
/// of `samples` (n x d). S uses the n-1 normalization.
inline GaussianDensity fit_gaussian(const Eigen::MatrixXd& samples, const GaussianFitOptions& opt = {}) {
  const Eigen::Index n = samples.rows(), d = samples.cols();
  if (n < 2) throw ValidationError("fit_gaussian needs at least 2 samples, got " + std::to_string(n));
  if (d < 1) throw ValidationError("fit_gaussian: zero-dimensional samples");
  if (!(opt.alpha >= 0.0 && opt.alpha <= 1.0)) throw ValidationError("fit_gaussian: alpha must lie in [0, 1]");
  if (!samples.allFinite()) throw ValidationError("fit_gaussian: non-finite sample values");
  const Eigen::VectorXd mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / static_cast<double>(n - 1));
  cov = cov.selfadjointView<Eigen::Lower>();
  const double target = std::max(cov.trace() / static_cast<double>(d), opt.variance_floor);
  cov *= (1.0 - opt.alpha);
  cov.diagonal().array() += opt.alpha * target;

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double max_diag = cov.diagonal().maxCoeff();
  if (llt.info() != Eigen::Success || !(max_diag > 0.0))
    throw NumericalError("fit_gaussian: Cholesky factorization failed (covariance not positive definite)");
  Eigen::MatrixXd chol = llt.matrixL();
  // Pivots at round-off level mean the covariance is numerically singular.
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(chol(i, i) * chol(i, i) > 1e-12 * max_diag))
      throw NumericalError("fit_gaussian: Cholesky factorization failed (covariance is rank deficient at index " +
                           std::to_string(i) + "; increase alpha)");
  return GaussianDensity(mean, std::move(chol), opt.alpha);
}

inline GaussianDensity fit_gaussian(const std::vector<ImageTensor>& images, const GaussianFitOptions& opt = {}) {
  if (images.empty()) throw ValidationError("fit_gaussian: no images");
  const auto d = static_cast<Eigen::Index>(images.front().size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(images.size()), d);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != images.front().shape()) throw ValidationError("fit_gaussian: images differ in shape");
    m.row(static_cast<Eigen::Index>(i)) = to_vector(images[i]).transpose();
  }
  return fit_gaussian(m, opt);
}

// ---------------------------------------------------------------------------
// File-backed log-probabilities (e.g. a deep generative model scored offline).
// ---------------------------------------------------------------------------

class ExternalLogProbTable final : public DensityModel {
 public:
  ExternalLogProbTable(std::map<std::string, double> logp, std::map<std::string, fs::path> gradients, std::size_t dim)
      : logp_(std::move(logp)), gradients_(std::move(gradients)), dim_(dim) {}

  DensityCapabilities capabilities() const override { return {true, !gradients_.empty(), false}; }
  std::size_t dimension() const override { return dim_; }
  std::string describe() const override { return "external(" + std::to_string(logp_.size()) + " ids)"; }

  bool has(const std::string& id) const { return logp_.count(id) != 0; }
  bool has_gradient(const std::string& id) const { return gradients_.count(id) != 0; }
  const std::map<std::string, double>& entries() const { return logp_; }

  double log_prob(const std::string& id, const ImageTensor&) const override {
    auto it = logp_.find(id);
    if (it == logp_.end()) throw ValidationError("external log-prob table has no entry for image '" + id + "'");
    return it->second;
  }

  Eigen::VectorXd grad_log_prob(const std::string& id, const ImageTensor& img) const override {
    auto it = gradients_.find(id);
    if (it == gradients_.end()) throw UnsupportedError("external table has no gradient for image '" + id + "'");
    const auto raw = read_f32_file(it->second);
    if (raw.size() != img.size())
      throw ValidationError("gradient payload for '" + id + "' has " + std::to_string(raw.size()) + " values, expected " +
                            std::to_string(img.size()));
    Eigen::VectorXd g(static_cast<Eigen::Index>(raw.size()));
    for (std::size_t i = 0; i < raw.size(); ++i) g(static_cast<Eigen::Index>(i)) = raw[i];
    return g;
  }

 private:
  std::map<std::string, double> logp_;
  std::map<std::string, fs::path> gradients_;
  std::size_t dim_ = 0;
};

struct LogProbIngest {
  std::map<std::string, double> logp;
  std::vector<std::string> warnings;
};

/// Reads `image_id,logp_nats`. Values are parsed exactly as written.
/// `expected_ids`, when non-empty, lists ids that must be covered; ids in the
/// file that are not expected produce warnings.
inline LogProbIngest read_logprob_csv(const fs::path& path, const std::vector<std::string>& expected_ids = {}) {
  const auto doc = read_csv(path);
  if (doc.header.size() != 2 || doc.header[0] != "image_id" || doc.header[1] != "logp_nats")
    throw ValidationError(path.string() + ": expected header 'image_id,logp_nats'");
  LogProbIngest out;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto where = path.string() + ":" + std::to_string(doc.line_numbers[r]);
    const double v = parse_number(doc.rows[r][1], where);
    if (!std::isfinite(v)) throw ValidationError(where + ": log-probability must be finite");
    if (!out.logp.emplace(doc.rows[r][0], v).second)
      throw ValidationError(where + ": duplicate image_id '" + doc.rows[r][0] + "'");
  }
  if (!expected_ids.empty()) {
    std::map<std::string, bool> want;
    for (const auto& id : expected_ids) want[id] = true;
    for (const auto& id : expected_ids)
      if (!out.logp.count(id)) throw ValidationError(path.string() + ": no log-probability for image '" + id + "'");
    for (const auto& [id, v] : out.logp)
      if (!want.count(id)) out.warnings.push_back("log-prob entry for image '" + id + "' not in manifest");
  }
  return out;
}

}  // namespace percsens

#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"

namespace percsens {

struct OlsResult {
  Eigen::VectorXd coef;
  double residual_norm = 0.0;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  std::vector<std::string> warnings;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return x * coef; }
};

struct OlsOptions {
  // Return the minimum-norm least-squares solution (with a warning) instead of
  // failing when the design is rank deficient.
  bool allow_rank_deficient = false;
};

// Least squares via column-pivoted QR on unit-norm columns, which keeps
// designs such as (1, log p, log p^2) well scaled.
inline OlsResult fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const OlsOptions& opt = {}) {
  if (x.rows() != y.size()) throw ValidationError("ols: design has " + std::to_string(x.rows()) + " rows, response " + std::to_string(y.size()));
  if (x.cols() == 0) throw ValidationError("ols: empty design");
  if (!x.allFinite() || !y.allFinite()) throw ValidationError("ols: non-finite input");
  // With an intercept column, center the other columns first. A regressor
  // such as log p with a tiny spread around a large offset is otherwise
  // numerically collinear with the intercept.
  Eigen::Index c0 = -1;
  for (Eigen::Index j = 0; j < x.cols() && c0 < 0; ++j)
    if (x(0, j) != 0.0 && (x.col(j).array() == x(0, j)).all()) c0 = j;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.cols());
  if (c0 >= 0 && x.rows() > 1)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (j != c0) mean(j) = x.col(j).mean();
  Eigen::MatrixXd xc = x.rowwise() - mean.transpose();

  Eigen::VectorXd scale = xc.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (scale(j) == 0.0) scale(j) = 1.0;
  const Eigen::MatrixXd xs = xc * scale.cwiseInverse().asDiagonal();

  OlsResult r;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  r.rank = qr.rank();
  Eigen::VectorXd beta;
  if (r.rank < x.cols()) {
    r.rank_deficient = true;
    const std::string msg = "ols: design is rank deficient (rank " + std::to_string(r.rank) + " of " + std::to_string(x.cols()) + " columns)";
    if (!opt.allow_rank_deficient) throw NumericalError(msg);
    r.warnings.push_back(msg + "; using the minimum-norm solution");
    // The threshold must be set before compute(): the Z transform depends on it.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(xs.rows(), xs.cols());
    cod.setThreshold(1e-10);
    cod.compute(xs);
    beta = cod.solve(y);
  } else {
    beta = qr.solve(y);
  }
  r.coef = beta.cwiseQuotient(scale);
  if (c0 >= 0) r.coef(c0) -= r.coef.dot(mean) / x(0, c0);
  r.residual_norm = (y - x * r.coef).norm();
  return r;
}

}  // namespace percsens

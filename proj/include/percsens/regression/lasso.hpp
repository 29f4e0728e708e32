#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"
#include "percsens/core/io.hpp"

namespace percsens {

struct LassoOptions {
  double tol = 1e-8;           // max coordinate change per sweep, standardized units
  double gap_tol = 1e-14;      // duality gap relative to |y_c|^2
  long max_sweeps = 20'000;  // then feature-sign search takes over
  double accept_gap = 1e-6;    // last resort: keep an unconverged solution this close, with a warning
};

// x holds only the penalized columns; the intercept is implicit and
// unpenalized. Internally columns are centered and scaled to unit L2 norm and
// the objective is 1/2 |y_c - Xs b|^2 + lambda |b|_1 in those units.
struct LassoResult {
  double lambda = 0.0;
  double lambda_max = 0.0;
  double intercept = 0.0;
  Eigen::VectorXd coef;          // original units
  Eigen::VectorXd coef_std;      // standardized units
  std::vector<Eigen::Index> active;
  long sweeps = 0;
  double max_change = 0.0;
  double duality_gap = 0.0;      // relative to |y_c|^2
  std::vector<std::string> warnings;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    return (x * coef).array() + intercept;
  }
};

struct StandardizedDesign {
  Eigen::MatrixXd xs;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd norm;
  Eigen::VectorXd yc;
  double y_mean = 0.0;
};

inline StandardizedDesign standardize_design(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  StandardizedDesign s;
  s.mean = x.colwise().mean();
  s.xs = x.rowwise() - s.mean;
  s.norm = s.xs.colwise().norm();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (!(s.norm(j) > 0.0)) throw NumericalError("lasso: column " + std::to_string(j) + " is constant");
    s.xs.col(j) /= s.norm(j);
  }
  s.y_mean = y.mean();
  s.yc = y.array() - s.y_mean;
  return s;
}

/// Smallest lambda at which every penalized coefficient is zero.
inline double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const auto s = standardize_design(x, y);
  return (s.xs.transpose() * s.yc).cwiseAbs().maxCoeff();
}

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

namespace detail {

// Exact solution on the current support: with the signs of b fixed the
// optimality conditions are linear. Accepted only if the signs reproduce and
// every inactive gradient stays within lambda.
inline bool lasso_polish(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda, Eigen::VectorXd& b) {
  std::vector<Eigen::Index> act;
  for (Eigen::Index j = 0; j < b.size(); ++j)
    if (b(j) != 0.0) act.push_back(j);
  const auto k = static_cast<Eigen::Index>(act.size());
  Eigen::VectorXd sol = Eigen::VectorXd::Zero(b.size());
  if (k > 0) {
    Eigen::MatrixXd g(k, k);
    Eigen::VectorXd rhs(k), sgn(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      sgn(i) = b(act[i]) > 0.0 ? 1.0 : -1.0;
      rhs(i) = xty(act[i]) - lambda * sgn(i);
      for (Eigen::Index j = 0; j < k; ++j) g(i, j) = gram(act[i], act[j]);
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(g);
    if (!lu.isInvertible()) return false;
    const Eigen::VectorXd beta = lu.solve(rhs);
    for (Eigen::Index i = 0; i < k; ++i) {
      if (beta(i) * sgn(i) <= 0.0) return false;
      sol(act[i]) = beta(i);
    }
  }
  const Eigen::VectorXd grad = xty - gram * sol;
  const double slack = 1e-10 * std::max(1.0, lambda);
  for (Eigen::Index j = 0; j < b.size(); ++j)
    if (sol(j) == 0.0 && std::abs(grad(j)) > lambda + slack) return false;
  b = sol;
  return true;
}

// Primal minus dual objective for the residual-scaled dual point, written in
// Gram form: grad = X'y - G b.
inline double lasso_duality_gap(const Eigen::VectorXd& b, const Eigen::VectorXd& xty, const Eigen::VectorXd& grad, double yy,
                                double lambda) {
  const double bx = b.dot(xty);
  const double rr = std::max(0.0, yy - bx - b.dot(grad));
  const double yr = yy - bx;
  const double gmax = grad.cwiseAbs().maxCoeff();
  const double c = gmax > lambda ? lambda / gmax : 1.0;
  const double primal = 0.5 * rr + lambda * b.lpNorm<1>();
  const double dual = c * yr - 0.5 * c * c * rr;
  return primal - dual;
}

inline double lasso_objective(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda, const Eigen::VectorXd& b) {
  return 0.5 * b.dot(gram * b) - b.dot(xty) + lambda * b.lpNorm<1>();
}

/// Largest violation of the lasso subgradient conditions.
inline double lasso_kkt_violation(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda, const Eigen::VectorXd& b) {
  const Eigen::VectorXd grad = xty - gram * b;
  double v = 0.0;
  for (Eigen::Index j = 0; j < b.size(); ++j)
    v = std::max(v, b(j) != 0.0 ? std::abs(grad(j) - lambda * (b(j) > 0.0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(grad(j)) - lambda));
  return v;
}

// Feature-sign search: exact on small, badly conditioned designs where
// coordinate descent crawls. Each inner step solves the sign-fixed system on
// the active set and line-searches over the sign changes on the way there.
inline bool lasso_feature_sign(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda, Eigen::VectorXd& b,
                               double kkt_tol, int max_iter = 1000) {
  const Eigen::Index d = b.size();
  for (int outer = 0; outer < max_iter; ++outer) {
    Eigen::VectorXd grad = xty - gram * b;
    Eigen::Index add = -1;
    double best = lambda + kkt_tol;
    for (Eigen::Index j = 0; j < d; ++j)
      if (b(j) == 0.0 && std::abs(grad(j)) > best) {
        best = std::abs(grad(j));
        add = j;
      }
    std::vector<double> sign(static_cast<std::size_t>(d), 0.0);
    for (Eigen::Index j = 0; j < d; ++j) sign[static_cast<std::size_t>(j)] = b(j) > 0.0 ? 1.0 : (b(j) < 0.0 ? -1.0 : 0.0);
    if (add >= 0) sign[static_cast<std::size_t>(add)] = grad(add) > 0.0 ? 1.0 : -1.0;
    for (int inner = 0; inner < max_iter; ++inner) {
      std::vector<Eigen::Index> act;
      for (Eigen::Index j = 0; j < d; ++j)
        if (sign[static_cast<std::size_t>(j)] != 0.0) act.push_back(j);
      const auto k = static_cast<Eigen::Index>(act.size());
      if (k == 0) break;
      Eigen::MatrixXd g(k, k);
      Eigen::VectorXd rhs(k);
      for (Eigen::Index i = 0; i < k; ++i) {
        rhs(i) = xty(act[i]) - lambda * sign[static_cast<std::size_t>(act[i])];
        for (Eigen::Index j = 0; j < k; ++j) g(i, j) = gram(act[i], act[j]);
      }
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(g);
      if (!lu.isInvertible()) return false;
      Eigen::VectorXd target = Eigen::VectorXd::Zero(d);
      const Eigen::VectorXd beta = lu.solve(rhs);
      for (Eigen::Index i = 0; i < k; ++i) target(act[i]) = beta(i);
      // Candidates: the target and every zero crossing between b and it.
      Eigen::VectorXd pick = target;
      double pick_obj = lasso_objective(gram, xty, lambda, target);
      for (Eigen::Index j : act) {
        if (b(j) == 0.0 || (b(j) > 0.0) == (target(j) > 0.0)) continue;
        const double t = b(j) / (b(j) - target(j));
        Eigen::VectorXd c = b + t * (target - b);
        c(j) = 0.0;
        const double o = lasso_objective(gram, xty, lambda, c);
        if (o < pick_obj) {
          pick_obj = o;
          pick = c;
        }
      }
      b = pick;
      bool settled = true;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double sj = b(j) > 0.0 ? 1.0 : (b(j) < 0.0 ? -1.0 : 0.0);
        if (sj != sign[static_cast<std::size_t>(j)]) settled = false;
        sign[static_cast<std::size_t>(j)] = sj;
      }
      if (settled) break;
    }
    if (add < 0 && lasso_kkt_violation(gram, xty, lambda, b) <= kkt_tol) return true;
  }
  return lasso_kkt_violation(gram, xty, lambda, b) <= kkt_tol;
}

}  // namespace detail

// Cyclic coordinate descent on the Gram matrix, finished by an exact solve
// on the support once it settles.
inline LassoResult fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, const LassoOptions& opt = {},
                             const Eigen::VectorXd* warm_start_std = nullptr) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lasso: lambda must be finite and >= 0");
  if (x.rows() != y.size()) throw ValidationError("lasso: row mismatch");
  if (x.cols() == 0) throw ValidationError("lasso: no penalized columns");
  if (!x.allFinite() || !y.allFinite()) throw ValidationError("lasso: non-finite input");
  const auto s = standardize_design(x, y);
  const Eigen::Index d = x.cols();
  const Eigen::MatrixXd gram = s.xs.transpose() * s.xs;
  const Eigen::VectorXd xty = s.xs.transpose() * s.yc;

  LassoResult r;
  r.lambda = lambda;
  r.lambda_max = xty.cwiseAbs().maxCoeff();
  Eigen::VectorXd b = warm_start_std && warm_start_std->size() == d ? *warm_start_std : Eigen::VectorXd::Zero(d);
  // grad = X'y - G b, maintained incrementally.
  Eigen::VectorXd grad = xty - gram * b;
  const double yy = std::max(s.yc.squaredNorm(), std::numeric_limits<double>::min());
  bool converged = false;
  for (r.sweeps = 1; r.sweeps <= opt.max_sweeps; ++r.sweeps) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double gjj = gram(j, j);
      const double nb = soft_threshold(grad(j) + gjj * b(j), lambda) / gjj;
      const double delta = nb - b(j);
      if (delta != 0.0) {
        grad -= gram.col(j) * delta;
        b(j) = nb;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    r.max_change = max_change;
    if (max_change < opt.tol) {
      converged = true;
      Eigen::VectorXd p = b;
      if (detail::lasso_polish(gram, xty, lambda, p)) b = p;
      break;
    }
    if (r.sweeps % 100 == 0) {
      if (detail::lasso_polish(gram, xty, lambda, b)) {
        converged = true;
        break;
      }
      grad = xty - gram * b;
      if (lambda > 0.0 && detail::lasso_duality_gap(b, xty, grad, yy, lambda) <= opt.gap_tol * yy) {
        converged = true;
        break;
      }
    }
  }
  const double kkt_tol = 1e-9 * std::max(1.0, xty.cwiseAbs().maxCoeff());
  if (!converged) {
    Eigen::VectorXd fs = b;
    if (detail::lasso_feature_sign(gram, xty, lambda, fs, kkt_tol)) {
      b = fs;
      converged = true;
    }
  }
  if (!converged) {
    grad = xty - gram * b;
    const double gap = detail::lasso_duality_gap(b, xty, grad, yy, lambda) / yy;
    if (gap <= opt.accept_gap)
      r.warnings.push_back("lasso: stopped after " + std::to_string(opt.max_sweeps) + " sweeps at lambda " + format_number(lambda) +
                           " with relative duality gap " + format_number(gap));
    else
      throw NumericalError("lasso: no convergence after " + std::to_string(opt.max_sweeps) + " sweeps (lambda " +
                         format_number(lambda) + ", last max coordinate change " + format_number(r.max_change) +
                         ", relative duality gap " + format_number(detail::lasso_duality_gap(b, xty, grad, yy, lambda) / yy) + ")");
  }
  grad = xty - gram * b;
  r.duality_gap = detail::lasso_duality_gap(b, xty, grad, yy, lambda) / yy;
  r.coef_std = b;
  r.coef = b.cwiseQuotient(s.norm.transpose());
  r.intercept = s.y_mean - (s.mean * r.coef)(0);
  for (Eigen::Index j = 0; j < d; ++j)
    if (b(j) != 0.0) r.active.push_back(j);
  return r;
}

}  // namespace percsens

// Estimates the mutual information of a correlated Gaussian pair with RBIG
// and compares the information coefficient of correlation with |rho|.

#include <cmath>
#include <cstdio>

#include <Eigen/Dense>

#include "percsens/core/rng.hpp"
#include "percsens/info/mi.hpp"

int main() {
  namespace ps = percsens;
  ps::RbigConfig cfg;
  cfg.rotation_seed = 3;
  for (double rho : {0.0, 0.3, 0.6, 0.9}) {
    ps::Rng rng(ps::derive_seed(11, std::to_string(rho)));
    const Eigen::Index n = 10000;
    Eigen::MatrixXd a(n, 1), b(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = rng.normal(), v = rng.normal();
      a(i, 0) = u;
      b(i, 0) = rho * u + std::sqrt(1.0 - rho * rho) * v;
    }
    const auto r = ps::mutual_information(a, b, cfg);
    std::printf("rho %.1f  MI %.4f nats  ICC %.4f  exact MI %.4f\n", rho, r.mi_nats, r.icc,
                std::log(1.0 / (1.0 - rho * rho)) / 2.0);
  }
}

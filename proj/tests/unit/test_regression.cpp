#include <gtest/gtest.h>

#include "percsens/core/records.hpp"
#include "percsens/regression/ablation.hpp"
#include "percsens/regression/features.hpp"
#include "percsens/regression/forest.hpp"
#include "percsens/regression/functional_form.hpp"
#include "percsens/regression/lasso.hpp"
#include "percsens/regression/ols.hpp"
#include "percsens/regression/split.hpp"
#include "test_util.hpp"

using namespace percsens;

namespace {

Eigen::MatrixXd random_design(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

// Subgradient conditions checked from scratch on the standardized problem.
double kkt_violation(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoResult& r) {
  Eigen::MatrixXd xs = x.rowwise() - x.colwise().mean();
  for (Eigen::Index j = 0; j < xs.cols(); ++j) xs.col(j) /= xs.col(j).norm();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const Eigen::VectorXd g = xs.transpose() * (yc - xs * r.coef_std);
  double v = 0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    const double b = r.coef_std(j);
    v = std::max(v, b != 0 ? std::abs(g(j) - r.lambda * (b > 0 ? 1 : -1)) : std::max(0.0, std::abs(g(j)) - r.lambda));
  }
  return v;
}

}  // namespace

TEST(Features, ParsesEveryTermKind) {
  const auto spec = parse_feature_spec("# comment\nbias\np\np^2\nfrac(logp_x,1/3)\n1/s\np*s\np/s\n\nmu_x\n");
  EXPECT_EQ(spec.names(), (std::vector<std::string>{"bias", "logp_xt", "logp_xt^2", "frac(logp_x,0.3333333333333333)", "1/sigma_x",
                                                    "logp_xt*sigma_x", "logp_xt/sigma_x", "mu_x"}));
  EXPECT_TRUE(spec.has_bias());
  EXPECT_EQ(spec.columns(), (std::vector<std::string>{"logp_xt", "logp_x", "sigma_x", "mu_x"}));
  EXPECT_THROW(parse_feature_spec("p\np\n"), ValidationError);
  EXPECT_THROW(parse_feature_spec("p^1.5\n"), ValidationError);
  EXPECT_THROW(parse_feature_spec("frac(p,-1)\n"), ValidationError);
  EXPECT_THROW(parse_feature_spec("p+s\n"), ValidationError);
  EXPECT_THROW(parse_feature_spec("# nothing\n"), ValidationError);
}

TEST(Features, ExpansionValues) {
  DataTable t({"a", "b"});
  t.add_column("logp_xt", {-8.0, -27.0});
  t.add_column("sigma_x", {0.5, 0.25});
  const auto d = expand_features(t, parse_feature_spec("b\np\np^2\nfrac(p,1/3)\n1/s\np*s\ns/p\n"));
  ASSERT_EQ(d.x.rows(), 2);
  EXPECT_EQ(d.x(0, 0), 1.0);
  EXPECT_EQ(d.x(1, 2), 729.0);
  // Fractional powers of log-probabilities act on -log p.
  EXPECT_NEAR(d.x(0, 3), 2.0, 1e-14);
  EXPECT_NEAR(d.x(1, 3), 3.0, 1e-14);
  EXPECT_EQ(d.x(1, 4), 4.0);
  EXPECT_EQ(d.x(0, 5), -4.0);
  EXPECT_EQ(d.x(1, 6), 0.25 / -27.0);
  EXPECT_THROW(expand_features(t, parse_feature_spec("grad_norm_x\n")), ValidationError);
  DataTable z({"a"});
  z.add_column("sigma_x", {0.0});
  EXPECT_THROW(expand_features(z, parse_feature_spec("1/s\n")), NumericalError);
}

TEST(Ols, RecoversExactLinearModel) {
  const auto x0 = random_design(50, 3, 1);
  Eigen::MatrixXd x(50, 4);
  x << Eigen::VectorXd::Ones(50), x0;
  const Eigen::Vector4d beta(1.5, -2.0, 0.25, 3.0);
  const auto r = fit_ols(x, x * beta);
  EXPECT_LE((r.coef - beta).norm(), 1e-12);
  EXPECT_LE(r.residual_norm, 1e-10);
  EXPECT_FALSE(r.rank_deficient);
}

TEST(Ols, MatchesNormalEquations) {
  const auto x = random_design(200, 4, 2);
  Rng rng(3);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) y(i) = rng.normal();
  const Eigen::VectorXd want = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  EXPECT_LE((fit_ols(x, y).coef - want).norm(), 1e-10);
}

TEST(Ols, RankDeficiency) {
  auto x = random_design(30, 3, 4);
  x.col(2) = 2 * x.col(0) - x.col(1);
  const Eigen::VectorXd y = x.col(0);
  EXPECT_THROW(fit_ols(x, y), NumericalError);
  const auto r = fit_ols(x, y, {true});
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_EQ(r.rank, 2);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_LE(r.residual_norm, 1e-10);
}

TEST(Lasso, ZeroLambdaIsOls) {
  const auto x = random_design(100, 4, 5);
  Rng rng(6);
  Eigen::VectorXd y(100);
  for (int i = 0; i < 100; ++i) y(i) = 2 + x(i, 0) - 0.5 * x(i, 2) + 0.1 * rng.normal();
  const auto l = fit_lasso(x, y, 0.0);
  Eigen::MatrixXd xb(100, 5);
  xb << Eigen::VectorXd::Ones(100), x;
  const auto o = fit_ols(xb, y);
  EXPECT_NEAR(l.intercept, o.coef(0), 1e-6);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(l.coef(j), o.coef(j + 1), 1e-6);
}

TEST(Lasso, LambdaMaxZeroesEverything) {
  const auto x = random_design(80, 5, 7);
  const Eigen::VectorXd y = x.col(1) * 3 + x.col(4);
  const double lmax = lasso_lambda_max(x, y);
  for (double f : {1.0, 1.5}) {
    const auto r = fit_lasso(x, y, f * lmax);
    EXPECT_EQ(r.coef.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_TRUE(r.active.empty());
    EXPECT_NEAR(r.intercept, y.mean(), 1e-12);
  }
  EXPECT_FALSE(fit_lasso(x, y, 0.99 * lmax).active.empty());
}

TEST(Lasso, SubgradientOptimality) {
  const auto x = random_design(120, 6, 8);
  Rng rng(9);
  Eigen::VectorXd y(120);
  for (int i = 0; i < 120; ++i) y(i) = x(i, 0) - 2 * x(i, 3) + 0.5 * rng.normal();
  const double lmax = lasso_lambda_max(x, y);
  for (double f : {0.5, 0.1, 0.01}) {
    const auto r = fit_lasso(x, y, f * lmax);
    EXPECT_LE(kkt_violation(x, y, r), 1e-6) << "lambda fraction " << f;
  }
}

TEST(Lasso, NearlyCollinearColumnsConverge) {
  // p and p^2 over a narrow range are collinear to ~1e-10.
  Rng rng(10);
  Eigen::MatrixXd x(300, 3);
  Eigen::VectorXd y(300);
  for (int i = 0; i < 300; ++i) {
    const double p = -4560 + rng.uniform(-1, 1), s = rng.uniform(0.1, 0.3);
    x.row(i) << p, p * p, s;
    y(i) = 0.01 * p - 2 * s + 0.01 * rng.normal();
  }
  const double lmax = lasso_lambda_max(x, y);
  for (double f : {0.3, 1e-3, 1e-6}) {
    const auto r = fit_lasso(x, y, f * lmax);
    EXPECT_LE(kkt_violation(x, y, r), 1e-6 * std::max(1.0, lmax));
  }
}

TEST(Lasso, RejectsBadInput) {
  const auto x = random_design(10, 2, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Ones(10);
  EXPECT_THROW(fit_lasso(x, y, -1), ValidationError);
  Eigen::MatrixXd c = x;
  c.col(1).setConstant(2.0);
  EXPECT_THROW(fit_lasso(c, y, 0.1), NumericalError);
}

TEST(Split, SeededAndDisjoint) {
  const auto a = train_test_split(100, 0.3, 5), b = train_test_split(100, 0.3, 5);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.test.size(), 30u);
  std::vector<int> seen(100, 0);
  for (auto i : a.test) seen[i]++;
  for (auto i : a.train) seen[i]++;
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_NE(train_test_split(100, 0.3, 6).test, a.test);
  EXPECT_THROW(train_test_split(2, 0.1, 1), ValidationError);
  EXPECT_THROW(train_test_split(10, 1.0, 1), ValidationError);
}

TEST(Forest, SingleFullTreeInterpolates) {
  const auto x = random_design(200, 3, 11);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) y(i) = std::sin(x(i, 0)) + x(i, 1) * x(i, 2);
  ForestParams p;
  p.n_trees = 1;
  p.min_samples_leaf = 1;
  p.bootstrap = false;
  p.max_features = 3;
  const auto m = fit_random_forest(x, y, p, 1);
  EXPECT_LE((m.predict(x) - y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forest, ImportancesAndDeterminism) {
  Rng rng(12);
  Eigen::MatrixXd x(1000, 4);
  Eigen::VectorXd y(1000);
  for (int i = 0; i < 1000; ++i) {
    for (int j = 0; j < 4; ++j) x(i, j) = rng.uniform();
    y(i) = 3 * x(i, 1) + 0.5 * x(i, 3);
  }
  ForestParams p;
  p.n_trees = 50;
  p.threads = 1;
  const auto a = fit_random_forest(x, y, p, 3);
  p.threads = 8;
  const auto b = fit_random_forest(x, y, p, 3);
  EXPECT_EQ(a.importances, b.importances);
  EXPECT_EQ(a.predict(x), b.predict(x));
  double sum = 0;
  for (double v : a.importances) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_GT(a.importances[1], a.importances[3]);
  EXPECT_GT(a.importances[3], a.importances[0]);
}

TEST(Forest, ConstantTargetIsDegenerate) {
  const auto x = random_design(50, 2, 13);
  const auto m = fit_random_forest(x, Eigen::VectorXd::Constant(50, 2.0), {}, 1);
  EXPECT_TRUE(m.importances_degenerate);
  EXPECT_NEAR(m.predict(x).maxCoeff(), 2.0, 1e-12);
  ForestParams bad;
  bad.n_trees = 0;
  EXPECT_THROW(fit_random_forest(x, Eigen::VectorXd::Zero(50), bad, 1), ValidationError);
}

TEST(Forest, HeldOutSplitScores) {
  Rng rng(14);
  Eigen::MatrixXd x(500, 2);
  Eigen::VectorXd y(500);
  for (int i = 0; i < 500; ++i) {
    x(i, 0) = rng.uniform();
    x(i, 1) = rng.uniform();
    y(i) = x(i, 0) * x(i, 0) + 0.01 * rng.normal();
  }
  ForestParams p;
  p.n_trees = 30;
  const auto r = fit_random_forest_split(x, y, p, 2);
  EXPECT_EQ(r.split.test.size(), 150u);
  EXPECT_GT(r.test.pearson, 0.95);
}

TEST(FunctionalForm, PublishedCoefficients) {
  const auto m = functional_form_registry("msssim", Form::Eq3);
  EXPECT_EQ(m.iqm, "MSSIM");
  EXPECT_EQ(m.coef, (std::vector<double>{29.5, 4.9e-3, 2.05e-7}));
  EXPECT_NEAR(predict_sensitivity(m, -5000), 10.125, 1e-9);
  const auto n = functional_form_registry("NLPD", Form::Eq4);
  EXPECT_EQ(n.terms.back(), "sigma_x");
  EXPECT_NEAR(predict_sensitivity(n, -5000, 0.2), 58 + 8.19e-3 * -5000 + 3.09e-7 * 25e6 - 3.74 * 0.2, 1e-9);
  EXPECT_THROW(predict_sensitivity(n, -5000), ValidationError);
  EXPECT_THROW(predict_sensitivity(m, -5000, 0.2), ValidationError);
  EXPECT_THROW(functional_form_registry("SSIM", Form::Eq3), ValidationError);
  EXPECT_EQ(parse_form("eq4"), Form::Eq4);
  EXPECT_THROW(parse_form("eq5"), ValidationError);
}

TEST(Ablation, SequentialKeepsPlantedTerms) {
  // Sensitivity built from b, p, p^2 and s only.
  const int n = 2000;
  Rng rng(15);
  std::vector<std::string> ids;
  std::vector<double> p(n), s(n), y(n);
  const auto m = functional_form_registry("NLPD", Form::Eq4);
  for (int i = 0; i < n; ++i) {
    ids.push_back("r" + std::to_string(i));
    p[i] = rng.uniform(-9000, -3000);
    s[i] = rng.uniform(0.05, 0.35);
    y[i] = predict_sensitivity(m, p[i], s[i]) * (1 + 0.001 * rng.normal());
  }
  DataTable t(ids);
  t.add_column("logp_xt", p);
  t.add_column("sigma_x", s);
  t.add_column("sens_nlpd", y);
  AblationOptions opt;
  opt.lasso = false;
  const auto rep = ablation_study(t, opt);
  bool found = false;
  for (const auto& r : rep.rows)
    if (r.mode == "sequential" && r.n_terms == 4) {
      found = true;
      EXPECT_EQ(r.included, (std::array<bool, 9>{true, true, true, true, false, false, false, false, false}));
    }
  EXPECT_TRUE(found);
  EXPECT_FALSE(rep.candidates.empty());
  for (std::size_t i = 1; i < rep.rows.size(); ++i) EXPECT_LE(rep.rows[i].n_terms, rep.rows[i - 1].n_terms);
}

#include "gridsentinel/estimator.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gridsentinel/errors.h"
#include "gridsentinel/netmodel.h"
#include "gridsentinel/random.h"

namespace gridsentinel {
namespace estimation {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd RandomMatrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) m.col(j) = standard_normal(rng, rows);
  return m;
}

double WeightedObjective(const MatrixXd& h, const VectorXd& z, const VectorXd& sigma,
                         const VectorXd& x) {
  return (z - h * x).cwiseQuotient(sigma).squaredNorm();
}

GTEST_TEST(ResidualStatTest, Examples) {
  EXPECT_EQ(residual_stat(VectorXd::Zero(3), VectorXd::Ones(3)), 0.0);
  EXPECT_EQ(residual_stat(Eigen::Vector2d(1.0, 2.0), VectorXd::Ones(2)), 5.0);
  const VectorXd r = Eigen::Vector3d(0.3, -1.2, 2.0);
  const VectorXd s = Eigen::Vector3d(0.5, 1.0, 2.0);
  EXPECT_NEAR(residual_stat(r, 2.0 * s), residual_stat(r, s) / 4.0, 1e-15);
  EXPECT_THROW(residual_stat(r, VectorXd::Ones(2)), ContractError);
}

GTEST_TEST(WlsTest, ExactRecovery) {
  Rng rng(1);
  const MatrixXd h = RandomMatrix(30, 20, rng);
  const VectorXd x = standard_normal(rng, 20);
  const EstimationResult res = wls_linear(h, h * x, VectorXd::Constant(30, 0.1));
  EXPECT_LT((res.x_hat - x).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.iterations, 1);
}

GTEST_TEST(WlsTest, HandExample) {
  MatrixXd h(3, 2);
  h << 1, 0,
       0, 1,
       1, 1;
  const EstimationResult res = wls_linear(h, Eigen::Vector3d(1, 2, 4), VectorXd::Ones(3));
  EXPECT_NEAR(res.x_hat[0], 4.0 / 3.0, 1e-14);
  EXPECT_NEAR(res.x_hat[1], 7.0 / 3.0, 1e-14);
  // Normal-equation oracle.
  const VectorXd normal = (h.transpose() * h).inverse() * h.transpose() * Eigen::Vector3d(1, 2, 4);
  EXPECT_LT((res.x_hat - normal).norm(), 1e-14);
}

GTEST_TEST(WlsTest, InflatedVarianceDeletesSensor) {
  Rng rng(2);
  const MatrixXd h = RandomMatrix(12, 4, rng);
  const VectorXd z = standard_normal(rng, 12);
  VectorXd sigma = VectorXd::Ones(12);
  sigma[5] = 1e3;  // variance x 1e6
  const VectorXd inflated = wls_linear(h, z, sigma).x_hat;

  MatrixXd h_del(11, 4);
  VectorXd z_del(11);
  for (int i = 0, k = 0; i < 12; ++i) {
    if (i == 5) continue;
    h_del.row(k) = h.row(i);
    z_del[k++] = z[i];
  }
  const VectorXd deleted = wls_linear(h_del, z_del, VectorXd::Ones(11)).x_hat;
  EXPECT_LT((inflated - deleted).lpNorm<Eigen::Infinity>(), 1e-3);
}

GTEST_TEST(WlsTest, OptimalityAndOrthogonality) {
  Rng rng(3);
  const MatrixXd h = RandomMatrix(30, 20, rng);
  VectorXd sigma(30);
  for (int i = 0; i < 30; ++i) sigma[i] = 0.5 + 0.05 * i;
  const VectorXd z = standard_normal(rng, 30);
  const EstimationResult res = wls_linear(h, z, sigma);
  const VectorXd w = sigma.array().square().inverse();
  EXPECT_LT((h.transpose() * w.asDiagonal() * res.residual).lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_NEAR(res.chi2, residual_stat(res.residual, sigma), 1e-12);
  const double best = WeightedObjective(h, z, sigma, res.x_hat);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd delta = standard_normal(rng, 20);
    delta *= 1e-3 / delta.norm();
    EXPECT_GT(WeightedObjective(h, z, sigma, res.x_hat + delta), best);
  }
}

GTEST_TEST(WlsTest, RankDeficiencyNamesColumns) {
  MatrixXd h(4, 3);
  h << 1, 0, 2,
       0, 1, 0,
       1, 1, 2,
       2, 0, 4;
  try {
    wls_linear(h, VectorXd::Ones(4), VectorXd::Ones(4));
    FAIL() << "expected EstimationError";
  } catch (const EstimationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("rank 2 of 3"), std::string::npos) << what;
    EXPECT_NE(what.find("deficient columns"), std::string::npos) << what;
  }
}

GTEST_TEST(NewtonTest, LinearModelTakesOneStep) {
  Rng rng(4);
  const MatrixXd h = RandomMatrix(25, 6, rng);
  const VectorXd z = standard_normal(rng, 25);
  const VectorXd sigma = VectorXd::Constant(25, 0.3);
  const EstimationResult res = newton_se([&](const VectorXd& x) { return VectorXd(h * x); },
                                         [&](const VectorXd&) { return h; }, z, sigma,
                                         VectorXd::Zero(6));
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.iterations, 1);
  EXPECT_LT((res.x_hat - wls_linear(h, z, sigma).x_hat).norm(), 1e-12);
}

GTEST_TEST(NewtonTest, SingularNormalMatrix) {
  const MatrixXd h = MatrixXd::Ones(5, 2);
  EXPECT_THROW(newton_se([&](const VectorXd& x) { return VectorXd(h * x); },
                         [&](const VectorXd&) { return h; }, VectorXd::Ones(5),
                         VectorXd::Ones(5), VectorXd::Zero(2)),
               EstimationError);
}

GTEST_TEST(NewtonTest, IterationBudget) {
  // h(x) = exp(x) per coordinate, far from the solution.
  auto h = [](const VectorXd& x) {
    VectorXd out(3);
    out << std::exp(x[0]), std::exp(x[1]), std::exp(x[0] + x[1]);
    return out;
  };
  auto jac = [](const VectorXd& x) {
    MatrixXd j(3, 2);
    j << std::exp(x[0]), 0.0, 0.0, std::exp(x[1]), std::exp(x[0] + x[1]),
        std::exp(x[0] + x[1]);
    return j;
  };
  const VectorXd truth = Eigen::Vector2d(2.0, -1.0);
  NewtonOptions opt;
  opt.max_iter = 1;
  const EstimationResult partial = newton_se(h, jac, h(truth), VectorXd::Ones(3),
                                             VectorXd::Zero(2), opt);
  EXPECT_FALSE(partial.converged);
  EXPECT_EQ(partial.iterations, 1);
  const EstimationResult full = newton_se(h, jac, h(truth), VectorXd::Ones(3), VectorXd::Zero(2));
  EXPECT_TRUE(full.converged);
  EXPECT_LT((full.x_hat - truth).norm(), 1e-8);
  EXPECT_THROW(newton_se(h, jac, h(truth), VectorXd::Ones(3), VectorXd::Zero(2),
                         NewtonOptions{0.0, 5, 5}),
               ContractError);
}

class Case14Estimation : public ::testing::Test {
 protected:
  Case14Estimation()
      : grid_(net::load_case(std::string(GRIDSENTINEL_DATA_DIR) + "/case14.json")),
        plan_(net::default_plan(grid_)) {}

  MeasurementFn h() const {
    return [this](const VectorXd& x) { return net::eval_h(grid_, plan_, x); };
  }
  JacobianFn jac() const {
    return [this](const VectorXd& x) { return net::eval_jacobian(grid_, plan_, x); };
  }
  VectorXd NearFlat(Rng& rng) const {
    std::uniform_real_distribution<double> ang(-0.25, 0.05);
    std::uniform_real_distribution<double> mag(0.95, 1.08);
    net::GridState s = net::flat_state(grid_);
    for (int i = 0; i < grid_.num_buses(); ++i) {
      s.vm[i] = mag(rng);
      if (i != grid_.reference_index()) s.va[i] = ang(rng);
    }
    return net::to_vector(grid_, s);
  }
  VectorXd Flat() const { return net::to_vector(grid_, net::flat_state(grid_)); }

  net::NetworkCase grid_;
  net::MeasurementPlan plan_;
};

TEST_F(Case14Estimation, NoiselessRoundTrip) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd truth = NearFlat(rng);
    const EstimationResult res = newton_se(h(), jac(), h()(truth), plan_.sigma(), Flat());
    EXPECT_TRUE(res.converged);
    EXPECT_LE(res.iterations, 10);
    EXPECT_LT((res.x_hat - truth).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST_F(Case14Estimation, ObjectiveNonIncreasing) {
  Rng rng(6);
  const VectorXd truth = NearFlat(rng);
  const VectorXd z = h()(truth) + plan_.sigma().cwiseProduct(standard_normal(rng, plan_.size()));
  double previous = residual_stat(z - h()(Flat()), plan_.sigma());
  for (int k = 1; k <= 8; ++k) {
    NewtonOptions opt;
    opt.max_iter = k;
    const EstimationResult res = newton_se(h(), jac(), z, plan_.sigma(), Flat(), opt);
    EXPECT_LE(res.chi2, previous * (1.0 + 1e-12)) << "after " << k << " iterations";
    previous = res.chi2;
  }
}

TEST_F(Case14Estimation, InControlChiSquareMean) {
  Rng rng(7);
  const VectorXd truth = NearFlat(rng);
  const VectorXd clean = h()(truth);
  const int ticks = 500;
  double total = 0.0;
  VectorXd warm = Flat();
  for (int t = 0; t < ticks; ++t) {
    const VectorXd z = clean + plan_.sigma().cwiseProduct(standard_normal(rng, plan_.size()));
    const EstimationResult res = newton_se(h(), jac(), z, plan_.sigma(), warm);
    ASSERT_TRUE(res.converged);
    total += res.chi2;
    warm = res.x_hat;
  }
  const double dof = plan_.size() - grid_.state_dim();
  EXPECT_NEAR(total / ticks / dof, 1.0, 0.10);
}

}  // namespace
}  // namespace estimation
}  // namespace gridsentinel

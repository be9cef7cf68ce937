#include "gridsentinel/sgl.h"

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "gridsentinel/errors.h"
#include "gridsentinel/random.h"

namespace gridsentinel {
namespace sgl {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd RandomMatrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) m.col(j) = standard_normal(rng, rows);
  return m;
}

SglProblem RandomProblem(int rows, const std::vector<int>& sizes, double l1, double l2,
                         Rng& rng) {
  int p = 0;
  for (int s : sizes) p += s;
  SglProblem prob;
  prob.design = RandomMatrix(rows, p, rng);
  prob.response = standard_normal(rng, rows);
  prob.group_sizes = sizes;
  prob.lambda1 = l1;
  prob.lambda2 = l2;
  return prob;
}

// Accelerated proximal gradient. The proximal map of the combined penalty is
// elementwise soft thresholding followed by group-wise norm shrinkage.
VectorXd ProximalOracle(const SglProblem& p, int iterations = 200000) {
  const MatrixXd& x = p.design;
  const double lip =
      2.0 * Eigen::SelfAdjointEigenSolver<MatrixXd>(x.transpose() * x).eigenvalues().maxCoeff();
  const double step = 1.0 / lip;
  auto prox = [&](const VectorXd& v) {
    VectorXd out(v.size());
    for (int k = 0; k < v.size(); ++k) {
      const double mag = std::max(std::abs(v[k]) - step * p.lambda1, 0.0);
      out[k] = v[k] >= 0.0 ? mag : -mag;
    }
    int off = 0;
    for (int s : p.group_sizes) {
      const double w = p.weight_by_group_size ? std::sqrt(double(s)) : 1.0;
      const double nrm = out.segment(off, s).norm();
      const double scale = nrm > 0.0 ? std::max(0.0, 1.0 - step * p.lambda2 * w / nrm) : 0.0;
      out.segment(off, s) *= scale;
      off += s;
    }
    return out;
  };
  VectorXd b = VectorXd::Zero(x.cols());
  VectorXd y = b;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const VectorXd grad = -2.0 * x.transpose() * (p.response - x * y);
    const VectorXd next = prox(y - step * grad);
    const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
    y = next + ((t - 1.0) / t_next) * (next - b);
    const double change = (next - b).lpNorm<Eigen::Infinity>();
    b = next;
    t = t_next;
    if (it > 100 && change < 1e-15) break;
  }
  return b;
}

double DirectObjective(const SglProblem& p, const VectorXd& b) {
  double val = (p.response - p.design * b).squaredNorm();
  int off = 0;
  for (int s : p.group_sizes) {
    const double w = p.weight_by_group_size ? std::sqrt(double(s)) : 1.0;
    val += p.lambda1 * b.segment(off, s).cwiseAbs().sum() + p.lambda2 * w * b.segment(off, s).norm();
    off += s;
  }
  return val;
}

GTEST_TEST(SoftThresholdTest, Examples) {
  EXPECT_EQ(soft_threshold(2.0, 0.5), 1.5);
  EXPECT_EQ(soft_threshold(-0.3, 0.5), 0.0);
  EXPECT_EQ(soft_threshold(0.0, 0.0), 0.0);
  EXPECT_EQ(soft_threshold(-2.0, 0.5), -1.5);
  const VectorXd v = soft_threshold(Eigen::Vector3d(1.0, -0.2, -3.0), 0.5);
  EXPECT_EQ(v, Eigen::Vector3d(0.5, 0.0, -2.5));
}

GTEST_TEST(GroupZeroCheckTest, Trivial) {
  MatrixXd b(3, 2);
  b << 1, 0,
       0, 1,
       0, 0;
  const VectorXd orth = Eigen::Vector3d(0.0, 0.0, 5.0);
  EXPECT_TRUE(group_zero_check(b, orth, 0.0, 0.0));
  EXPECT_TRUE(group_zero_check(b, orth, 1.0, 3.0));
  EXPECT_FALSE(group_zero_check(b, Eigen::Vector3d(0.1, 0.0, 0.0), 0.0, 0.0));
  EXPECT_THROW(group_zero_check(b, VectorXd::Ones(2), 0.0, 0.0), ContractError);
}

GTEST_TEST(GroupZeroCheckTest, AgreesWithGridSearch) {
  Rng rng(21);
  int checked = 0;
  int zeros = 0;
  for (int trial = 0; checked < 24 && trial < 1000; ++trial) {
    const MatrixXd b = RandomMatrix(3, 2, rng);
    const VectorXd r = standard_normal(rng, 3);
    std::uniform_real_distribution<double> pen(0.0, 3.0);
    const double l1 = pen(rng);
    const double l2 = pen(rng);
    const double screen = soft_threshold(VectorXd(2.0 * b.transpose() * r), l1).norm();
    if (std::abs(screen - l2) < 0.3 * std::max(l2, 0.1)) continue;

    // Brute force over a grid that contains the unpenalized optimum.
    const VectorXd ls = b.colPivHouseholderQr().solve(r);
    const double radius = std::min(2.5, ls.lpNorm<Eigen::Infinity>() + 0.1);
    const double step = 1e-3;
    const int half = static_cast<int>(std::ceil(radius / step));
    double best = std::numeric_limits<double>::infinity();
    int best_i = 0, best_j = 0;
    for (int i = -half; i <= half; ++i) {
      for (int j = -half; j <= half; ++j) {
        const Eigen::Vector2d c(i * step, j * step);
        const double f =
            (r - b * c).squaredNorm() + l1 * c.lpNorm<1>() + l2 * c.norm();
        if (f < best) {
          best = f;
          best_i = i;
          best_j = j;
        }
      }
    }
    const bool grid_zero = best_i == 0 && best_j == 0;
    EXPECT_EQ(group_zero_check(b, r, l1, l2), grid_zero) << "trial " << trial;
    zeros += grid_zero ? 1 : 0;
    ++checked;
  }
  EXPECT_EQ(checked, 24);
  EXPECT_GT(zeros, 0);
  EXPECT_LT(zeros, checked);
}

GTEST_TEST(SolveSglTest, ZeroResponse) {
  Rng rng(1);
  SglProblem p = RandomProblem(8, {2, 2}, 0.1, 0.1, rng);
  p.response.setZero();
  const SglSolution s = solve_sgl(p);
  EXPECT_EQ(s.beta, VectorXd::Zero(4));
  EXPECT_EQ(s.objective, 0.0);
  EXPECT_TRUE(s.converged);
}

GTEST_TEST(SolveSglTest, FullShrinkage) {
  Rng rng(2);
  SglProblem p = RandomProblem(10, {3, 2, 1}, 0.0, 0.0, rng);
  double lmax = 0.0;
  int off = 0;
  for (int s : p.group_sizes) {
    lmax = std::max(lmax, 2.0 * (p.design.middleCols(off, s).transpose() * p.response).norm());
    off += s;
  }
  p.lambda1 = 0.0;
  p.lambda2 = lmax;
  SglSolution s = solve_sgl(p);
  EXPECT_EQ(s.beta, VectorXd::Zero(6));
  EXPECT_EQ(kkt_residual(p, s), 0.0);
  p.lambda1 = lmax;
  p.lambda2 = 0.0;
  s = solve_sgl(p);
  EXPECT_EQ(s.beta, VectorXd::Zero(6));
}

GTEST_TEST(SolveSglTest, MatchesProximalOracle) {
  Rng rng(3);
  SglProblem p = RandomProblem(8, {2, 2}, 0.1, 0.1, rng);
  const SglSolution s = solve_sgl(p);
  const VectorXd oracle = ProximalOracle(p);
  EXPECT_NEAR(s.objective, DirectObjective(p, oracle), 1e-6);
  EXPECT_LT((s.beta - oracle).lpNorm<Eigen::Infinity>(), 1e-4);
  EXPECT_LE(s.objective, DirectObjective(p, oracle) + 1e-10);
}

GTEST_TEST(SolveSglTest, OracleAgreementSmallInstances) {
  Rng rng(4);
  const std::vector<std::vector<int>> layouts = {
      {1}, {2}, {1, 1}, {2, 1}, {2, 2}, {3, 3}, {1, 2, 3}, {2, 2, 2}, {4, 2}, {1, 1, 1, 1, 1, 1}};
  std::uniform_real_distribution<double> pen(0.0, 2.0);
  for (int trial = 0; trial < 60; ++trial) {
    const auto& sizes = layouts[trial % layouts.size()];
    SglProblem p = RandomProblem(8, sizes, pen(rng), pen(rng), rng);
    p.weight_by_group_size = trial % 3 == 0;
    const SglSolution s = solve_sgl(p);
    const VectorXd oracle = ProximalOracle(p);
    EXPECT_NEAR(s.objective, DirectObjective(p, oracle), 1e-6) << "trial " << trial;
    EXPECT_LT((s.beta - oracle).lpNorm<Eigen::Infinity>(), 1e-4) << "trial " << trial;
  }
}

GTEST_TEST(SolveSglTest, KktOnRandomInstances) {
  Rng rng(5);
  std::uniform_real_distribution<double> pen(0.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int groups = 1 + trial % 5;
    std::vector<int> sizes;
    for (int g = 0; g < groups; ++g) sizes.push_back(1 + (trial + g) % 4);
    SglProblem p = RandomProblem(30, sizes, pen(rng), pen(rng), rng);
    const SglSolution s = solve_sgl(p);
    EXPECT_TRUE(s.converged);
    EXPECT_LE(s.kkt, 1e-6) << "trial " << trial;
    EXPECT_NEAR(s.objective, DirectObjective(p, s.beta), 1e-10 * std::max(1.0, s.objective));
    EXPECT_NEAR(s.objective, sgl_objective(p, s.beta), 1e-10 * std::max(1.0, s.objective));
  }
}

GTEST_TEST(SolveSglTest, ObjectiveMonotonePerBlock) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    SglProblem p = RandomProblem(20, {2, 3, 2, 1}, 0.3 * trial, 0.2 * trial, rng);
    double previous = p.response.squaredNorm();
    int updates = 0;
    const SglSolution s = solve_sgl(p, nullptr, [&](int, double obj) {
      EXPECT_LE(obj, previous + 1e-12 * std::max(1.0, previous));
      previous = obj;
      ++updates;
    });
    EXPECT_EQ(updates, 4 * s.sweeps);
  }
}

GTEST_TEST(SolveSglTest, ShrinkageMonotoneAlongPath) {
  Rng rng(7);
  // Mutually orthogonal groups decouple, so every group norm is monotone.
  const MatrixXd q = RandomMatrix(12, 6, rng).householderQr().householderQ() *
                     MatrixXd::Identity(12, 6);
  MatrixXd design = q;
  design.middleCols(0, 2) = q.middleCols(0, 2) * RandomMatrix(2, 2, rng);
  design.middleCols(2, 3) = q.middleCols(2, 3) * RandomMatrix(3, 3, rng);
  SglProblem p;
  p.design = design;
  p.response = standard_normal(rng, 12) * 3.0;
  p.group_sizes = {2, 3, 1};
  p.lambda1 = 0.2;
  VectorXd previous = VectorXd::Constant(3, std::numeric_limits<double>::infinity());
  double previous_total = std::numeric_limits<double>::infinity();
  const double top = 2.0 * (p.design.transpose() * p.response).norm();
  for (double l2 = 0.0; l2 <= top + 0.25; l2 += 0.25) {
    p.lambda2 = l2;
    const SglSolution s = solve_sgl(p);
    for (int g = 0; g < 3; ++g) EXPECT_LE(s.group_l2[g], previous[g] + 1e-8) << "lambda2 " << l2;
    previous = s.group_l2;
    previous_total = s.group_l2.sum();
  }
  EXPECT_EQ(previous_total, 0.0);

  // With correlated groups only the total penalized norm is guaranteed monotone.
  SglProblem c = RandomProblem(15, {2, 2, 2}, 0.1, 0.0, rng);
  previous_total = std::numeric_limits<double>::infinity();
  for (double l2 = 0.0; l2 <= 6.0; l2 += 0.25) {
    c.lambda2 = l2;
    const double total = solve_sgl(c).group_l2.sum();
    EXPECT_LE(total, previous_total + 1e-8);
    previous_total = total;
  }
}

GTEST_TEST(SolveSglTest, ZeroPenaltyIsLeastSquares) {
  Rng rng(8);
  const SglProblem p = RandomProblem(20, {3, 2, 4}, 0.0, 0.0, rng);
  const SglSolution s = solve_sgl(p);
  const VectorXd ls = p.design.colPivHouseholderQr().solve(p.response);
  EXPECT_LT((s.beta - ls).lpNorm<Eigen::Infinity>(), 1e-6);
}

GTEST_TEST(SolveSglTest, WarmStartReachesSameSolution) {
  Rng rng(9);
  const SglProblem p = RandomProblem(20, {2, 2, 2}, 0.5, 0.7, rng);
  const SglSolution cold = solve_sgl(p);
  const VectorXd start = VectorXd::Ones(6);
  const SglSolution warm = solve_sgl(p, &start);
  EXPECT_LT((cold.beta - warm.beta).lpNorm<Eigen::Infinity>(), 1e-6);
  const SglSolution again = solve_sgl(p, &cold.beta);
  EXPECT_EQ(again.sweeps, 1);
}

GTEST_TEST(SolveSglTest, SweepBudget) {
  Rng rng(10);
  SglProblem p = RandomProblem(20, {2, 2, 2}, 0.1, 0.1, rng);
  p.max_sweeps = 1;
  const SglSolution s = solve_sgl(p);
  EXPECT_FALSE(s.converged);
  EXPECT_EQ(s.sweeps, 1);
}

GTEST_TEST(SolveSglTest, RejectsInvalidProblems) {
  Rng rng(11);
  SglProblem p = RandomProblem(6, {2, 2}, 0.1, 0.1, rng);
  p.group_sizes = {2, 1};
  EXPECT_THROW(solve_sgl(p), ContractError);
  p.group_sizes = {2, 2};
  p.lambda1 = -1.0;
  EXPECT_THROW(solve_sgl(p), ContractError);
}

GTEST_TEST(KktResidualTest, DetectsSuboptimality) {
  Rng rng(12);
  const SglProblem p = RandomProblem(20, {2, 2, 2}, 0.5, 0.5, rng);
  const SglSolution s = solve_sgl(p);
  EXPECT_LT(kkt_residual(p, s), 1e-6);
  for (int k = 0; k < 6; ++k) {
    VectorXd b = s.beta;
    b[k] += 1e-2;
    EXPECT_GT(kkt_residual(p, b), 1e-3) << "coordinate " << k;
  }
}

}  // namespace
}  // namespace sgl
}  // namespace gridsentinel

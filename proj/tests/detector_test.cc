#include "gridsentinel/detector.h"

#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "gridsentinel/attack.h"
#include "gridsentinel/errors.h"
#include "gridsentinel/random.h"
#include "gridsentinel/simgrid.h"
#include "gridsentinel/simlinear.h"

namespace gridsentinel {
namespace detect {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd RandomMatrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) m.col(j) = standard_normal(rng, rows);
  return m;
}

// 40 sensors, 6 states in three groups of two. Group g drives rows
// 4g..4g+3 strongly and those rows form its mask.
struct Toy {
  MatrixXd H;
  VectorXd sigma;
  std::vector<Candidate> candidates;
};

Toy MakeToy(std::uint64_t seed) {
  Rng rng(seed);
  Toy toy;
  toy.H = 0.3 * RandomMatrix(40, 6, rng);
  toy.sigma = VectorXd::Constant(40, 0.05);
  for (int g = 0; g < 3; ++g) {
    Candidate c;
    c.id = g + 1;
    c.state_indices = {2 * g, 2 * g + 1};
    for (int j = 4 * g; j < 4 * g + 4; ++j) {
      toy.H(j, 2 * g) += 2.0;
      toy.H(j, 2 * g + 1) -= 1.5;
      c.mask.push_back(j);
    }
    toy.candidates.push_back(c);
  }
  return toy;
}

// Accelerated proximal gradient for the sparse group lasso, written
// independently of the library solver.
VectorXd ProximalSgl(const MatrixXd& x, const VectorXd& y, const std::vector<int>& sizes,
                     double l1, double l2, int iterations = 200000) {
  const double lip =
      2.0 * Eigen::SelfAdjointEigenSolver<MatrixXd>(x.transpose() * x).eigenvalues().maxCoeff();
  const double step = 1.0 / lip;
  auto prox = [&](const VectorXd& v) {
    VectorXd out = v;
    for (int k = 0; k < v.size(); ++k) {
      const double mag = std::max(std::abs(v[k]) - step * l1, 0.0);
      out[k] = std::copysign(mag, v[k]);
    }
    int off = 0;
    for (int s : sizes) {
      const double nrm = out.segment(off, s).norm();
      out.segment(off, s) *= nrm > 0.0 ? std::max(0.0, 1.0 - step * l2 / nrm) : 0.0;
      off += s;
    }
    return out;
  };
  VectorXd b = VectorXd::Zero(x.cols());
  VectorXd w = b;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const VectorXd next = prox(w - step * (-2.0 * x.transpose() * (y - x * w)));
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    w = next + ((t - 1.0) / t_next) * (next - b);
    if ((next - b).lpNorm<Eigen::Infinity>() < 1e-15) {
      b = next;
      break;
    }
    b = next;
    t = t_next;
  }
  return b;
}

GTEST_TEST(BuildBasisTest, HandExample) {
  MatrixXd h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  const MatrixXd b = build_basis(h, {0}, {0});
  ASSERT_EQ(b.rows(), 3);
  ASSERT_EQ(b.cols(), 1);
  EXPECT_EQ(b(0, 0), 0.0);
  EXPECT_EQ(b(1, 0), 3.0);
  EXPECT_EQ(b(2, 0), 5.0);
}

GTEST_TEST(BuildBasisTest, FullyMaskedIsUnmonitorable) {
  MatrixXd h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  try {
    build_basis(h, {0, 1, 2}, {1}, 7);
    FAIL() << "expected UnmonitorableBusError";
  } catch (const UnmonitorableBusError& e) {
    EXPECT_EQ(e.bus(), 7);
  }
  EXPECT_THROW(build_basis(h, {3}, {0}), ContractError);
  EXPECT_THROW(build_basis(h, {}, {2}), ContractError);
}

GTEST_TEST(BuildBasisTest, MaskedRowsAreExactlyZero) {
  Rng rng(1);
  const MatrixXd h = RandomMatrix(12, 5, rng);
  const std::vector<int> mask = {0, 3, 4, 11};
  const std::vector<int> s = {1, 4};
  const MatrixXd b = build_basis(h, mask, s);
  for (int j = 0; j < 12; ++j) {
    const bool masked = std::find(mask.begin(), mask.end(), j) != mask.end();
    for (int k = 0; k < 2; ++k) EXPECT_EQ(b(j, k), masked ? 0.0 : h(j, s[k]));
  }
}

class Case14BasisTest : public ::testing::Test {
 protected:
  Case14BasisTest()
      : grid_(net::load_case(std::string(GRIDSENTINEL_DATA_DIR) + "/case14.json")),
        plan_(net::default_plan(grid_)) {}

  net::NetworkCase grid_;
  net::MeasurementPlan plan_;
};

// Rows of B_i that survive are exactly the unmasked sensors whose reading
// moves when bus i's state moves, found here by perturbation.
TEST_F(Case14BasisTest, SurvivingRowsMatchPerturbationPattern) {
  const VectorXd x0 = net::to_vector(grid_, net::flat_state(grid_)) +
                      0.01 * VectorXd::LinSpaced(grid_.state_dim(), -1.0, 1.0);
  const MatrixXd jac = net::eval_jacobian(grid_, plan_, x0);
  const VectorXd h0 = net::eval_h(grid_, plan_, x0);
  for (const Candidate& c : grid_candidates(grid_, plan_, net::NeighborhoodScope::kLocal)) {
    const MatrixXd b = build_basis(jac, c.mask, c.state_indices, c.id);
    std::set<int> moved;
    for (int k : c.state_indices) {
      VectorXd x1 = x0;
      x1[k] += 1e-4;
      const VectorXd h1 = net::eval_h(grid_, plan_, x1);
      for (int j = 0; j < plan_.size(); ++j) {
        if (std::abs(h1[j] - h0[j]) > 1e-9) moved.insert(j);
      }
    }
    for (int j : c.mask) moved.erase(j);
    std::set<int> nonzero;
    for (int j = 0; j < b.rows(); ++j) {
      if (b.row(j).any()) nonzero.insert(j);
    }
    EXPECT_EQ(nonzero, moved) << "bus " << c.id;
    EXPECT_FALSE(nonzero.empty());
  }
}

TEST_F(Case14BasisTest, OneHopMasksLeaveNothingToSee) {
  const auto candidates = grid_candidates(grid_, plan_, net::NeighborhoodScope::kOneHop);
  EXPECT_THROW(GridDetector(grid_, plan_, candidates), UnmonitorableBusError);
}

TEST_F(Case14BasisTest, CandidatesAreTheGeneratorBuses) {
  const auto candidates = grid_candidates(grid_, plan_, net::NeighborhoodScope::kLocal);
  std::vector<int> ids;
  for (const auto& c : candidates) ids.push_back(c.id);
  EXPECT_EQ(ids, (std::vector<int>{2, 3, 6, 8}));
}

GTEST_TEST(LocateTest, ArgmaxAndTies) {
  const std::vector<Candidate> cands = {{8, {}, {}}, {6, {}, {}}, {3, {}, {}}};
  Location loc = locate(Eigen::Vector3d(0.5, 0.7, 0.7), cands);
  EXPECT_EQ(loc.id, 3);
  EXPECT_TRUE(loc.tie);
  loc = locate(Eigen::Vector3d(0.9, 0.7, 0.7), cands);
  EXPECT_EQ(loc.id, 8);
  EXPECT_FALSE(loc.tie);
  loc = locate(VectorXd::Zero(3), cands);
  EXPECT_EQ(loc.id, -1);
  EXPECT_THROW(locate(VectorXd::Zero(2), cands), ContractError);
}

GTEST_TEST(LinearDetectorTest, NoiselessInControlIsSilent) {
  const Toy toy = MakeToy(2);
  DetectorConfig config;
  config.lambda1 = 0.5;
  config.lambda2 = 1.0;
  config.threshold = 0.5;
  const LinearDetector det(toy.H, toy.sigma, toy.candidates, config);
  const VectorXd z = toy.H * VectorXd::LinSpaced(6, -1.0, 2.0);
  const StepResult s = det.step(z);
  for (const auto& b : s.beta) EXPECT_EQ(b.lpNorm<1>(), 0.0);
  EXPECT_EQ(s.statistic, 0.0);
  EXPECT_EQ(s.location, -1);
  EXPECT_FALSE(s.alarm);
  EXPECT_TRUE(s.converged);
}

GTEST_TEST(LinearDetectorTest, RecoversConstructedAttack) {
  const Toy toy = MakeToy(3);
  DetectorConfig config;
  config.lambda1 = 0.5;
  config.lambda2 = 1.0;
  const LinearDetector det(toy.H, toy.sigma, toy.candidates, config);
  const VectorXd beta = Eigen::Vector2d(1.2, -0.8);
  const MatrixXd b2 = build_basis(toy.H, toy.candidates[1].mask, toy.candidates[1].state_indices);
  const VectorXd z = toy.H * VectorXd::LinSpaced(6, 0.5, 1.5) + b2 * beta;
  const StepResult s = det.step(z);
  EXPECT_EQ(s.location, 2);
  EXPECT_NEAR(s.beta[1].lpNorm<1>(), beta.lpNorm<1>(), 0.05 * beta.lpNorm<1>());
  EXPECT_LT(s.beta[0].lpNorm<1>(), 0.05 * beta.lpNorm<1>());
  EXPECT_LT(s.beta[2].lpNorm<1>(), 0.05 * beta.lpNorm<1>());
}

GTEST_TEST(LinearDetectorTest, ExplainedResidualIdentity) {
  const Toy toy = MakeToy(4);
  Rng rng(40);
  DetectorConfig config;
  config.lambda1 = 0.2;
  config.lambda2 = 0.4;
  const LinearDetector det(toy.H, toy.sigma, toy.candidates, config);
  const VectorXd z = toy.H * standard_normal(rng, 6) +
                     toy.sigma.cwiseProduct(standard_normal(rng, 40)) +
                     det.bases()[0] * Eigen::Vector2d(0.3, 0.1);
  const StepResult s = det.step(z);
  VectorXd rebuilt = s.z_corrected;
  for (std::size_t g = 0; g < s.beta.size(); ++g) rebuilt += det.bases()[g] * s.beta[g];
  EXPECT_LT((rebuilt - z).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(s.residual, z - toy.H * s.x_hat);
}

// The alternating loop's limit equals the sparse group lasso on the bases
// projected onto the residual space of the estimator. Checked three ways:
// the plain loop from beta = 0, the seeded loop, and the projected problem
// solved by an independent proximal-gradient oracle.
GTEST_TEST(LinearDetectorTest, AlternatingLimitMatchesProjectedProblem) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const Toy toy = MakeToy(seed);
    Rng rng(seed + 100);
    const VectorXd z = toy.H * standard_normal(rng, 6) +
                       toy.sigma.cwiseProduct(standard_normal(rng, 40)) +
                       build_basis(toy.H, toy.candidates[seed % 3].mask,
                                   toy.candidates[seed % 3].state_indices) *
                           Eigen::Vector2d(0.2, 0.1);
    DetectorConfig config;
    config.lambda1 = 1.0;
    config.lambda2 = 2.0;
    config.tol = 1e-13;
    config.max_iter = 20000;
    config.sgl_tol = 1e-13;
    config.seed_fixed_point = false;
    const StepResult plain = LinearDetector(toy.H, toy.sigma, toy.candidates, config).step(z);
    ASSERT_TRUE(plain.converged);
    config.seed_fixed_point = true;
    const StepResult seeded = LinearDetector(toy.H, toy.sigma, toy.candidates, config).step(z);
    EXPECT_LE(seeded.iterations, 2);

    const VectorXd w = toy.sigma.cwiseInverse();
    const MatrixXd hw = w.asDiagonal() * toy.H;
    const MatrixXd q = MatrixXd::Identity(40, 40) -
                       hw * (hw.transpose() * hw).ldlt().solve(hw.transpose());
    MatrixXd bw(40, 6);
    for (int g = 0; g < 3; ++g) {
      bw.middleCols(2 * g, 2) =
          w.asDiagonal() *
          build_basis(toy.H, toy.candidates[g].mask, toy.candidates[g].state_indices);
    }
    const VectorXd oracle =
        ProximalSgl(q * bw, q * z.cwiseProduct(w), {2, 2, 2}, config.lambda1, config.lambda2);
    for (int g = 0; g < 3; ++g) {
      EXPECT_LT((plain.beta[g] - oracle.segment(2 * g, 2)).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_LT((seeded.beta[g] - oracle.segment(2 * g, 2)).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

GTEST_TEST(LinearDetectorTest, OuterBudgetIsReported) {
  const Toy toy = MakeToy(5);
  Rng rng(50);
  DetectorConfig config;
  config.lambda1 = 0.01;
  config.lambda2 = 0.02;
  config.max_iter = 1;
  config.seed_fixed_point = false;
  const LinearDetector det(toy.H, toy.sigma, toy.candidates, config);
  const VectorXd z = toy.H * standard_normal(rng, 6) + standard_normal(rng, 40);
  const StepResult s = det.step(z);
  EXPECT_EQ(s.iterations, 1);
  EXPECT_FALSE(s.converged);
  EXPECT_GE(s.statistic, 0.0);
}

GTEST_TEST(LinearDetectorTest, RejectsBadConfig) {
  const Toy toy = MakeToy(6);
  DetectorConfig config;
  config.tol = 0.0;
  EXPECT_THROW(LinearDetector(toy.H, toy.sigma, toy.candidates, config), ContractError);
  config = {};
  config.lambda1 = -1.0;
  EXPECT_THROW(LinearDetector(toy.H, toy.sigma, toy.candidates, config), ContractError);
  EXPECT_THROW(LinearDetector(toy.H, toy.sigma, {}, DetectorConfig{}), ContractError);
}

GTEST_TEST(QuantileTest, TypeSeven) {
  EXPECT_DOUBLE_EQ(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(empirical_quantile({4.0, 1.0, 3.0, 2.0}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(empirical_quantile({7.0}, 0.3), 7.0);
  EXPECT_THROW(empirical_quantile({}, 0.5), ContractError);
}

GTEST_TEST(SetThresholdTest, MedianAtHalfAlpha) {
  std::vector<double> raw;
  for (int k = 1; k <= 1001; ++k) raw.push_back(k);
  DetectorConfig config;
  config.alpha = 0.5;
  set_threshold(config, raw);
  EXPECT_DOUBLE_EQ(config.normalization, 501.0);
  EXPECT_DOUBLE_EQ(config.threshold, 1.0);
}

GTEST_TEST(SetThresholdTest, DegenerateAndShortStreams) {
  DetectorConfig config;
  EXPECT_THROW(set_threshold(config, std::vector<double>(499, 1.0)), CalibrationError);
  EXPECT_THROW(set_threshold(config, std::vector<double>(1000, 0.0)), CalibrationError);
  std::vector<double> mostly_zero(1000, 0.0);
  mostly_zero[0] = 1.0;
  EXPECT_THROW(set_threshold(config, mostly_zero), CalibrationError);
}

GTEST_TEST(SetPenaltiesTest, ScalesWithMedian) {
  DetectorConfig config;
  set_penalties(config, {1.0, 10.0, 4.0});
  EXPECT_DOUBLE_EQ(config.lambda2, 0.4);
  EXPECT_DOUBLE_EQ(config.lambda1, 0.2);
  set_penalties(config, {1.0, 10.0, 4.0}, PenaltyRule{0.5, 2.0});
  EXPECT_DOUBLE_EQ(config.lambda2, 2.0);
  EXPECT_DOUBLE_EQ(config.lambda1, 4.0);
}

class LinearCalibrationTest : public ::testing::Test {
 protected:
  LinearCalibrationTest() {
    linear::LinearSystemOptions options;
    options.measurement_noise_sd = 0.002;
    sys_ = linear::gen_random_system(options, 1);
    candidates_ = linear_candidates(sys_.H, sys_.groups);
  }

  std::vector<VectorXd> Stream(int ticks, std::uint64_t seed) const {
    Rng rng(seed);
    const estimation::WlsSolver wls(sys_.H, sys_.sensor_sd);
    VectorXd x = VectorXd::Zero(sys_.n());
    std::vector<VectorXd> out;
    for (int t = 0; t < ticks; ++t) {
      out.push_back(linear::measure(sys_, x, rng));
      x = linear::step(sys_, x, wls.solve(out.back()), rng);
    }
    return out;
  }

  linear::LinearSystem sys_;
  std::vector<Candidate> candidates_;
};

TEST_F(LinearCalibrationTest, DeterministicAndPositive) {
  const auto stream = Stream(600, 7);
  LinearDetector a(sys_.H, sys_.sensor_sd, candidates_);
  LinearDetector b(sys_.H, sys_.sensor_sd, candidates_);
  const CalibrationReport ra = calibrate(a, stream);
  const CalibrationReport rb = calibrate(b, stream);
  EXPECT_EQ(ra.config.lambda1, rb.config.lambda1);
  EXPECT_EQ(ra.config.lambda2, rb.config.lambda2);
  EXPECT_EQ(ra.config.threshold, rb.config.threshold);
  EXPECT_EQ(ra.config.normalization, rb.config.normalization);
  EXPECT_GT(ra.config.threshold, 0.0);
  EXPECT_DOUBLE_EQ(ra.config.lambda1, 0.5 * ra.config.lambda2);
  EXPECT_DOUBLE_EQ(ra.config.lambda2, 0.1 * ra.lambda_max_median);
  EXPECT_EQ(a.config().threshold, ra.config.threshold);
  EXPECT_EQ(ra.ticks, 600);
}

TEST_F(LinearCalibrationTest, HugePenaltiesAreDegenerate) {
  const auto stream = Stream(600, 8);
  LinearDetector det(sys_.H, sys_.sensor_sd, candidates_);
  EXPECT_THROW(calibrate(det, stream, PenaltyRule{100.0, 1.0}), CalibrationError);
}

// Held-out alarm frequency within three binomial standard errors of alpha.
TEST_F(LinearCalibrationTest, HeldOutAlarmRate) {
  DetectorConfig config;
  config.alpha = 0.05;
  LinearDetector det(sys_.H, sys_.sensor_sd, candidates_, config);
  calibrate(det, Stream(5000, 9));
  const auto held_out = Stream(5000, 10);
  int alarms = 0;
  for (const auto& z : held_out) alarms += det.step(z).alarm ? 1 : 0;
  const double rate = alarms / 5000.0;
  const double se = std::sqrt(0.05 * 0.95 / 5000.0);
  EXPECT_NEAR(rate, 0.05, 3.0 * se);
}

TEST_F(LinearCalibrationTest, MonitorRunLengthAndCensoring) {
  LinearDetector det(sys_.H, sys_.sensor_sd, candidates_);
  calibrate(det, Stream(600, 11));
  const auto stream = Stream(50, 12);

  DetectorConfig never = det.config();
  never.threshold = 1e300;
  det.set_config(never);
  DetectionOutcome out = monitor(det, stream, 11);
  EXPECT_TRUE(out.censored);
  EXPECT_FALSE(out.alarm_tick.has_value());
  EXPECT_EQ(out.run_length, 40);
  ASSERT_EQ(out.ticks.size(), 40u);
  EXPECT_EQ(out.ticks.front().t, 11);
  EXPECT_EQ(out.ticks.back().t, 50);

  DetectorConfig always = never;
  always.threshold = -1.0;
  det.set_config(always);
  out = monitor(det, stream, 11);
  ASSERT_TRUE(out.alarm_tick.has_value());
  EXPECT_EQ(*out.alarm_tick, 11);
  EXPECT_EQ(out.run_length, 1);
  EXPECT_FALSE(out.censored);
  EXPECT_EQ(out.ticks.size(), 1u);
  EXPECT_EQ(out.location, out.ticks.front().location);

  out = monitor(det, stream, 11, false);
  EXPECT_EQ(out.ticks.size(), 40u);
  EXPECT_EQ(out.run_length, 1);
  EXPECT_THROW(monitor(det, stream, 0), ContractError);
  EXPECT_THROW(monitor(det, stream, 51), ContractError);
}

GTEST_TEST(TickCsvTest, Format) {
  std::ostringstream out;
  write_tick_csv(out, {{1, 0.5, 2.0, false, 3, 1, true}, {2, 2.5, 2.0, true, 6, 4, false}});
  EXPECT_EQ(out.str(),
            "t,stat,threshold,alarm,location,iterations,converged\n"
            "1,0.5,2,0,3,1,1\n"
            "2,2.5,2,1,6,4,0\n");
}

class GridDetectorTest : public ::testing::Test {
 protected:
  GridDetectorTest()
      : grid_(net::load_case(std::string(GRIDSENTINEL_DATA_DIR) + "/case14.json")),
        plan_(net::default_plan(grid_)),
        candidates_(grid_candidates(grid_, plan_, net::NeighborhoodScope::kLocal)) {}

  grid::Stream Simulate(int ticks, std::uint64_t seed, const grid::StreamAttack* attack) const {
    const auto loads = grid::synth_loads(grid_, ticks, seed);
    return grid::simulate_stream(grid_, plan_, loads, grid::dispatch(loads, grid_), attack,
                                 seed + 1);
  }

  grid::StreamAttack LevelFive(int bus, int onset) const {
    grid::StreamAttack a;
    a.spec.target = bus;
    a.spec.onset = onset;
    a.spec.magnitude = attack::Magnitude::kLevel;
    a.spec.level = 5;
    for (const auto& c : candidates_) {
      if (c.id == bus) a.mask = c.mask;
    }
    return a;
  }

  net::NetworkCase grid_;
  net::MeasurementPlan plan_;
  std::vector<Candidate> candidates_;
};

TEST_F(GridDetectorTest, NoiselessTickIsSilent) {
  DetectorConfig config;
  config.lambda1 = 1.0;
  config.lambda2 = 2.0;
  config.threshold = 1.0;
  const GridDetector det(grid_, plan_, candidates_, config);
  const auto loads = grid::synth_loads(grid_, 3, 1);
  const auto plan = grid::dispatch(loads, grid_);
  const auto pf = grid::solve_powerflow(grid_, grid::schedule_at(grid_, loads, plan, 2));
  const VectorXd x = net::to_vector(grid_, pf.state);
  const StepResult s = det.step(net::eval_h(grid_, plan_, x), net::to_vector(grid_, net::flat_state(grid_)));
  EXPECT_EQ(s.raw_statistic, 0.0);
  EXPECT_FALSE(s.alarm);
  EXPECT_LT((s.x_hat - x).cwiseAbs().maxCoeff(), 1e-8);
}

TEST_F(GridDetectorTest, LevelFiveAttacksAreLocated) {
  GridDetector det(grid_, plan_, candidates_);
  const auto in_control = Simulate(600, 100, nullptr);
  const CalibrationReport report = calibrate(det, in_control.z);
  EXPECT_GT(report.config.threshold, 0.0);
  for (int bus : {3, 6}) {
    const grid::StreamAttack a = LevelFive(bus, 50);
    const auto stream = Simulate(60, 200 + bus, &a);
    const DetectionOutcome out =
        monitor(det, stream.z, net::to_vector(grid_, net::flat_state(grid_)), 50, false);
    int located = 0;
    for (const auto& t : out.ticks) located += t.location == bus ? 1 : 0;
    ASSERT_TRUE(out.alarm_tick.has_value()) << "bus " << bus;
    EXPECT_EQ(out.location, bus);
    EXPECT_GE(located, 9) << "bus " << bus;
  }
}

}  // namespace
}  // namespace detect
}  // namespace gridsentinel

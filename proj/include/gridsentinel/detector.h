#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gridsentinel/estimator.h"
#include "gridsentinel/netmodel.h"
#include "gridsentinel/sgl.h"

namespace gridsentinel::detect {

/// B_i: columns `state_indices` of H with the rows in `mask` zeroed. Throws
/// UnmonitorableBusError (tagged with `id`) when no nonzero row survives.
Eigen::MatrixXd build_basis(const Eigen::MatrixXd& H, const std::vector<int>& mask,
                            const std::vector<int>& state_indices, int id = -1);

/// One localization target: a generator bus (grid) or state group (linear).
struct Candidate {
  int id = 0;
  std::vector<int> state_indices;  // S_i
  std::vector<int> mask;           // M_i
};

struct DetectorConfig {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double threshold = 0.0;      // alarm when the normalized statistic exceeds it
  double normalization = 1.0;  // in-control mean of max_i ||beta_i||_1
  double tol = 1e-6;           // outer loop, on ||x_new - x_old||_inf
  int max_iter = 50;
  double alpha = 0.005;
  bool weight_by_group_size = false;
  double sgl_tol = 1e-8;
  int sgl_max_sweeps = 10000;
  // Start the alternating loop from SGL on the bases projected onto the
  // residual space of the (linearized) estimator, which is the loop's
  // fixed point. Off: start from beta = 0.
  bool seed_fixed_point = true;
};

struct StepResult {
  Eigen::VectorXd x_hat;
  Eigen::VectorXd residual;           // z - h(x_hat), on the original z
  Eigen::VectorXd z_corrected;        // z - sum_i B_i beta_i
  std::vector<Eigen::VectorXd> beta;  // per candidate, in candidate order
  Eigen::VectorXd group_l1;
  double raw_statistic = 0.0;         // max_i ||beta_i||_1
  double statistic = 0.0;             // raw / normalization
  int location = -1;                  // candidate id of the argmax, -1 if all zero
  bool tie = false;                   // argmax shared by several candidates
  bool alarm = false;
  int iterations = 0;
  bool converged = false;
  bool estimate_converged = true;     // every state estimate converged
};

/// Constrained SGL detector for z = H x + v. The SGL runs on residuals and
/// bases whitened by the sensor standard deviations.
class LinearDetector {
 public:
  LinearDetector(Eigen::MatrixXd H, Eigen::VectorXd sigma, std::vector<Candidate> candidates,
                 DetectorConfig config = {});

  StepResult step(const Eigen::VectorXd& z) const;

  /// max_i ||B_i^T r||_2 for the whitened residual of a plain WLS fit.
  double lambda_max(const Eigen::VectorXd& z) const;

  const DetectorConfig& config() const { return config_; }
  void set_config(const DetectorConfig& config);
  const std::vector<Candidate>& candidates() const { return candidates_; }
  const std::vector<Eigen::MatrixXd>& bases() const { return bases_; }
  const estimation::WlsSolver& estimator() const { return wls_; }

 private:
  void build_solvers();

  Eigen::MatrixXd h_;
  Eigen::VectorXd sigma_;
  Eigen::VectorXd inv_sigma_;
  std::vector<Candidate> candidates_;
  DetectorConfig config_;
  std::vector<Eigen::MatrixXd> bases_;
  estimation::WlsSolver wls_;
  std::unique_ptr<sgl::SglSolver> solver_;
  Eigen::MatrixXd projector_;  // whitened residual projector I - H (H^T H)^-1 H^T
  std::unique_ptr<sgl::SglSolver> projected_solver_;
};

/// Nonlinear variant: Newton state estimation and bases rebuilt from the
/// Jacobian at every outer iteration.
class GridDetector {
 public:
  GridDetector(const net::NetworkCase& grid, const net::MeasurementPlan& plan,
               std::vector<Candidate> candidates, DetectorConfig config = {});

  /// `x_warm` seeds the state estimate (the previous tick's estimate).
  StepResult step(const Eigen::VectorXd& z, const Eigen::VectorXd& x_warm) const;

  double lambda_max(const Eigen::VectorXd& z, const Eigen::VectorXd& x_warm) const;

  const DetectorConfig& config() const { return config_; }
  void set_config(const DetectorConfig& config);
  const std::vector<Candidate>& candidates() const { return candidates_; }
  const net::NetworkCase& grid() const { return grid_; }
  const net::MeasurementPlan& plan() const { return plan_; }

  estimation::EstimationResult estimate(const Eigen::VectorXd& z,
                                        const Eigen::VectorXd& x_warm) const;

 private:
  const net::NetworkCase& grid_;
  const net::MeasurementPlan& plan_;
  std::vector<Candidate> candidates_;
  DetectorConfig config_;
  Eigen::VectorXd inv_sigma_;
};

/// Candidate id with the largest group value, ties to the lowest id; -1 when
/// every value is zero.
struct Location {
  int id = -1;
  bool tie = false;
};
Location locate(const Eigen::VectorXd& group_values, const std::vector<Candidate>& candidates);

/// Candidates for every generator-typed bus with masks from `scope`.
std::vector<Candidate> grid_candidates(const net::NetworkCase& grid,
                                       const net::MeasurementPlan& plan,
                                       net::NeighborhoodScope scope);

/// Candidates for the linear testbed groups with masks from `connectivity`.
std::vector<Candidate> linear_candidates(const Eigen::MatrixXd& H,
                                         const std::vector<std::vector<int>>& groups,
                                         double threshold = 0.5);

/// Linear-interpolation (type 7) sample quantile.
double empirical_quantile(std::vector<double> values, double q);

/// Penalties from in-control lambda_max values: lambda2 = fraction * median,
/// lambda1 = ratio * lambda2.
struct PenaltyRule {
  double fraction = 0.1;
  double ratio = 0.5;
};
void set_penalties(DetectorConfig& config, const std::vector<double>& lambda_max_values,
                   const PenaltyRule& rule = {});

/// Normalization = mean raw statistic; threshold = (1 - alpha) quantile of
/// the normalized statistics. Throws CalibrationError on fewer than
/// `min_ticks` values or a degenerate statistic.
void set_threshold(DetectorConfig& config, const std::vector<double>& raw_statistics,
                   int min_ticks = 500);

struct CalibrationReport {
  DetectorConfig config;
  int ticks = 0;
  double lambda_max_median = 0.0;
  double zero_fraction = 0.0;      // in-control ticks with every beta_i = 0
  double mean_active_groups = 0.0;
};

CalibrationReport calibrate(LinearDetector& detector, const std::vector<Eigen::VectorXd>& stream,
                            const PenaltyRule& rule = {});
CalibrationReport calibrate(GridDetector& detector, const std::vector<Eigen::VectorXd>& stream,
                            const PenaltyRule& rule = {});

struct TickRecord {
  int t = 0;
  double statistic = 0.0;
  double threshold = 0.0;
  bool alarm = false;
  int location = -1;
  int iterations = 0;
  bool converged = false;
};

struct DetectionOutcome {
  std::optional<int> alarm_tick;
  int location = -1;
  int run_length = 0;       // ticks from `start` through the alarm (or stream end)
  bool censored = false;    // no alarm before the stream ended
  bool tie = false;         // the alarm's argmax was shared
  int tied_ticks = 0;       // monitored ticks whose argmax was shared
  std::vector<TickRecord> ticks;
};

/// Monitors ticks start..stream.size() (1-based) and stops at the first
/// alarm unless `stop_at_alarm` is false.
DetectionOutcome monitor(const LinearDetector& detector, const std::vector<Eigen::VectorXd>& stream,
                         int start = 1, bool stop_at_alarm = true);
DetectionOutcome monitor(const GridDetector& detector, const std::vector<Eigen::VectorXd>& stream,
                         const Eigen::VectorXd& x_init, int start = 1, bool stop_at_alarm = true);

/// CSV `t,stat,threshold,alarm,location,iterations,converged`.
void write_tick_csv(std::ostream& out, const std::vector<TickRecord>& ticks);

}  // namespace gridsentinel::detect

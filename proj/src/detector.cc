#include "gridsentinel/detector.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "gridsentinel/errors.h"
#include "gridsentinel/simlinear.h"

namespace gridsentinel::detect {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd build_basis(const MatrixXd& H, const std::vector<int>& mask,
                     const std::vector<int>& state_indices, int id) {
  const int m = static_cast<int>(H.rows());
  MatrixXd basis(m, static_cast<int>(state_indices.size()));
  for (std::size_t k = 0; k < state_indices.size(); ++k) {
    const int c = state_indices[k];
    if (c < 0 || c >= H.cols()) throw ContractError("build_basis: state index out of range");
    basis.col(static_cast<int>(k)) = H.col(c);
  }
  for (int j : mask) {
    if (j < 0 || j >= m) throw ContractError("build_basis: mask index out of range");
    basis.row(j).setZero();
  }
  if (basis.size() == 0 || (basis.array() == 0.0).all()) {
    throw UnmonitorableBusError(
        "bus " + std::to_string(id) + " is unmonitorable: every row of its basis is masked",
        id);
  }
  return basis;
}

namespace {

std::vector<int> group_sizes(const std::vector<Candidate>& candidates) {
  std::vector<int> sizes;
  for (const auto& c : candidates) sizes.push_back(static_cast<int>(c.state_indices.size()));
  return sizes;
}

MatrixXd stack_bases(const std::vector<MatrixXd>& bases) {
  int cols = 0;
  for (const auto& b : bases) cols += static_cast<int>(b.cols());
  MatrixXd out(bases.empty() ? 0 : bases.front().rows(), cols);
  int offset = 0;
  for (const auto& b : bases) {
    out.middleCols(offset, b.cols()) = b;
    offset += static_cast<int>(b.cols());
  }
  return out;
}

std::vector<MatrixXd> make_bases(const MatrixXd& H, const std::vector<Candidate>& candidates) {
  std::vector<MatrixXd> bases;
  for (const auto& c : candidates) bases.push_back(build_basis(H, c.mask, c.state_indices, c.id));
  return bases;
}

double max_group_norm(const MatrixXd& design, const std::vector<int>& sizes,
                      const VectorXd& response) {
  const VectorXd g = design.transpose() * response;
  double best = 0.0;
  int offset = 0;
  for (int s : sizes) {
    best = std::max(best, g.segment(offset, s).norm());
    offset += s;
  }
  return best;
}

// Fills the per-group summaries, argmax and alarm from a stacked beta.
void summarize(const std::vector<Candidate>& candidates, const VectorXd& beta,
               const DetectorConfig& config, StepResult& out) {
  const int groups = static_cast<int>(candidates.size());
  out.beta.clear();
  out.group_l1.resize(groups);
  int offset = 0;
  for (int g = 0; g < groups; ++g) {
    const int s = static_cast<int>(candidates[g].state_indices.size());
    out.beta.push_back(beta.segment(offset, s));
    out.group_l1[g] = out.beta.back().lpNorm<1>();
    offset += s;
  }
  out.raw_statistic = groups > 0 ? out.group_l1.maxCoeff() : 0.0;
  out.statistic = out.raw_statistic / config.normalization;
  const Location where = locate(out.group_l1, candidates);
  out.location = where.id;
  out.tie = where.tie;
  out.alarm = out.statistic > config.threshold;
}

MatrixXd residual_projector(const MatrixXd& weighted_h) {
  const Eigen::HouseholderQR<MatrixXd> qr(weighted_h);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(weighted_h.rows(), weighted_h.cols());
  return MatrixXd::Identity(weighted_h.rows(), weighted_h.rows()) - q * q.transpose();
}

void check_config(const DetectorConfig& config) {
  if (config.lambda1 < 0.0 || config.lambda2 < 0.0) {
    throw ContractError("detector: penalties must be non-negative");
  }
  if (!(config.tol > 0.0) || config.max_iter < 1) {
    throw ContractError("detector: tol must be positive and max_iter >= 1");
  }
  if (!(config.normalization > 0.0)) throw ContractError("detector: normalization must be positive");
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
    throw ContractError("detector: alpha must lie in (0, 1)");
  }
}

}  // namespace

LinearDetector::LinearDetector(MatrixXd H, VectorXd sigma, std::vector<Candidate> candidates,
                               DetectorConfig config)
    : h_(std::move(H)),
      sigma_(std::move(sigma)),
      inv_sigma_(sigma_.cwiseInverse()),
      candidates_(std::move(candidates)),
      config_(config),
      bases_(make_bases(h_, candidates_)),
      wls_(h_, sigma_) {
  if (candidates_.empty()) throw ContractError("LinearDetector: no candidates");
  check_config(config_);
  build_solvers();
}

void LinearDetector::build_solvers() {
  const MatrixXd design = inv_sigma_.asDiagonal() * stack_bases(bases_);
  projector_ = residual_projector(inv_sigma_.asDiagonal() * h_);
  solver_ = std::make_unique<sgl::SglSolver>(design, group_sizes(candidates_),
                                             config_.weight_by_group_size);
  projected_solver_ = std::make_unique<sgl::SglSolver>(
      projector_ * design, group_sizes(candidates_), config_.weight_by_group_size);
}

void LinearDetector::set_config(const DetectorConfig& config) {
  check_config(config);
  const bool reweight = config.weight_by_group_size != config_.weight_by_group_size;
  config_ = config;
  if (reweight) build_solvers();
}

double LinearDetector::lambda_max(const VectorXd& z) const {
  const VectorXd r = z - h_ * wls_.solve(z);
  return max_group_norm(solver_->design(), solver_->group_sizes(), r.cwiseProduct(inv_sigma_));
}

StepResult LinearDetector::step(const VectorXd& z) const {
  if (z.size() != h_.rows()) throw ContractError("LinearDetector: z has wrong length");
  const MatrixXd& design = solver_->design();
  StepResult out;
  VectorXd beta = VectorXd::Zero(design.cols());
  if (config_.seed_fixed_point) {
    beta = projected_solver_
               ->solve(projector_ * z.cwiseProduct(inv_sigma_), config_.lambda1,
                       config_.lambda2, nullptr, config_.sgl_tol, config_.sgl_max_sweeps)
               .beta;
  }
  VectorXd z_c = z - sigma_.asDiagonal() * (design * beta);
  VectorXd x_hat = wls_.solve(z_c);
  for (int it = 1; it <= config_.max_iter; ++it) {
    const VectorXd r = z - h_ * x_hat;
    const sgl::SglSolution sol =
        solver_->solve(r.cwiseProduct(inv_sigma_), config_.lambda1, config_.lambda2, &beta,
                       config_.sgl_tol, config_.sgl_max_sweeps);
    beta = sol.beta;
    z_c = z - sigma_.asDiagonal() * (design * beta);
    const VectorXd x_new = wls_.solve(z_c);
    const double change = (x_new - x_hat).lpNorm<Eigen::Infinity>();
    x_hat = x_new;
    out.iterations = it;
    if (change < config_.tol) {
      out.converged = true;
      break;
    }
  }
  out.x_hat = x_hat;
  out.residual = z - h_ * x_hat;
  out.z_corrected = z_c;
  summarize(candidates_, beta, config_, out);
  return out;
}

GridDetector::GridDetector(const net::NetworkCase& grid, const net::MeasurementPlan& plan,
                           std::vector<Candidate> candidates, DetectorConfig config)
    : grid_(grid),
      plan_(plan),
      candidates_(std::move(candidates)),
      config_(config),
      inv_sigma_(plan.sigma().cwiseInverse()) {
  if (candidates_.empty()) throw ContractError("GridDetector: no candidates");
  check_config(config_);
  // Validates the masks against the flat-start Jacobian.
  make_bases(net::eval_jacobian(grid_, plan_, net::to_vector(grid_, net::flat_state(grid_))),
             candidates_);
}

void GridDetector::set_config(const DetectorConfig& config) {
  check_config(config);
  config_ = config;
}

estimation::EstimationResult GridDetector::estimate(const VectorXd& z,
                                                    const VectorXd& x_warm) const {
  const auto h = [this](const VectorXd& x) { return net::eval_h(grid_, plan_, x); };
  const auto jac = [this](const VectorXd& x) { return net::eval_jacobian(grid_, plan_, x); };
  return estimation::newton_se(h, jac, z, plan_.sigma(), x_warm);
}

double GridDetector::lambda_max(const VectorXd& z, const VectorXd& x_warm) const {
  const estimation::EstimationResult se = estimate(z, x_warm);
  const MatrixXd J = net::eval_jacobian(grid_, plan_, se.x_hat);
  const MatrixXd design = inv_sigma_.asDiagonal() * stack_bases(make_bases(J, candidates_));
  return max_group_norm(design, group_sizes(candidates_), se.residual.cwiseProduct(inv_sigma_));
}

StepResult GridDetector::step(const VectorXd& z, const VectorXd& x_warm) const {
  if (z.size() != plan_.size()) throw ContractError("GridDetector: z has wrong length");
  StepResult out;
  estimation::EstimationResult se = estimate(z, x_warm);
  out.estimate_converged = se.converged;
  VectorXd x_hat = se.x_hat;
  const std::vector<int> sizes = group_sizes(candidates_);
  int total = std::accumulate(sizes.begin(), sizes.end(), 0);
  VectorXd beta = VectorXd::Zero(total);
  VectorXd z_c = z;
  if (config_.seed_fixed_point) {
    const MatrixXd J = net::eval_jacobian(grid_, plan_, x_hat);
    const MatrixXd projector = residual_projector(inv_sigma_.asDiagonal() * J);
    const MatrixXd design = inv_sigma_.asDiagonal() * stack_bases(make_bases(J, candidates_));
    const sgl::SglSolver solver(projector * design, sizes, config_.weight_by_group_size);
    beta = solver
               .solve(projector * se.residual.cwiseProduct(inv_sigma_), config_.lambda1,
                      config_.lambda2, nullptr, config_.sgl_tol, config_.sgl_max_sweeps)
               .beta;
    if (beta.any()) {
      z_c = z - plan_.sigma().asDiagonal() * (design * beta);
      se = estimate(z_c, x_hat);
      out.estimate_converged = out.estimate_converged && se.converged;
      x_hat = se.x_hat;
    }
  }
  for (int it = 1; it <= config_.max_iter; ++it) {
    const MatrixXd J = net::eval_jacobian(grid_, plan_, x_hat);
    const MatrixXd design = inv_sigma_.asDiagonal() * stack_bases(make_bases(J, candidates_));
    const sgl::SglSolver solver(design, sizes, config_.weight_by_group_size);
    const VectorXd r = z - net::eval_h(grid_, plan_, x_hat);
    beta = solver
               .solve(r.cwiseProduct(inv_sigma_), config_.lambda1, config_.lambda2, &beta,
                      config_.sgl_tol, config_.sgl_max_sweeps)
               .beta;
    z_c = z - plan_.sigma().asDiagonal() * (design * beta);
    se = estimate(z_c, x_hat);
    out.estimate_converged = out.estimate_converged && se.converged;
    const double change = (se.x_hat - x_hat).lpNorm<Eigen::Infinity>();
    x_hat = se.x_hat;
    out.iterations = it;
    if (change < config_.tol) {
      out.converged = true;
      break;
    }
  }
  out.x_hat = x_hat;
  out.residual = z - net::eval_h(grid_, plan_, x_hat);
  out.z_corrected = z_c;
  summarize(candidates_, beta, config_, out);
  return out;
}

Location locate(const VectorXd& group_values, const std::vector<Candidate>& candidates) {
  if (group_values.size() != static_cast<long>(candidates.size())) {
    throw ContractError("locate: one value per candidate is required");
  }
  Location out;
  if (group_values.size() == 0) return out;
  const double best = group_values.maxCoeff();
  if (!(best > 0.0)) return out;
  int count = 0;
  for (int g = 0; g < group_values.size(); ++g) {
    if (group_values[g] != best) continue;
    ++count;
    if (out.id < 0 || candidates[g].id < out.id) out.id = candidates[g].id;
  }
  out.tie = count > 1;
  return out;
}

std::vector<Candidate> grid_candidates(const net::NetworkCase& grid,
                                       const net::MeasurementPlan& plan,
                                       net::NeighborhoodScope scope) {
  std::vector<Candidate> out;
  for (const auto& [id, mask] : net::neighborhood_sets(grid, plan, scope)) {
    out.push_back({id, grid.state_indices(grid.index_of(id)), mask});
  }
  return out;
}

std::vector<Candidate> linear_candidates(const MatrixXd& H,
                                         const std::vector<std::vector<int>>& groups,
                                         double threshold) {
  const auto masks = linear::connectivity(H, groups, threshold);
  std::vector<Candidate> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.push_back({static_cast<int>(g) + 1, groups[g], masks[g]});
  }
  return out;
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("empirical_quantile: no values");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractError("empirical_quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void set_penalties(DetectorConfig& config, const std::vector<double>& lambda_max_values,
                   const PenaltyRule& rule) {
  if (lambda_max_values.empty()) throw CalibrationError("calibration stream is empty");
  const double median = empirical_quantile(lambda_max_values, 0.5);
  config.lambda2 = rule.fraction * median;
  config.lambda1 = rule.ratio * config.lambda2;
}

void set_threshold(DetectorConfig& config, const std::vector<double>& raw_statistics,
                   int min_ticks) {
  if (static_cast<int>(raw_statistics.size()) < min_ticks) {
    throw CalibrationError("calibration needs at least " + std::to_string(min_ticks) +
                           " in-control ticks, got " + std::to_string(raw_statistics.size()));
  }
  const double mean = std::accumulate(raw_statistics.begin(), raw_statistics.end(), 0.0) /
                      static_cast<double>(raw_statistics.size());
  if (!(mean > 0.0)) {
    throw CalibrationError(
        "in-control statistic is identically zero; use smaller lambda1/lambda2");
  }
  std::vector<double> normalized(raw_statistics.size());
  std::transform(raw_statistics.begin(), raw_statistics.end(), normalized.begin(),
                 [mean](double s) { return s / mean; });
  const double threshold = empirical_quantile(std::move(normalized), 1.0 - config.alpha);
  if (!(threshold > 0.0)) {
    throw CalibrationError("the (1 - alpha) quantile of the in-control statistic is zero; "
                           "use smaller lambda1/lambda2");
  }
  config.normalization = mean;
  config.threshold = threshold;
}

namespace {

template <typename Step>
CalibrationReport finish_calibration(DetectorConfig config, const std::vector<double>& lmax,
                                     int ticks, const Step& step_fn) {
  CalibrationReport report;
  report.ticks = ticks;
  report.lambda_max_median = empirical_quantile(lmax, 0.5);
  config.normalization = 1.0;
  config.threshold = 0.0;
  std::vector<double> raw;
  raw.reserve(ticks);
  int zero = 0;
  double active = 0.0;
  step_fn(config, [&](const StepResult& s) {
    raw.push_back(s.raw_statistic);
    if (s.raw_statistic == 0.0) ++zero;
    active += static_cast<double>((s.group_l1.array() > 0.0).count());
  });
  set_threshold(config, raw);
  report.zero_fraction = static_cast<double>(zero) / ticks;
  report.mean_active_groups = active / ticks;
  report.config = config;
  return report;
}

}  // namespace

CalibrationReport calibrate(LinearDetector& detector, const std::vector<VectorXd>& stream,
                            const PenaltyRule& rule) {
  if (stream.empty()) throw CalibrationError("calibration stream is empty");
  std::vector<double> lmax;
  lmax.reserve(stream.size());
  for (const auto& z : stream) lmax.push_back(detector.lambda_max(z));
  DetectorConfig config = detector.config();
  set_penalties(config, lmax, rule);
  CalibrationReport report = finish_calibration(
      config, lmax, static_cast<int>(stream.size()), [&](const DetectorConfig& c, auto sink) {
        detector.set_config(c);
        for (const auto& z : stream) sink(detector.step(z));
      });
  detector.set_config(report.config);
  return report;
}

CalibrationReport calibrate(GridDetector& detector, const std::vector<VectorXd>& stream,
                            const PenaltyRule& rule) {
  if (stream.empty()) throw CalibrationError("calibration stream is empty");
  const VectorXd flat = net::to_vector(detector.grid(), net::flat_state(detector.grid()));
  std::vector<double> lmax;
  lmax.reserve(stream.size());
  VectorXd warm = flat;
  for (const auto& z : stream) {
    lmax.push_back(detector.lambda_max(z, warm));
    warm = detector.estimate(z, warm).x_hat;
  }
  DetectorConfig config = detector.config();
  set_penalties(config, lmax, rule);
  CalibrationReport report = finish_calibration(
      config, lmax, static_cast<int>(stream.size()), [&](const DetectorConfig& c, auto sink) {
        detector.set_config(c);
        VectorXd x = flat;
        for (const auto& z : stream) {
          const StepResult s = detector.step(z, x);
          x = s.x_hat;
          sink(s);
        }
      });
  detector.set_config(report.config);
  return report;
}

namespace {

template <typename Step>
DetectionOutcome run_monitor(const DetectorConfig& config, int size, int start,
                             bool stop_at_alarm, const Step& step_fn) {
  if (start < 1 || start > size) throw ContractError("monitor: start tick outside the stream");
  DetectionOutcome out;
  for (int t = start; t <= size; ++t) {
    const StepResult s = step_fn(t);
    out.ticks.push_back({t, s.statistic, config.threshold, s.alarm, s.location, s.iterations,
                         s.converged});
    if (s.tie) ++out.tied_ticks;
    if (s.alarm && !out.alarm_tick) {
      out.alarm_tick = t;
      out.location = s.location;
      out.tie = s.tie;
      if (stop_at_alarm) break;
    }
  }
  out.censored = !out.alarm_tick.has_value();
  out.run_length = (out.alarm_tick ? *out.alarm_tick : size) - start + 1;
  return out;
}

}  // namespace

DetectionOutcome monitor(const LinearDetector& detector, const std::vector<VectorXd>& stream,
                         int start, bool stop_at_alarm) {
  return run_monitor(detector.config(), static_cast<int>(stream.size()), start, stop_at_alarm,
                     [&](int t) { return detector.step(stream[t - 1]); });
}

DetectionOutcome monitor(const GridDetector& detector, const std::vector<VectorXd>& stream,
                         const VectorXd& x_init, int start, bool stop_at_alarm) {
  VectorXd x = x_init;
  return run_monitor(detector.config(), static_cast<int>(stream.size()), start, stop_at_alarm,
                     [&](int t) {
                       StepResult s = detector.step(stream[t - 1], x);
                       x = s.x_hat;
                       return s;
                     });
}

void write_tick_csv(std::ostream& out, const std::vector<TickRecord>& ticks) {
  out << "t,stat,threshold,alarm,location,iterations,converged\n";
  const auto old_precision = out.precision(17);
  for (const auto& r : ticks) {
    out << r.t << ',' << r.statistic << ',' << r.threshold << ',' << (r.alarm ? 1 : 0) << ','
        << r.location << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

}  // namespace gridsentinel::detect

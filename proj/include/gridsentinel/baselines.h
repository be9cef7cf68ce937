#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "gridsentinel/detector.h"
#include "gridsentinel/estimator.h"
#include "gridsentinel/netmodel.h"

namespace gridsentinel::baselines {

struct ChiSqConfig {
  int dof = 1;
  double alpha = 0.005;
  double threshold = 0.0;
};

/// Threshold at the (1 - alpha) quantile of chi-square(dof).
ChiSqConfig chi_square_config(int dof, double alpha = 0.005);

bool chi_square_alarm(const estimation::EstimationResult& result, const ChiSqConfig& config);
bool chi_square_alarm(double statistic, const ChiSqConfig& config);

struct HtResult {
  int location = -1;
  bool tie = false;
  std::vector<int> ids;        // candidates that were evaluated
  std::vector<double> chi2;    // their chi^2_i, aligned with ids
  std::vector<int> skipped;    // candidates whose reduced set is not usable
};

/// Removes M_i, re-estimates and returns argmin_i chi^2_i (ties to the
/// lowest id). Candidates whose reduced set leaves no residual degrees of
/// freedom are skipped; throws LocalizationError if every one is.
HtResult ht_localize(const Eigen::VectorXd& z, const Eigen::MatrixXd& H,
                     const Eigen::VectorXd& sigma,
                     const std::vector<detect::Candidate>& candidates);

/// Nonlinear variant with Newton estimation from `x_warm`; a candidate is
/// skipped when its reduced estimation fails.
HtResult ht_localize(const Eigen::VectorXd& z, const net::NetworkCase& grid,
                     const net::MeasurementPlan& plan,
                     const std::vector<detect::Candidate>& candidates,
                     const Eigen::VectorXd& x_warm);

struct KsResult {
  double statistic = 0.0;  // sup |F_n - F|
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF, with the
/// asymptotic Kolmogorov distribution and Stephens' small-sample correction.
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);

/// P(K > x) for the Kolmogorov distribution.
double kolmogorov_survival(double x);

}  // namespace gridsentinel::baselines

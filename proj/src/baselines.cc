#include "gridsentinel/baselines.h"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "gridsentinel/errors.h"

namespace gridsentinel::baselines {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ChiSqConfig chi_square_config(int dof, double alpha) {
  if (dof < 1) throw ContractError("chi-square detector needs dof >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("alpha must lie in (0, 1)");
  const boost::math::chi_squared dist(dof);
  return {dof, alpha, boost::math::quantile(dist, 1.0 - alpha)};
}

bool chi_square_alarm(double statistic, const ChiSqConfig& config) {
  return statistic > config.threshold;
}

bool chi_square_alarm(const estimation::EstimationResult& result, const ChiSqConfig& config) {
  return chi_square_alarm(result.chi2, config);
}

namespace {

std::vector<int> complement(const std::vector<int>& mask, int m) {
  std::vector<bool> drop(m, false);
  for (int j : mask) {
    if (j < 0 || j >= m) throw ContractError("ht_localize: mask index out of range");
    drop[j] = true;
  }
  std::vector<int> keep;
  for (int j = 0; j < m; ++j) {
    if (!drop[j]) keep.push_back(j);
  }
  return keep;
}

void pick(HtResult& out) {
  if (out.ids.empty()) {
    throw LocalizationError("hypothesis test: no candidate leaves a usable sensor set");
  }
  const double best = *std::min_element(out.chi2.begin(), out.chi2.end());
  int count = 0;
  for (std::size_t k = 0; k < out.ids.size(); ++k) {
    if (out.chi2[k] != best) continue;
    ++count;
    if (out.location < 0 || out.ids[k] < out.location) out.location = out.ids[k];
  }
  out.tie = count > 1;
}

}  // namespace

HtResult ht_localize(const VectorXd& z, const MatrixXd& H, const VectorXd& sigma,
                     const std::vector<detect::Candidate>& candidates) {
  const int m = static_cast<int>(H.rows());
  if (z.size() != m || sigma.size() != m) throw ContractError("ht_localize: dimension mismatch");
  HtResult out;
  for (const auto& c : candidates) {
    const std::vector<int> keep = complement(c.mask, m);
    MatrixXd hr(keep.size(), H.cols());
    VectorXd zr(keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      hr.row(static_cast<int>(k)) = H.row(keep[k]) / sigma[keep[k]];
      zr[static_cast<int>(k)] = z[keep[k]] / sigma[keep[k]];
    }
    const Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(hr);
    if (static_cast<int>(keep.size()) - cod.rank() <= 0) {
      out.skipped.push_back(c.id);
      continue;
    }
    out.ids.push_back(c.id);
    out.chi2.push_back((zr - hr * cod.solve(zr)).squaredNorm());
  }
  pick(out);
  return out;
}

HtResult ht_localize(const VectorXd& z, const net::NetworkCase& grid,
                     const net::MeasurementPlan& plan,
                     const std::vector<detect::Candidate>& candidates, const VectorXd& x_warm) {
  const int m = plan.size();
  if (z.size() != m) throw ContractError("ht_localize: dimension mismatch");
  HtResult out;
  for (const auto& c : candidates) {
    const std::vector<int> keep = complement(c.mask, m);
    if (static_cast<int>(keep.size()) <= grid.state_dim()) {
      out.skipped.push_back(c.id);
      continue;
    }
    VectorXd zr(keep.size());
    VectorXd sr(keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      zr[static_cast<int>(k)] = z[keep[k]];
      sr[static_cast<int>(k)] = plan.sigma()[keep[k]];
    }
    const auto h = [&](const VectorXd& x) {
      const VectorXd full = net::eval_h(grid, plan, x);
      VectorXd part(keep.size());
      for (std::size_t k = 0; k < keep.size(); ++k) part[static_cast<int>(k)] = full[keep[k]];
      return part;
    };
    const auto jac = [&](const VectorXd& x) {
      const MatrixXd full = net::eval_jacobian(grid, plan, x);
      MatrixXd part(keep.size(), full.cols());
      for (std::size_t k = 0; k < keep.size(); ++k) part.row(static_cast<int>(k)) = full.row(keep[k]);
      return part;
    };
    try {
      const estimation::EstimationResult se = estimation::newton_se(h, jac, zr, sr, x_warm);
      out.ids.push_back(c.id);
      out.chi2.push_back(se.chi2);
    } catch (const EstimationError&) {
      out.skipped.push_back(c.id);
    }
  }
  pick(out);
  return out;
}

double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  const double pi = 3.14159265358979323846;
  if (x < 1.0) {
    // Jacobi-transformed series, which converges fast for small x.
    double cdf = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double odd = 2.0 * k - 1.0;
      cdf += std::exp(-odd * odd * pi * pi / (8.0 * x * x));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * pi) / x * cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    sum += sign * term;
    if (term < 1e-17) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw ContractError("ks_test: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double root = std::sqrt(n);
  return {d, kolmogorov_survival((root + 0.12 + 0.11 / root) * d)};
}

}  // namespace gridsentinel::baselines

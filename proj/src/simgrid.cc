#include "gridsentinel/simgrid.h"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "gridsentinel/errors.h"
#include "gridsentinel/random.h"

namespace gridsentinel::grid {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using net::BusType;
using net::GridState;
using net::NetworkCase;

LoadProfile synth_loads(const NetworkCase& grid, int ticks, std::uint64_t seed,
                        const LoadOptions& opt) {
  if (ticks < 1) throw ContractError("synth_loads: need at least one tick");
  if (opt.ticks_per_day < 1 || !(opt.power_factor > 0.0) || opt.power_factor > 1.0 ||
      std::abs(opt.ar_coefficient) >= 1.0 || opt.noise_sd < 0.0) {
    throw ContractError("synth_loads: invalid load options");
  }
  const int n_bus = grid.num_buses();
  const double q_ratio = std::tan(std::acos(opt.power_factor));
  const double stationary_sd =
      opt.noise_sd / std::sqrt(1.0 - opt.ar_coefficient * opt.ar_coefficient);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  LoadProfile out{MatrixXd::Zero(ticks, n_bus), MatrixXd::Zero(ticks, n_bus)};
  for (int b = 0; b < n_bus; ++b) {
    const double base = opt.scale * grid.buses()[b].pd / grid.base_mva();
    double eps = stationary_sd * normal(rng);
    for (int t = 0; t < ticks; ++t) {
      if (t > 0) eps = opt.ar_coefficient * eps + opt.noise_sd * normal(rng);
      const double phase = 2.0 * std::numbers::pi * t / opt.ticks_per_day;
      const double p = std::max(0.0, base * (1.0 + opt.daily_amplitude * std::sin(phase) + eps));
      out.p(t, b) = p;
      out.q(t, b) = p * q_ratio;
    }
  }
  return out;
}

LoadProfile parse_load_csv(std::string_view text, const NetworkCase& grid) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("load CSV is empty", 1, "header");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,bus,p,q") {
    throw ParseError("load CSV header must be 't,bus,p,q'", 1, "header");
  }
  struct Row {
    int t, bus;
    double p, q;
  };
  std::vector<Row> rows;
  int max_t = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell[4];
    for (int k = 0; k < 4; ++k) {
      if (!std::getline(fields, cell[k], ',')) {
        throw ParseError("load CSV row has fewer than 4 fields", line_no, "");
      }
    }
    std::string extra;
    if (std::getline(fields, extra, ',')) {
      throw ParseError("load CSV row has more than 4 fields", line_no, "");
    }
    auto parse_int = [&](const std::string& cell, const char* name) {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(cell, &used);
      } catch (const std::exception&) {
        used = std::string::npos;
      }
      if (used != cell.size()) {
        throw ParseError(std::string("load CSV field '") + name + "' is not an integer",
                         line_no, name);
      }
      return v;
    };
    auto parse_double = [&](const std::string& cell, const char* name) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = std::string::npos;
      }
      if (used != cell.size()) {
        throw ParseError(std::string("load CSV field '") + name + "' is not a number",
                         line_no, name);
      }
      return v;
    };
    const Row r{parse_int(cell[0], "t"), parse_int(cell[1], "bus"), parse_double(cell[2], "p"),
                parse_double(cell[3], "q")};
    if (r.t < 1) throw ParseError("load CSV tick must be >= 1", line_no, "t");
    if (!grid.has_bus(r.bus)) throw ParseError("load CSV names unknown bus", line_no, "bus");
    if (!(r.p >= 0.0)) throw ParseError("load CSV demand must be >= 0", line_no, "p");
    rows.push_back(r);
    max_t = std::max(max_t, r.t);
  }
  if (rows.empty()) throw ParseError("load CSV has no data rows", line_no, "");
  LoadProfile out{MatrixXd::Zero(max_t, grid.num_buses()), MatrixXd::Zero(max_t, grid.num_buses())};
  for (const Row& r : rows) {
    out.p(r.t - 1, grid.index_of(r.bus)) = r.p;
    out.q(r.t - 1, grid.index_of(r.bus)) = r.q;
  }
  return out;
}

LoadProfile load_load_csv(const std::filesystem::path& path, const NetworkCase& grid) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open load CSV " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_load_csv(buf.str(), grid);
}

DispatchPlan dispatch(const LoadProfile& loads, const NetworkCase& grid, double loss_margin) {
  const auto& gens = grid.generators();
  if (gens.empty()) throw DispatchError("case has no generators");
  if (loads.p.cols() != grid.num_buses()) throw ContractError("load profile bus count mismatch");
  VectorXd cap(static_cast<Eigen::Index>(gens.size()));
  DispatchPlan out;
  out.v_set.resize(cap.size());
  for (std::size_t g = 0; g < gens.size(); ++g) {
    cap[g] = gens[g].p_max / grid.base_mva();
    out.v_set[g] = gens[g].v_set;
  }
  const double total_cap = cap.sum();
  const VectorXd demand = loads.p.rowwise().sum();
  const double peak = demand.size() > 0 ? demand.maxCoeff() : 0.0;
  if (total_cap < peak * (1.0 + loss_margin)) {
    throw DispatchError("generation capacity " + std::to_string(total_cap) +
                        " pu cannot cover peak demand " + std::to_string(peak) +
                        " pu plus loss margin");
  }
  out.p = demand * (cap / total_cap).transpose();
  return out;
}

BusSchedule schedule_at(const NetworkCase& grid, const LoadProfile& loads,
                        const DispatchPlan& plan, int t, int scaled_bus,
                        double generator_scale) {
  if (t < 1 || t > loads.ticks() || t > plan.ticks()) {
    throw ContractError("schedule_at: tick out of range");
  }
  const int n_bus = grid.num_buses();
  BusSchedule s{-loads.p.row(t - 1).transpose(), -loads.q.row(t - 1).transpose(),
                VectorXd::Ones(n_bus)};
  for (int i = 0; i < n_bus; ++i) s.vm[i] = grid.buses()[i].vm;
  const auto& gens = grid.generators();
  for (std::size_t g = 0; g < gens.size(); ++g) {
    const int i = grid.index_of(gens[g].bus);
    const double scale = gens[g].bus == scaled_bus ? generator_scale : 1.0;
    s.p[i] += scale * plan.p(t - 1, static_cast<Eigen::Index>(g));
    s.vm[i] = plan.v_set[g];
  }
  return s;
}

namespace {

struct Unknowns {
  std::vector<int> p_rows;   // buses with a P equation
  std::vector<int> q_rows;   // buses with a Q equation
  std::vector<int> cols;     // state columns solved for
};

Unknowns unknowns(const NetworkCase& grid) {
  Unknowns u;
  for (int i = 0; i < grid.num_buses(); ++i) {
    const BusType type = grid.buses()[i].type;
    if (type != BusType::kReference) {
      u.p_rows.push_back(i);
      u.cols.push_back(grid.angle_index(i));
    }
  }
  for (int i = 0; i < grid.num_buses(); ++i) {
    if (grid.buses()[i].type == BusType::kLoad) {
      u.q_rows.push_back(i);
      u.cols.push_back(grid.magnitude_index(i));
    }
  }
  return u;
}

}  // namespace

VectorXd power_mismatch(const NetworkCase& grid, const BusSchedule& schedule,
                        const GridState& state) {
  const Unknowns u = unknowns(grid);
  const net::PowerInjections inj = net::bus_injections(grid, state);
  VectorXd out(static_cast<Eigen::Index>(u.p_rows.size() + u.q_rows.size()));
  Eigen::Index k = 0;
  for (int i : u.p_rows) out[k++] = inj.p[i] - schedule.p[i];
  for (int i : u.q_rows) out[k++] = inj.q[i] - schedule.q[i];
  return out;
}

PowerFlowResult solve_powerflow(const NetworkCase& grid, const BusSchedule& schedule,
                                const GridState* warm, const PowerFlowOptions& options) {
  const int n_bus = grid.num_buses();
  if (schedule.p.size() != n_bus || schedule.q.size() != n_bus || schedule.vm.size() != n_bus) {
    throw ContractError("solve_powerflow: schedule has wrong bus count");
  }
  const Unknowns u = unknowns(grid);
  GridState s = warm != nullptr ? *warm : net::flat_state(grid);
  for (int i = 0; i < n_bus; ++i) {
    if (grid.buses()[i].type != BusType::kLoad) s.vm[i] = schedule.vm[i];
  }
  s.va[grid.reference_index()] = 0.0;

  PowerFlowResult out;
  for (int it = 0;; ++it) {
    const VectorXd mis = power_mismatch(grid, schedule, s);
    out.mismatch = mis.size() > 0 ? mis.lpNorm<Eigen::Infinity>() : 0.0;
    if (!std::isfinite(out.mismatch)) break;
    if (out.mismatch < options.tol) {
      out.state = s;
      out.iterations = it;
      return out;
    }
    if (it >= options.max_iter) break;

    const MatrixXd full = net::injection_jacobian(grid, s);
    MatrixXd jac(mis.size(), static_cast<Eigen::Index>(u.cols.size()));
    Eigen::Index r = 0;
    for (int i : u.p_rows) {
      for (std::size_t c = 0; c < u.cols.size(); ++c) jac(r, c) = full(i, u.cols[c]);
      ++r;
    }
    for (int i : u.q_rows) {
      for (std::size_t c = 0; c < u.cols.size(); ++c) jac(r, c) = full(n_bus + i, u.cols[c]);
      ++r;
    }
    const VectorXd dx = jac.partialPivLu().solve(-mis);
    if (!dx.allFinite()) break;
    VectorXd x = net::to_vector(grid, s);
    for (std::size_t c = 0; c < u.cols.size(); ++c) x[u.cols[c]] += dx[c];
    for (int i = 0; i < n_bus; ++i) {
      if (x[grid.magnitude_index(i)] <= 0.0) {
        throw PowerFlowError("power flow produced a non-positive voltage magnitude");
      }
    }
    s = net::from_vector(grid, x);
  }
  throw PowerFlowError("power flow did not converge within " +
                       std::to_string(options.max_iter) + " iterations (mismatch " +
                       std::to_string(out.mismatch) + ")");
}

Stream simulate_stream(const NetworkCase& grid, const net::MeasurementPlan& plan,
                       const LoadProfile& loads, const DispatchPlan& dispatch_plan,
                       const StreamAttack* attack, std::uint64_t seed) {
  const int ticks = loads.ticks();
  if (dispatch_plan.ticks() != ticks) throw ContractError("dispatch and load lengths differ");
  std::vector<int> state_idx;
  double scale = 1.0;
  if (attack != nullptr) {
    const auto& spec = attack->spec;
    if (!grid.has_bus(spec.target)) throw AttackSpecError("attack target is not a bus");
    state_idx = grid.state_indices(grid.index_of(spec.target));
    attack::validate(spec, grid.generator_bus_ids(), static_cast<int>(state_idx.size()));
    if (spec.magnitude == attack::Magnitude::kSnr) {
      throw AttackSpecError("SNR-sized attacks apply to the linear testbed only");
    }
    if (spec.magnitude == attack::Magnitude::kLevel) scale = 1.0 - 0.2 * spec.level;
  }
  auto h = [&](const VectorXd& x) { return net::eval_h(grid, plan, x); };

  Rng rng(seed);
  Stream out;
  out.x.reserve(ticks);
  out.z.reserve(ticks);
  std::optional<GridState> warm;
  std::optional<GridState> warm_attacked;
  for (int t = 1; t <= ticks; ++t) {
    const BusSchedule sched = schedule_at(grid, loads, dispatch_plan, t);
    const PowerFlowResult pf = solve_powerflow(grid, sched, warm ? &*warm : nullptr);
    warm = pf.state;
    const VectorXd x = net::to_vector(grid, pf.state);
    const VectorXd z = h(x) + plan.sigma().cwiseProduct(standard_normal(rng, plan.size()));
    out.pf_iterations.push_back(pf.iterations);

    if (attack == nullptr || !attack::active(attack->spec, t)) {
      out.x.push_back(x);
      out.z.push_back(z);
      continue;
    }
    VectorXd beta;
    if (attack->spec.magnitude == attack::Magnitude::kBeta) {
      beta = attack->spec.beta;
    } else {
      const BusSchedule cut =
          schedule_at(grid, loads, dispatch_plan, t, attack->spec.target, scale);
      const PowerFlowResult moved =
          solve_powerflow(grid, cut, warm_attacked ? &*warm_attacked : &pf.state);
      warm_attacked = moved.state;
      const VectorXd xm = net::to_vector(grid, moved.state);
      beta.resize(static_cast<Eigen::Index>(state_idx.size()));
      for (std::size_t k = 0; k < state_idx.size(); ++k) beta[k] = xm[state_idx[k]] - x[state_idx[k]];
    }
    const attack::AttackedReading a =
        attack::apply_covert_attack(x, z, state_idx, beta, attack->mask, h);
    out.x.push_back(a.x);
    out.z.push_back(a.z);
  }
  return out;
}

}  // namespace gridsentinel::grid

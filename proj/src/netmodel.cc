#include "gridsentinel/netmodel.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gridsentinel/errors.h"

namespace gridsentinel::net {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

std::string_view bus_type_name(BusType type) {
  switch (type) {
    case BusType::kReference: return "reference";
    case BusType::kGenerator: return "generator";
    case BusType::kLoad: return "load";
  }
  return "load";
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

std::string join(const std::string& path, const char* key) {
  return path.empty() ? std::string(key) : path + "." + key;
}

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) {
    throw ParseError("expected an object at '" + path + "'", 0, path);
  }
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError("missing field '" + join(path, key) + "'", 0, join(path, key));
  }
  return *it;
}

double number_field(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number()) {
    throw ParseError("field '" + join(path, key) + "' must be a number", 0,
                     join(path, key));
  }
  return v.get<double>();
}

double optional_number(const json& obj, const char* key, const std::string& path,
                       double fallback) {
  if (!obj.contains(key)) return fallback;
  return number_field(obj, key, path);
}

int int_field(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number_integer()) {
    throw ParseError("field '" + join(path, key) + "' must be an integer", 0,
                     join(path, key));
  }
  return v.get<int>();
}

const json& array_field(const json& obj, const char* key) {
  const json& v = require(obj, key, "");
  if (!v.is_array()) {
    throw ParseError(std::string("field '") + key + "' must be an array", 0, key);
  }
  return v;
}

}  // namespace

NetworkCase::NetworkCase(std::string name, double base_mva, std::vector<Bus> buses,
                         std::vector<Branch> branches, std::vector<Generator> generators)
    : name_(std::move(name)),
      base_mva_(base_mva),
      buses_(std::move(buses)),
      branches_(std::move(branches)),
      generators_(std::move(generators)) {
  for (int i = 0; i < num_buses(); ++i) {
    if (!index_.emplace(buses_[i].id, i).second) {
      throw ValidationError("duplicate bus id " + std::to_string(buses_[i].id));
    }
  }
  validate();

  const int n_bus = num_buses();
  incident_.assign(n_bus, {});
  for (int k = 0; k < static_cast<int>(branches_.size()); ++k) {
    incident_[index_.at(branches_[k].from)].push_back(k);
    incident_[index_.at(branches_[k].to)].push_back(k);
  }

  ybus_ = Eigen::MatrixXcd::Zero(n_bus, n_bus);
  for (const Branch& br : branches_) {
    const int f = index_.at(br.from);
    const int t = index_.at(br.to);
    const std::complex<double> y = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> charging(0.0, br.b / 2.0);
    ybus_(f, f) += y + charging;
    ybus_(t, t) += y + charging;
    ybus_(f, t) -= y;
    ybus_(t, f) -= y;
  }
}

void NetworkCase::validate() {
  if (!(base_mva_ > 0.0)) throw ValidationError("base_mva must be positive");
  if (buses_.empty()) throw ValidationError("case has no buses");

  int n_ref = 0;
  std::set<int> regions;
  for (int i = 0; i < num_buses(); ++i) {
    const Bus& bus = buses_[i];
    if (bus.type == BusType::kReference) {
      ++n_ref;
      reference_ = i;
    }
    if (bus.region < 1) {
      throw ValidationError("bus " + std::to_string(bus.id) + " has region < 1");
    }
    if (!(bus.vm > 0.0)) {
      throw ValidationError("bus " + std::to_string(bus.id) + " has vm <= 0");
    }
    if (bus.pd < 0.0) {
      throw ValidationError("bus " + std::to_string(bus.id) + " has negative demand");
    }
    regions.insert(bus.region);
  }
  if (n_ref != 1) {
    throw ValidationError("case must have exactly one reference bus, found " +
                          std::to_string(n_ref));
  }
  const int k_regions = *regions.rbegin();
  if (static_cast<int>(regions.size()) != k_regions) {
    throw ValidationError("regions must be numbered 1..K with every region non-empty");
  }
  num_regions_ = k_regions;

  std::vector<std::vector<int>> adj(num_buses());
  for (const Branch& br : branches_) {
    if (!index_.count(br.from) || !index_.count(br.to)) {
      throw ValidationError("branch " + std::to_string(br.from) + "-" +
                            std::to_string(br.to) + " references an unknown bus");
    }
    if (br.from == br.to) {
      throw ValidationError("branch " + std::to_string(br.from) + " is a self-loop");
    }
    if (br.r == 0.0 && br.x == 0.0) {
      throw ValidationError("branch " + std::to_string(br.from) + "-" +
                            std::to_string(br.to) + " has zero impedance");
    }
    adj[index_.at(br.from)].push_back(index_.at(br.to));
    adj[index_.at(br.to)].push_back(index_.at(br.from));
  }

  std::vector<bool> seen(num_buses(), false);
  std::queue<int> frontier;
  frontier.push(reference_);
  seen[reference_] = true;
  int reached = 1;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++reached;
        frontier.push(v);
      }
    }
  }
  if (reached != num_buses()) {
    throw ValidationError("network graph is disconnected (" + std::to_string(reached) +
                          " of " + std::to_string(num_buses()) +
                          " buses reachable from the reference)");
  }

  for (const Generator& gen : generators_) {
    if (!index_.count(gen.bus)) {
      throw ValidationError("generator on unknown bus " + std::to_string(gen.bus));
    }
    const BusType t = buses_[index_.at(gen.bus)].type;
    if (t == BusType::kLoad) {
      throw ValidationError("generator on load bus " + std::to_string(gen.bus));
    }
    if (gen.p_max < 0.0 || !(gen.v_set > 0.0)) {
      throw ValidationError("generator on bus " + std::to_string(gen.bus) +
                            " has invalid p_max or v_set");
    }
  }
}

int NetworkCase::index_of(int bus_id) const {
  auto it = index_.find(bus_id);
  if (it == index_.end()) {
    throw ContractError("unknown bus id " + std::to_string(bus_id));
  }
  return it->second;
}

int NetworkCase::angle_index(int bus_index) const {
  if (bus_index == reference_) return -1;
  return bus_index < reference_ ? bus_index : bus_index - 1;
}

int NetworkCase::magnitude_index(int bus_index) const {
  return num_buses() - 1 + bus_index;
}

std::vector<int> NetworkCase::state_indices(int bus_index) const {
  std::vector<int> out;
  if (const int a = angle_index(bus_index); a >= 0) out.push_back(a);
  out.push_back(magnitude_index(bus_index));
  return out;
}

std::vector<int> NetworkCase::neighbors(int bus_index) const {
  std::set<int> out;
  for (int k : incident_[bus_index]) {
    const int f = index_.at(branches_[k].from);
    const int t = index_.at(branches_[k].to);
    out.insert(f == bus_index ? t : f);
  }
  return {out.begin(), out.end()};
}

std::vector<int> NetworkCase::generator_bus_ids() const {
  std::vector<int> out;
  for (const Bus& bus : buses_) {
    if (bus.type == BusType::kGenerator) out.push_back(bus.id);
  }
  return out;
}

NetworkCase parse_case(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed case document: ") + e.what(),
                     line_of(text, e.byte), "");
  }
  if (!doc.is_object()) throw ParseError("case document must be an object", 1, "");

  const double base_mva = number_field(doc, "base_mva", "");
  std::string name = doc.value("name", std::string("case"));

  std::vector<Bus> buses;
  const json& jb = array_field(doc, "buses");
  for (std::size_t i = 0; i < jb.size(); ++i) {
    const std::string path = "buses[" + std::to_string(i) + "]";
    const json& e = jb[i];
    Bus bus;
    bus.id = int_field(e, "id", path);
    const json& type = require(e, "type", path);
    if (!type.is_string()) throw ParseError(path + ".type must be a string", 0, path + ".type");
    const std::string t = type.get<std::string>();
    if (t == "reference") {
      bus.type = BusType::kReference;
    } else if (t == "generator") {
      bus.type = BusType::kGenerator;
    } else if (t == "load") {
      bus.type = BusType::kLoad;
    } else {
      throw ParseError(path + ".type has unknown value '" + t + "'", 0, path + ".type");
    }
    bus.region = int_field(e, "region", path);
    bus.pd = optional_number(e, "pd", path, 0.0);
    bus.vm = optional_number(e, "vm", path, 1.0);
    bus.va = optional_number(e, "va", path, 0.0);
    buses.push_back(bus);
  }

  std::vector<Branch> branches;
  const json& jr = array_field(doc, "branches");
  for (std::size_t i = 0; i < jr.size(); ++i) {
    const std::string path = "branches[" + std::to_string(i) + "]";
    const json& e = jr[i];
    branches.push_back({int_field(e, "from", path), int_field(e, "to", path),
                        number_field(e, "r", path), number_field(e, "x", path),
                        number_field(e, "b", path)});
  }

  std::vector<Generator> generators;
  const json& jg = array_field(doc, "generators");
  for (std::size_t i = 0; i < jg.size(); ++i) {
    const std::string path = "generators[" + std::to_string(i) + "]";
    const json& e = jg[i];
    generators.push_back({int_field(e, "bus", path), number_field(e, "p_max", path),
                          optional_number(e, "v_set", path, 1.0)});
  }

  return NetworkCase(std::move(name), base_mva, std::move(buses), std::move(branches),
                     std::move(generators));
}

std::string serialize_case(const NetworkCase& grid) {
  json doc;
  doc["name"] = grid.name();
  doc["base_mva"] = grid.base_mva();
  json buses = json::array();
  for (const Bus& bus : grid.buses()) {
    buses.push_back({{"id", bus.id},
                     {"type", std::string(bus_type_name(bus.type))},
                     {"region", bus.region},
                     {"pd", bus.pd},
                     {"vm", bus.vm},
                     {"va", bus.va}});
  }
  doc["buses"] = std::move(buses);
  json branches = json::array();
  for (const Branch& br : grid.branches()) {
    branches.push_back(
        {{"from", br.from}, {"to", br.to}, {"r", br.r}, {"x", br.x}, {"b", br.b}});
  }
  doc["branches"] = std::move(branches);
  json gens = json::array();
  for (const Generator& g : grid.generators()) {
    gens.push_back({{"bus", g.bus}, {"p_max", g.p_max}, {"v_set", g.v_set}});
  }
  doc["generators"] = std::move(gens);
  return doc.dump(2);
}

NetworkCase load_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open case file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_case(buf.str());
}

GridState flat_state(const NetworkCase& grid) {
  return {VectorXd::Ones(grid.num_buses()), VectorXd::Zero(grid.num_buses())};
}

VectorXd to_vector(const NetworkCase& grid, const GridState& state) {
  const int n_bus = grid.num_buses();
  if (state.vm.size() != n_bus || state.va.size() != n_bus) {
    throw ContractError("grid state has wrong bus count");
  }
  VectorXd x(grid.state_dim());
  for (int i = 0; i < n_bus; ++i) {
    if (const int a = grid.angle_index(i); a >= 0) x[a] = state.va[i];
    x[grid.magnitude_index(i)] = state.vm[i];
  }
  return x;
}

GridState from_vector(const NetworkCase& grid, const VectorXd& x) {
  if (x.size() != grid.state_dim()) {
    throw ContractError("state vector has dimension " + std::to_string(x.size()) +
                        ", expected " + std::to_string(grid.state_dim()));
  }
  const int n_bus = grid.num_buses();
  GridState s{VectorXd(n_bus), VectorXd(n_bus)};
  for (int i = 0; i < n_bus; ++i) {
    const int a = grid.angle_index(i);
    s.va[i] = a >= 0 ? x[a] : 0.0;
    s.vm[i] = x[grid.magnitude_index(i)];
    if (!(s.vm[i] > 0.0)) {
      throw ContractError("non-positive voltage magnitude at bus index " +
                          std::to_string(i));
    }
  }
  return s;
}

std::string_view to_string(SensorKind kind) {
  switch (kind) {
    case SensorKind::kFlowP: return "flow_p";
    case SensorKind::kFlowQ: return "flow_q";
    case SensorKind::kVoltage: return "voltage";
    case SensorKind::kInjectionP: return "injection_p";
    case SensorKind::kInjectionQ: return "injection_q";
  }
  return "voltage";
}

PowerInjections bus_injections(const NetworkCase& grid, const GridState& s) {
  const int n_bus = grid.num_buses();
  const Eigen::MatrixXcd& y = grid.admittance();
  PowerInjections out{VectorXd::Zero(n_bus), VectorXd::Zero(n_bus)};
  for (int i = 0; i < n_bus; ++i) {
    for (int k = 0; k < n_bus; ++k) {
      const std::complex<double> yik = y(i, k);
      if (yik == 0.0) continue;
      const double t = s.va[i] - s.va[k];
      const double c = std::cos(t);
      const double sn = std::sin(t);
      out.p[i] += s.vm[i] * s.vm[k] * (yik.real() * c + yik.imag() * sn);
      out.q[i] += s.vm[i] * s.vm[k] * (yik.real() * sn - yik.imag() * c);
    }
  }
  return out;
}

MatrixXd injection_jacobian(const NetworkCase& grid, const GridState& s) {
  const int n_bus = grid.num_buses();
  const Eigen::MatrixXcd& y = grid.admittance();
  const PowerInjections inj = bus_injections(grid, s);
  MatrixXd jac = MatrixXd::Zero(2 * n_bus, grid.state_dim());

  for (int i = 0; i < n_bus; ++i) {
    const double gii = y(i, i).real();
    const double bii = y(i, i).imag();
    const double vi = s.vm[i];
    const int ai = grid.angle_index(i);
    const int mi = grid.magnitude_index(i);
    if (ai >= 0) {
      jac(i, ai) = -inj.q[i] - bii * vi * vi;
      jac(n_bus + i, ai) = inj.p[i] - gii * vi * vi;
    }
    jac(i, mi) = inj.p[i] / vi + gii * vi;
    jac(n_bus + i, mi) = inj.q[i] / vi - bii * vi;

    for (int k = 0; k < n_bus; ++k) {
      if (k == i || y(i, k) == 0.0) continue;
      const double g = y(i, k).real();
      const double b = y(i, k).imag();
      const double t = s.va[i] - s.va[k];
      const double c = std::cos(t);
      const double sn = std::sin(t);
      const double vk = s.vm[k];
      if (const int ak = grid.angle_index(k); ak >= 0) {
        jac(i, ak) = vi * vk * (g * sn - b * c);
        jac(n_bus + i, ak) = -vi * vk * (g * c + b * sn);
      }
      const int mk = grid.magnitude_index(k);
      jac(i, mk) = vi * (g * c + b * sn);
      jac(n_bus + i, mk) = vi * (g * sn - b * c);
    }
  }
  return jac;
}

namespace {

struct SeriesAdmittance {
  double g;
  double b;
};

SeriesAdmittance series_admittance(const Branch& br) {
  const std::complex<double> y = 1.0 / std::complex<double>(br.r, br.x);
  return {y.real(), y.imag()};
}

void check_plan_dims(const NetworkCase& grid, const MeasurementPlan& plan,
                     const VectorXd& x) {
  if (x.size() != grid.state_dim()) {
    throw ContractError("state vector has dimension " + std::to_string(x.size()) +
                        ", expected " + std::to_string(grid.state_dim()));
  }
  (void)plan;
}

bool needs_injections(const MeasurementPlan& plan) {
  return std::any_of(plan.sensors().begin(), plan.sensors().end(), [](const Sensor& s) {
    return s.kind == SensorKind::kInjectionP || s.kind == SensorKind::kInjectionQ;
  });
}

}  // namespace

VectorXd eval_h(const NetworkCase& grid, const MeasurementPlan& plan, const VectorXd& x) {
  check_plan_dims(grid, plan, x);
  const GridState s = from_vector(grid, x);
  PowerInjections inj;
  if (needs_injections(plan)) inj = bus_injections(grid, s);

  VectorXd z(plan.size());
  for (int j = 0; j < plan.size(); ++j) {
    const Sensor& sensor = plan.sensors()[j];
    switch (sensor.kind) {
      case SensorKind::kVoltage: z[j] = s.vm[sensor.location]; break;
      case SensorKind::kInjectionP: z[j] = inj.p[sensor.location]; break;
      case SensorKind::kInjectionQ: z[j] = inj.q[sensor.location]; break;
      case SensorKind::kFlowP:
      case SensorKind::kFlowQ: {
        const Branch& br = grid.branches()[sensor.location];
        const int f = grid.index_of(br.from);
        const int t = grid.index_of(br.to);
        const auto [g, b] = series_admittance(br);
        const double th = s.va[f] - s.va[t];
        const double vf = s.vm[f];
        const double vt = s.vm[t];
        if (sensor.kind == SensorKind::kFlowP) {
          z[j] = vf * vf * g - vf * vt * (g * std::cos(th) + b * std::sin(th));
        } else {
          z[j] = -vf * vf * (b + br.b / 2.0) - vf * vt * (g * std::sin(th) - b * std::cos(th));
        }
        break;
      }
    }
  }
  return z;
}

MatrixXd eval_jacobian(const NetworkCase& grid, const MeasurementPlan& plan,
                       const VectorXd& x) {
  check_plan_dims(grid, plan, x);
  const GridState s = from_vector(grid, x);
  MatrixXd inj_jac;
  if (needs_injections(plan)) inj_jac = injection_jacobian(grid, s);
  const int n_bus = grid.num_buses();

  MatrixXd jac = MatrixXd::Zero(plan.size(), grid.state_dim());
  for (int j = 0; j < plan.size(); ++j) {
    const Sensor& sensor = plan.sensors()[j];
    switch (sensor.kind) {
      case SensorKind::kVoltage:
        jac(j, grid.magnitude_index(sensor.location)) = 1.0;
        break;
      case SensorKind::kInjectionP: jac.row(j) = inj_jac.row(sensor.location); break;
      case SensorKind::kInjectionQ: jac.row(j) = inj_jac.row(n_bus + sensor.location); break;
      case SensorKind::kFlowP:
      case SensorKind::kFlowQ: {
        const Branch& br = grid.branches()[sensor.location];
        const int f = grid.index_of(br.from);
        const int t = grid.index_of(br.to);
        const auto [g, b] = series_admittance(br);
        const double th = s.va[f] - s.va[t];
        const double c = std::cos(th);
        const double sn = std::sin(th);
        const double vf = s.vm[f];
        const double vt = s.vm[t];
        double d_th, d_vf, d_vt;
        if (sensor.kind == SensorKind::kFlowP) {
          d_th = vf * vt * (g * sn - b * c);
          d_vf = 2.0 * vf * g - vt * (g * c + b * sn);
          d_vt = -vf * (g * c + b * sn);
        } else {
          d_th = -vf * vt * (g * c + b * sn);
          d_vf = -2.0 * vf * (b + br.b / 2.0) - vt * (g * sn - b * c);
          d_vt = -vf * (g * sn - b * c);
        }
        if (const int af = grid.angle_index(f); af >= 0) jac(j, af) += d_th;
        if (const int at = grid.angle_index(t); at >= 0) jac(j, at) -= d_th;
        jac(j, grid.magnitude_index(f)) += d_vf;
        jac(j, grid.magnitude_index(t)) += d_vt;
        break;
      }
    }
  }
  return jac;
}

MeasurementPlan::MeasurementPlan(const NetworkCase& grid, std::vector<Sensor> sensors)
    : sensors_(std::move(sensors)), sigma_(static_cast<Eigen::Index>(sensors_.size())) {
  const int n_branch = static_cast<int>(grid.branches().size());
  for (int j = 0; j < size(); ++j) {
    const Sensor& s = sensors_[j];
    const bool is_flow = s.kind == SensorKind::kFlowP || s.kind == SensorKind::kFlowQ;
    const int limit = is_flow ? n_branch : grid.num_buses();
    if (s.location < 0 || s.location >= limit) {
      throw ValidationError("sensor " + std::to_string(j) + " has invalid location");
    }
    if (!(s.sigma > 0.0)) {
      throw ValidationError("sensor " + std::to_string(j) + " has non-positive sigma");
    }
    sigma_[j] = s.sigma;
  }
  if (size() <= grid.state_dim()) {
    throw ValidationError("measurement plan needs m > n (m=" + std::to_string(size()) +
                          ", n=" + std::to_string(grid.state_dim()) + ")");
  }
  const MatrixXd jac = eval_jacobian(grid, *this, to_vector(grid, flat_state(grid)));
  Eigen::ColPivHouseholderQR<MatrixXd> qr(jac);
  if (qr.rank() < grid.state_dim()) {
    throw ValidationError("measurement plan is not observable: Jacobian rank " +
                          std::to_string(qr.rank()) + " < " +
                          std::to_string(grid.state_dim()));
  }
}

MeasurementPlan default_plan(const NetworkCase& grid, double sigma_voltage,
                             double sigma_power) {
  std::vector<Sensor> sensors;
  for (int i = 0; i < grid.num_buses(); ++i) {
    sensors.push_back({SensorKind::kVoltage, i, sigma_voltage});
  }
  for (int i = 0; i < grid.num_buses(); ++i) {
    sensors.push_back({SensorKind::kInjectionP, i, sigma_power});
    sensors.push_back({SensorKind::kInjectionQ, i, sigma_power});
  }
  for (int k = 0; k < static_cast<int>(grid.branches().size()); ++k) {
    sensors.push_back({SensorKind::kFlowP, k, sigma_power});
    sensors.push_back({SensorKind::kFlowQ, k, sigma_power});
  }
  return MeasurementPlan(grid, std::move(sensors));
}

std::vector<int> neighborhood(const NetworkCase& grid, const MeasurementPlan& plan,
                              int bus_id, NeighborhoodScope scope) {
  const int bus = grid.index_of(bus_id);
  const std::vector<int>& incident = grid.incident_branches(bus);
  const std::vector<int> adjacent = grid.neighbors(bus);

  std::vector<int> out;
  for (int j = 0; j < plan.size(); ++j) {
    const Sensor& s = plan.sensors()[j];
    bool member = false;
    switch (s.kind) {
      case SensorKind::kVoltage: member = s.location == bus; break;
      case SensorKind::kInjectionP:
      case SensorKind::kInjectionQ:
        member = s.location == bus ||
                 (scope == NeighborhoodScope::kOneHop &&
                  std::find(adjacent.begin(), adjacent.end(), s.location) != adjacent.end());
        break;
      case SensorKind::kFlowP:
      case SensorKind::kFlowQ:
        member = std::find(incident.begin(), incident.end(), s.location) != incident.end();
        break;
    }
    if (member) out.push_back(j);
  }
  return out;
}

std::map<int, std::vector<int>> neighborhood_sets(const NetworkCase& grid,
                                                  const MeasurementPlan& plan,
                                                  NeighborhoodScope scope) {
  std::map<int, std::vector<int>> out;
  for (int id : grid.generator_bus_ids()) out[id] = neighborhood(grid, plan, id, scope);
  return out;
}

}  // namespace gridsentinel::net

#include "gridsentinel/config.h"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gridsentinel/errors.h"

namespace gridsentinel::bench {

using Json = nlohmann::ordered_json;

namespace {

void check_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("wrong type for '" + std::string(key) + "' in " + where);
  }
}

std::vector<double> number_list(const Json& j, const std::string& key) {
  std::vector<double> out;
  try {
    if (j.is_array()) {
      for (const auto& v : j) out.push_back(v.get<double>());
    } else {
      out.push_back(j.get<double>());
    }
  } catch (const Json::exception&) {
    throw ConfigError("'" + key + "' must be a number or a list of numbers");
  }
  if (out.empty()) throw ConfigError("'" + key + "' is an empty list");
  return out;
}

std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void read_detector(const Json& j, Scenario& s, RunConfig& config,
                   const std::filesystem::path& base_dir) {
  const std::string where = "detector";
  check_keys(j, where,
             {"alpha", "lambda1", "lambda2", "threshold", "normalization", "lambda_fraction",
              "lambda_ratio", "tol", "max_iter", "weight_by_group_size", "sgl_tol",
              "sgl_max_sweeps", "seed_fixed_point", "calibration_file"});
  detect::DetectorConfig& d = s.detector;
  read(j, "alpha", d.alpha, where);
  read(j, "tol", d.tol, where);
  read(j, "max_iter", d.max_iter, where);
  read(j, "weight_by_group_size", d.weight_by_group_size, where);
  read(j, "sgl_tol", d.sgl_tol, where);
  read(j, "sgl_max_sweeps", d.sgl_max_sweeps, where);
  read(j, "seed_fixed_point", d.seed_fixed_point, where);
  read(j, "lambda_fraction", s.penalty.fraction, where);
  read(j, "lambda_ratio", s.penalty.ratio, where);
  if (!(s.penalty.fraction > 0.0) || !(s.penalty.ratio >= 0.0)) {
    throw ConfigError("lambda_fraction must be > 0 and lambda_ratio >= 0");
  }
  if (d.max_iter < 1 || !(d.tol > 0.0)) throw ConfigError("detector needs max_iter >= 1 and tol > 0");

  std::string file;
  read(j, "calibration_file", file, where);
  const char* fixed[] = {"lambda1", "lambda2", "threshold", "normalization"};
  int given = 0;
  for (const char* key : fixed) given += j.contains(key) && !j.at(key).is_null();
  if (!file.empty() && given > 0) {
    throw ConfigError("give either detector.calibration_file or inline penalties, not both");
  }
  if (!file.empty()) {
    std::filesystem::path path(file);
    if (path.is_relative()) path = base_dir / path;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read calibration file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    config.frozen = parse_calibration(buffer.str(), d);
    d = *config.frozen;
  } else if (given == 4) {
    read(j, "lambda1", d.lambda1, where);
    read(j, "lambda2", d.lambda2, where);
    read(j, "threshold", d.threshold, where);
    read(j, "normalization", d.normalization, where);
    config.frozen = d;
  } else if (given > 0) {
    throw ConfigError("inline calibration needs lambda1, lambda2, threshold and normalization");
  }
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                       const Overrides& overrides) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"name", "testbed", "replications", "seed", "ticks", "onset", "workers",
              "calibration_ticks", "log_replications", "attack", "linear", "grid", "detector",
              "chi2"});
  RunConfig config;
  Scenario base;
  const std::string where = "config";
  read(j, "name", base.name, where);
  std::string testbed = "linear";
  read(j, "testbed", testbed, where);
  if (testbed == "linear") {
    base.testbed = Testbed::kLinear;
  } else if (testbed == "grid14") {
    base.testbed = Testbed::kGrid14;
    base.replications = 50;
    base.ticks = 1200;
    base.onset = 1000;
    base.calibration_ticks = 2000;
  } else {
    throw ConfigError("testbed must be 'linear' or 'grid14'");
  }
  read(j, "replications", base.replications, where);
  read(j, "seed", base.seed, where);
  read(j, "ticks", base.ticks, where);
  read(j, "onset", base.onset, where);
  read(j, "workers", base.workers, where);
  read(j, "calibration_ticks", base.calibration_ticks, where);
  read(j, "log_replications", base.log_replications, where);
  if (overrides.seed) base.seed = *overrides.seed;
  if (overrides.workers) base.workers = *overrides.workers;

  if (j.contains("linear")) {
    const Json& l = j.at("linear");
    check_keys(l, "linear",
               {"n", "m", "density", "groups", "eig_min", "eig_max", "process_noise_var",
                "measurement_noise_sd", "system_seed"});
    auto& o = base.linear.system;
    read(l, "n", o.n, "linear");
    read(l, "m", o.m, "linear");
    read(l, "density", o.density, "linear");
    read(l, "groups", o.groups, "linear");
    read(l, "eig_min", o.eig_min, "linear");
    read(l, "eig_max", o.eig_max, "linear");
    read(l, "process_noise_var", o.process_noise_var, "linear");
    read(l, "measurement_noise_sd", o.measurement_noise_sd, "linear");
    read(l, "system_seed", base.linear.system_seed, "linear");
  }
  if (j.contains("grid")) {
    const Json& g = j.at("grid");
    check_keys(g, "grid", {"case", "sigma_voltage", "sigma_power", "scope", "loads"});
    std::string path;
    read(g, "case", path, "grid");
    if (!path.empty()) {
      base.grid.case_path = path;
      if (base.grid.case_path.is_relative()) base.grid.case_path = base_dir / base.grid.case_path;
    }
    read(g, "sigma_voltage", base.grid.sigma_voltage, "grid");
    read(g, "sigma_power", base.grid.sigma_power, "grid");
    std::string scope = "local";
    read(g, "scope", scope, "grid");
    if (scope == "local") {
      base.grid.scope = net::NeighborhoodScope::kLocal;
    } else if (scope == "one_hop") {
      base.grid.scope = net::NeighborhoodScope::kOneHop;
    } else {
      throw ConfigError("grid.scope must be 'local' or 'one_hop'");
    }
    if (g.contains("loads")) {
      const Json& ld = g.at("loads");
      check_keys(ld, "grid.loads",
                 {"ticks_per_day", "daily_amplitude", "ar_coefficient", "noise_sd",
                  "power_factor", "scale"});
      auto& o = base.grid.loads;
      read(ld, "ticks_per_day", o.ticks_per_day, "grid.loads");
      read(ld, "daily_amplitude", o.daily_amplitude, "grid.loads");
      read(ld, "ar_coefficient", o.ar_coefficient, "grid.loads");
      read(ld, "noise_sd", o.noise_sd, "grid.loads");
      read(ld, "power_factor", o.power_factor, "grid.loads");
      read(ld, "scale", o.scale, "grid.loads");
    }
  }
  if (j.contains("detector")) read_detector(j.at("detector"), base, config, base_dir);
  if (j.contains("chi2")) {
    check_keys(j.at("chi2"), "chi2", {"alpha"});
    read(j.at("chi2"), "alpha", base.chi2_alpha, "chi2");
  }

  std::vector<AttackPlan> attacks;
  std::vector<std::string> suffixes;
  if (!j.contains("attack") || j.at("attack").is_null()) {
    attacks.emplace_back();
    suffixes.emplace_back();
  } else {
    const Json& a = j.at("attack");
    check_keys(a, "attack", {"target_bus", "onset", "snr", "level", "beta"});
    AttackPlan plan;
    if (a.contains("target_bus") && !a.at("target_bus").is_null()) {
      int target = 0;
      read(a, "target_bus", target, "attack");
      plan.target = target;
    }
    read(a, "onset", base.onset, "attack");
    const int kinds = a.contains("snr") + a.contains("level") + a.contains("beta");
    if (kinds != 1) throw ConfigError("attack needs exactly one of snr, level or beta");
    if (a.contains("snr")) {
      const std::vector<double> values = number_list(a.at("snr"), "snr");
      for (double v : values) {
        AttackPlan p = plan;
        p.kind = v == 0.0 ? AttackPlan::Kind::kNone : AttackPlan::Kind::kSnr;
        p.snr = v;
        if (p.kind == AttackPlan::Kind::kNone) p.target.reset();
        attacks.push_back(p);
        suffixes.push_back(values.size() > 1 ? "_snr" + format_value(v) : "");
      }
    } else if (a.contains("level")) {
      const std::vector<double> values = number_list(a.at("level"), "level");
      for (double v : values) {
        if (v != static_cast<int>(v)) throw ConfigError("level must be an integer");
        AttackPlan p = plan;
        p.kind = AttackPlan::Kind::kLevel;
        p.level = static_cast<int>(v);
        attacks.push_back(p);
        suffixes.push_back(values.size() > 1 ? "_level" + format_value(v) : "");
      }
    } else {
      const std::vector<double> values = number_list(a.at("beta"), "beta");
      if (!plan.target) throw ConfigError("a beta attack needs target_bus");
      plan.kind = AttackPlan::Kind::kBeta;
      plan.beta = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
      attacks.push_back(plan);
      suffixes.emplace_back();
    }
  }
  for (std::size_t k = 0; k < attacks.size(); ++k) {
    Scenario s = base;
    s.attack = attacks[k];
    s.name = base.name + suffixes[k];
    validate(s);
    config.scenarios.push_back(std::move(s));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.parent_path(), overrides);
}

std::string calibration_json(const detect::CalibrationReport& report) {
  Json j;
  j["lambda1"] = report.config.lambda1;
  j["lambda2"] = report.config.lambda2;
  j["threshold"] = report.config.threshold;
  j["normalization"] = report.config.normalization;
  j["alpha"] = report.config.alpha;
  j["ticks"] = report.ticks;
  j["lambda_max_median"] = report.lambda_max_median;
  j["zero_fraction"] = report.zero_fraction;
  j["mean_active_groups"] = report.mean_active_groups;
  return j.dump(2) + "\n";
}

detect::DetectorConfig parse_calibration(std::string_view text, detect::DetectorConfig base) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("calibration is not valid JSON: ") + e.what());
  }
  for (const char* key : {"lambda1", "lambda2", "threshold", "normalization"}) {
    if (!j.contains(key)) throw ConfigError(std::string("calibration lacks '") + key + "'");
  }
  read(j, "lambda1", base.lambda1, "calibration");
  read(j, "lambda2", base.lambda2, "calibration");
  read(j, "threshold", base.threshold, "calibration");
  read(j, "normalization", base.normalization, "calibration");
  read(j, "alpha", base.alpha, "calibration");
  return base;
}

std::string config_reference() {
  return R"(Configuration (JSON). Every key is optional; defaults in brackets.
  name                 scenario name ["scenario"]
  testbed              "linear" | "grid14" ["linear"]
  replications         N [200 linear, 50 grid14]
  seed                 master seed [1]
  ticks                stream length [2000 linear, 1200 grid14]
  onset                attack onset tick [100 linear, 1000 grid14]
  workers              worker threads [1]
  calibration_ticks    in-control calibration ticks [50000 linear, 2000 grid14]
  log_replications     replications written as stats_/plot_ files [0]
  attack               absent or null for no attack, else an object with
    target_bus         attacked group or bus id [drawn uniformly per replication]
    onset              overrides the top-level onset
    snr                number or list (linear; 0 means no attack)
    level              integer 1..5 or list (grid14)
    beta               state shift over the target's states (needs target_bus)
  linear
    n, m, density, groups                  [20, 30, 0.2, 4]
    eig_min, eig_max                       [0.2, 0.95]
    process_noise_var                      [1e-4]
    measurement_noise_sd                   [0.002]
    system_seed                            [1]
  grid
    case                 case file [bundled IEEE 14-bus]
    sigma_voltage        [0.01]
    sigma_power          [0.02]
    scope                "local" | "one_hop" ["local"]
    loads                ticks_per_day [288], daily_amplitude [0.15],
                         ar_coefficient [0.9], noise_sd [0.02],
                         power_factor [0.95], scale [1.0]
  detector
    alpha                false-alarm rate of the threshold [0.005]
    lambda_fraction      lambda2 = fraction * median lambda_max [0.1]
    lambda_ratio         lambda1 = ratio * lambda2 [0.5]
    tol, max_iter        alternating loop [1e-6, 50]
    sgl_tol, sgl_max_sweeps                [1e-8, 10000]
    weight_by_group_size [false]
    seed_fixed_point     [true]
    lambda1, lambda2, threshold, normalization
                         skip calibration when all four are given
    calibration_file     output of `calibrate`, instead of the four above
  chi2
    alpha                [0.005]
)";
}

}  // namespace gridsentinel::bench

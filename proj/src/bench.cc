#include "gridsentinel/bench.h"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "gridsentinel/attack.h"
#include "gridsentinel/baselines.h"
#include "gridsentinel/errors.h"
#include "gridsentinel/estimator.h"
#include "gridsentinel/random.h"

namespace gridsentinel::bench {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kCalibrationTag = 0xCA1B;
constexpr std::uint64_t kAttackDraw = 1;
constexpr std::uint64_t kNoiseDraw = 2;
constexpr std::uint64_t kLoadDraw = 3;

std::uint64_t attack_tag(const AttackPlan& attack) {
  std::uint64_t tag = static_cast<std::uint64_t>(attack.kind) * 1000003ULL;
  switch (attack.kind) {
    case AttackPlan::Kind::kSnr:
      tag += static_cast<std::uint64_t>(std::llround(attack.snr * 1000.0));
      break;
    case AttackPlan::Kind::kLevel:
      tag += static_cast<std::uint64_t>(attack.level);
      break;
    default:
      break;
  }
  if (attack.target) tag = mix_seed(tag ^ static_cast<std::uint64_t>(*attack.target));
  return tag;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string to_string(Testbed testbed) {
  return testbed == Testbed::kLinear ? "linear" : "grid14";
}

std::string describe(const AttackPlan& attack) {
  std::string text;
  switch (attack.kind) {
    case AttackPlan::Kind::kNone:
      return "none";
    case AttackPlan::Kind::kSnr:
      text = "snr " + format_double(attack.snr);
      break;
    case AttackPlan::Kind::kLevel:
      text = "level " + std::to_string(attack.level);
      break;
    case AttackPlan::Kind::kBeta:
      text = "beta";
      break;
  }
  if (attack.target) text += " on " + std::to_string(*attack.target);
  return text;
}

Scenario::Scenario() { linear.system.measurement_noise_sd = 0.002; }

void validate(const Scenario& s) {
  if (s.replications < 1) throw ConfigError("replications must be >= 1");
  if (s.ticks < 2) throw ConfigError("ticks must be >= 2");
  if (s.onset < 1 || s.onset >= s.ticks) throw ConfigError("onset must lie in [1, ticks)");
  if (s.workers < 1) throw ConfigError("workers must be >= 1");
  if (s.calibration_ticks < 1) throw ConfigError("calibration_ticks must be >= 1");
  if (!(s.chi2_alpha > 0.0 && s.chi2_alpha < 1.0)) throw ConfigError("chi2 alpha must lie in (0, 1)");
  if (!(s.detector.alpha > 0.0 && s.detector.alpha < 1.0)) {
    throw ConfigError("detector alpha must lie in (0, 1)");
  }
  if (s.log_replications < 0) throw ConfigError("log_replications must be >= 0");
  switch (s.attack.kind) {
    case AttackPlan::Kind::kNone:
      break;
    case AttackPlan::Kind::kSnr:
      if (s.testbed != Testbed::kLinear) throw ConfigError("SNR attacks need the linear testbed");
      if (!(s.attack.snr >= 0.0)) throw ConfigError("snr must be >= 0");
      break;
    case AttackPlan::Kind::kLevel:
      if (s.testbed != Testbed::kGrid14) throw ConfigError("level attacks need the grid14 testbed");
      if (s.attack.level < 1 || s.attack.level > 5) throw ConfigError("level must lie in 1..5");
      break;
    case AttackPlan::Kind::kBeta:
      if (s.attack.beta.size() == 0) throw ConfigError("beta attack needs a shift vector");
      break;
  }
}

RunLengthSummary summarize_run_lengths(const std::vector<int>& lengths,
                                       const std::vector<bool>& censored) {
  if (lengths.empty()) throw MetricsError("no run lengths to summarize");
  if (lengths.size() != censored.size()) throw MetricsError("run lengths and flags differ in size");
  const auto moments = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return std::make_pair(mean, sd);
  };
  RunLengthSummary out;
  std::vector<double> all;
  std::vector<double> complete;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    all.push_back(lengths[k]);
    if (censored[k]) {
      ++out.censored;
    } else {
      complete.push_back(lengths[k]);
    }
  }
  out.count = static_cast<int>(all.size());
  out.uncensored = static_cast<int>(complete.size());
  std::tie(out.mean, out.sd) = moments(all);
  out.se = out.sd / std::sqrt(static_cast<double>(out.count));
  if (!complete.empty()) {
    const auto [mean, sd] = moments(complete);
    out.mean_uncensored = mean;
    out.sd_uncensored = sd;
  }
  return out;
}

Confusion compute_confusion(const std::vector<std::pair<int, int>>& records,
                            const std::vector<int>& classes) {
  if (records.empty()) throw MetricsError("no localization records");
  const std::set<int> known(classes.begin(), classes.end());
  Confusion out;
  out.total = static_cast<int>(records.size());
  int correct = 0;
  for (const auto& [truth, predicted] : records) {
    if (!known.count(truth)) {
      throw MetricsError("true class " + std::to_string(truth) + " is not a candidate");
    }
    if (predicted != -1 && !known.count(predicted)) {
      throw MetricsError("predicted class " + std::to_string(predicted) + " is not a candidate");
    }
    if (truth == predicted) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / out.total;

  double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
  int n_p = 0, n_r = 0, n_f = 0;
  for (int c : known) {
    int tp = 0, predicted_c = 0, actual_c = 0;
    for (const auto& [truth, predicted] : records) {
      if (predicted == c) ++predicted_c;
      if (truth == c) ++actual_c;
      if (truth == c && predicted == c) ++tp;
    }
    ClassMetrics m;
    m.id = c;
    m.support = actual_c;
    if (predicted_c > 0) m.precision = static_cast<double>(tp) / predicted_c;
    if (actual_c > 0) m.recall = static_cast<double>(tp) / actual_c;
    if (m.precision && m.recall) {
      const double denom = *m.precision + *m.recall;
      m.f = denom > 0.0 ? 2.0 * *m.precision * *m.recall / denom : 0.0;
    }
    if (m.precision) sum_p += *m.precision, ++n_p;
    if (m.recall) sum_r += *m.recall, ++n_r;
    if (m.f) sum_f += *m.f, ++n_f;
    out.classes.push_back(m);
  }
  if (n_p > 0) out.macro_precision = sum_p / n_p;
  if (n_r > 0) out.macro_recall = sum_r / n_r;
  if (n_f > 0) out.macro_f = sum_f / n_f;
  return out;
}

RunMetrics aggregate(const Scenario& scenario, std::vector<ReplicationRecord> records,
                     const std::vector<int>& classes, double threshold) {
  std::sort(records.begin(), records.end(),
            [](const ReplicationRecord& a, const ReplicationRecord& b) { return a.index < b.index; });
  RunMetrics out;
  out.name = scenario.name;
  out.testbed = scenario.testbed;
  out.attack = describe(scenario.attack);
  out.kind = scenario.attack.kind;
  if (scenario.attack.kind == AttackPlan::Kind::kSnr) out.magnitude = scenario.attack.snr;
  if (scenario.attack.kind == AttackPlan::Kind::kLevel) out.magnitude = scenario.attack.level;
  out.replications = static_cast<int>(records.size());
  out.onset = scenario.attack.kind == AttackPlan::Kind::kNone ? 0 : scenario.onset;
  out.threshold = threshold;

  std::vector<int> sgl_len, chi_len;
  std::vector<bool> sgl_cens, chi_cens;
  std::vector<std::pair<int, int>> sgl_loc, ht_loc, ht_sgl_loc;
  const bool attacked = scenario.attack.kind != AttackPlan::Kind::kNone;
  for (const auto& r : records) {
    if (r.failed) {
      ++out.failures;
      continue;
    }
    sgl_len.push_back(r.run_length);
    sgl_cens.push_back(r.censored);
    chi_len.push_back(r.chi2_run_length);
    chi_cens.push_back(r.chi2_censored);
    if (!attacked) continue;
    if (!r.censored) {
      sgl_loc.emplace_back(r.target, r.location);
      ht_sgl_loc.emplace_back(r.target, r.ht_location);
    }
    if (!r.chi2_censored) ht_loc.emplace_back(r.target, r.ht_chi2_location);
  }
  if (sgl_len.empty()) throw HarnessError("every replication of '" + scenario.name + "' failed");
  out.sgl = summarize_run_lengths(sgl_len, sgl_cens);
  out.chi2 = summarize_run_lengths(chi_len, chi_cens);
  if (!sgl_loc.empty()) {
    out.sgl_localization = compute_confusion(sgl_loc, classes);
    out.ht_sgl_localization = compute_confusion(ht_sgl_loc, classes);
  }
  if (!ht_loc.empty()) out.ht_localization = compute_confusion(ht_loc, classes);
  out.records = std::move(records);
  return out;
}

// ---------------------------------------------------------------------------
// Harness

struct Harness::Impl {
  Scenario setup;
  std::vector<detect::Candidate> candidates;
  baselines::ChiSqConfig chi2;

  std::unique_ptr<linear::LinearSystem> sys;
  std::unique_ptr<estimation::WlsSolver> wls;
  MatrixXd state_cov;
  std::unique_ptr<detect::LinearDetector> linear_detector;

  std::unique_ptr<net::NetworkCase> grid;
  std::unique_ptr<net::MeasurementPlan> plan;
  std::unique_ptr<detect::GridDetector> grid_detector;
  VectorXd flat;

  bool is_linear() const { return setup.testbed == Testbed::kLinear; }

  const detect::Candidate& candidate(int id) const {
    for (const auto& c : candidates) {
      if (c.id == id) return c;
    }
    throw ConfigError("attack target " + std::to_string(id) + " is not a candidate");
  }

  std::vector<VectorXd> linear_stream(int ticks, const detect::Candidate* target,
                                      const VectorXd& beta, int onset, std::uint64_t seed,
                                      std::vector<VectorXd>* states) const {
    Rng rng(seed);
    VectorXd x = VectorXd::Zero(sys->n());
    std::vector<VectorXd> z_out;
    z_out.reserve(ticks);
    for (int t = 1; t <= ticks; ++t) {
      VectorXd z = linear::measure(*sys, x, rng);
      VectorXd x_seen = x;
      if (target != nullptr && t >= onset) {
        const attack::AttackedReading a =
            attack::apply_covert_attack(x, z, target->state_indices, beta, target->mask, sys->H);
        z = a.z;
        x_seen = a.x;
      }
      if (states != nullptr) states->push_back(x_seen);
      x = linear::step(*sys, x, wls->solve(z), rng);
      z_out.push_back(std::move(z));
    }
    return z_out;
  }

  grid::Stream grid_stream(int ticks, const grid::StreamAttack* attack, std::uint64_t load_seed,
                           std::uint64_t noise_seed) const {
    const grid::LoadProfile loads = grid::synth_loads(*grid, ticks, load_seed, setup.grid.loads);
    const grid::DispatchPlan dispatch = grid::dispatch(loads, *grid);
    return grid::simulate_stream(*grid, *plan, loads, dispatch, attack, noise_seed);
  }

  int ht(const VectorXd& z) const {
    try {
      if (is_linear()) return baselines::ht_localize(z, sys->H, sys->sensor_sd, candidates).location;
      const VectorXd warm = grid_detector->estimate(z, flat).x_hat;
      return baselines::ht_localize(z, *grid, *plan, candidates, warm).location;
    } catch (const LocalizationError&) {
      return -1;
    }
  }
};

Harness::Harness(const Scenario& setup) : impl_(std::make_unique<Impl>()) {
  Impl& s = *impl_;
  s.setup = setup;
  if (setup.testbed == Testbed::kLinear) {
    s.sys = std::make_unique<linear::LinearSystem>(
        linear::gen_random_system(setup.linear.system, setup.linear.system_seed));
    s.candidates = detect::linear_candidates(s.sys->H, s.sys->groups);
    s.wls = std::make_unique<estimation::WlsSolver>(s.sys->H, s.sys->sensor_sd);
    s.state_cov = linear::stationary_state_cov(*s.sys);
    s.linear_detector = std::make_unique<detect::LinearDetector>(s.sys->H, s.sys->sensor_sd,
                                                                 s.candidates, setup.detector);
    s.chi2 = baselines::chi_square_config(s.sys->m() - s.sys->n(), setup.chi2_alpha);
  } else {
    const std::filesystem::path path = setup.grid.case_path.empty()
                                           ? std::filesystem::path(GRIDSENTINEL_DATA_DIR) / "case14.json"
                                           : setup.grid.case_path;
    s.grid = std::make_unique<net::NetworkCase>(net::load_case(path));
    s.plan = std::make_unique<net::MeasurementPlan>(
        net::default_plan(*s.grid, setup.grid.sigma_voltage, setup.grid.sigma_power));
    s.candidates = detect::grid_candidates(*s.grid, *s.plan, setup.grid.scope);
    s.grid_detector =
        std::make_unique<detect::GridDetector>(*s.grid, *s.plan, s.candidates, setup.detector);
    s.flat = net::to_vector(*s.grid, net::flat_state(*s.grid));
    s.chi2 = baselines::chi_square_config(s.plan->size() - s.grid->state_dim(), setup.chi2_alpha);
  }
}

Harness::~Harness() = default;

detect::CalibrationReport Harness::calibrate() {
  Impl& s = *impl_;
  const int ticks = s.setup.calibration_ticks;
  const std::uint64_t seed = derive_seed(s.setup.seed, {kCalibrationTag});
  if (s.is_linear()) {
    const auto z = s.linear_stream(ticks, nullptr, VectorXd(), 0, derive_seed(seed, {kNoiseDraw}),
                                   nullptr);
    return detect::calibrate(*s.linear_detector, z, s.setup.penalty);
  }
  const grid::Stream stream =
      s.grid_stream(ticks, nullptr, derive_seed(seed, {kLoadDraw}), derive_seed(seed, {kNoiseDraw}));
  return detect::calibrate(*s.grid_detector, stream.z, s.setup.penalty);
}

const detect::DetectorConfig& Harness::detector_config() const {
  return impl_->is_linear() ? impl_->linear_detector->config() : impl_->grid_detector->config();
}

void Harness::set_detector_config(const detect::DetectorConfig& config) {
  if (impl_->is_linear()) {
    impl_->linear_detector->set_config(config);
  } else {
    impl_->grid_detector->set_config(config);
  }
}

std::vector<int> Harness::candidate_ids() const {
  std::vector<int> ids;
  for (const auto& c : impl_->candidates) ids.push_back(c.id);
  return ids;
}

const std::vector<detect::Candidate>& Harness::candidates() const { return impl_->candidates; }

int Harness::measurement_count() const {
  return impl_->is_linear() ? impl_->sys->m() : impl_->plan->size();
}

int Harness::state_count() const {
  return impl_->is_linear() ? impl_->sys->n() : impl_->grid->state_dim();
}

double Harness::chi2_threshold() const { return impl_->chi2.threshold; }

const Scenario& Harness::setup() const { return impl_->setup; }

SimulatedStream Harness::simulate(const Scenario& scenario, int index) const {
  const Impl& s = *impl_;
  if (scenario.testbed != s.setup.testbed) throw ConfigError("scenario testbed differs from the harness");
  validate(scenario);
  const std::uint64_t base = derive_seed(scenario.seed, {attack_tag(scenario.attack),
                                                         static_cast<std::uint64_t>(index)});
  Rng attack_rng(derive_seed(base, {kAttackDraw}));
  SimulatedStream out;
  const detect::Candidate* target = nullptr;
  if (scenario.attack.kind != AttackPlan::Kind::kNone) {
    if (scenario.attack.target) {
      target = &s.candidate(*scenario.attack.target);
    } else {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(s.candidates.size()) - 1);
      target = &s.candidates[pick(attack_rng)];
    }
    out.target = target->id;
    out.onset = scenario.onset;
  }
  const std::uint64_t noise_seed = derive_seed(base, {kNoiseDraw});

  if (s.is_linear()) {
    if (target != nullptr) {
      const int k = static_cast<int>(target->state_indices.size());
      if (scenario.attack.kind == AttackPlan::Kind::kBeta) {
        if (scenario.attack.beta.size() != k) {
          throw ConfigError("beta has " + std::to_string(scenario.attack.beta.size()) +
                            " entries but the target has " + std::to_string(k) + " states");
        }
        out.beta = scenario.attack.beta;
      } else {
        MatrixXd cov(k, k);
        for (int a = 0; a < k; ++a) {
          for (int b = 0; b < k; ++b) {
            cov(a, b) = s.state_cov(target->state_indices[a], target->state_indices[b]);
          }
        }
        const VectorXd direction = standard_normal(attack_rng, k).normalized();
        out.beta = attack::beta_from_snr(direction, scenario.attack.snr, cov);
      }
    }
    out.z = s.linear_stream(scenario.ticks, target, out.beta, scenario.onset, noise_seed, &out.x);
    return out;
  }

  grid::StreamAttack attack;
  if (target != nullptr) {
    attack.spec.target = target->id;
    attack.spec.onset = scenario.onset;
    attack.mask = target->mask;
    if (scenario.attack.kind == AttackPlan::Kind::kLevel) {
      attack.spec.magnitude = attack::Magnitude::kLevel;
      attack.spec.level = scenario.attack.level;
    } else {
      attack.spec.magnitude = attack::Magnitude::kBeta;
      attack.spec.beta = scenario.attack.beta;
      out.beta = scenario.attack.beta;
    }
  }
  grid::Stream stream = s.grid_stream(scenario.ticks, target != nullptr ? &attack : nullptr,
                                      derive_seed(base, {kLoadDraw}), noise_seed);
  out.z = std::move(stream.z);
  out.x = std::move(stream.x);
  return out;
}

detect::DetectionOutcome Harness::detect(const std::vector<VectorXd>& z, int start,
                                         bool stop_at_alarm) const {
  if (impl_->is_linear()) return detect::monitor(*impl_->linear_detector, z, start, stop_at_alarm);
  return detect::monitor(*impl_->grid_detector, z, impl_->flat, start, stop_at_alarm);
}

std::vector<double> Harness::chi2_series(const std::vector<VectorXd>& z) const {
  const Impl& s = *impl_;
  std::vector<double> out;
  out.reserve(z.size());
  VectorXd warm = s.flat;
  for (const auto& zt : z) {
    if (s.is_linear()) {
      out.push_back(s.wls->estimate(zt).chi2);
    } else {
      const estimation::EstimationResult e = s.grid_detector->estimate(zt, warm);
      warm = e.x_hat;
      out.push_back(e.chi2);
    }
  }
  return out;
}

ReplicationRecord Harness::replicate(const Scenario& scenario, int index) const {
  const Impl& s = *impl_;
  ReplicationRecord rec;
  rec.index = index;
  try {
    const SimulatedStream sim = simulate(scenario, index);
    rec.target = sim.target;
    const bool attacked = sim.target != -1;
    const int start = attacked ? sim.onset : 1;
    const int size = static_cast<int>(sim.z.size());

    const detect::DetectionOutcome out = detect(sim.z, start, true);
    rec.run_length = out.run_length;
    rec.censored = out.censored;
    rec.alarm_tick = out.alarm_tick.value_or(-1);
    rec.location = out.location;
    rec.tie = out.tie;
    rec.tied_ticks = out.tied_ticks;

    VectorXd warm = s.flat;
    rec.chi2_censored = true;
    for (int t = start; t <= size; ++t) {
      const VectorXd& z = sim.z[t - 1];
      double chi2 = 0.0;
      if (s.is_linear()) {
        chi2 = s.wls->estimate(z).chi2;
      } else {
        const estimation::EstimationResult e = s.grid_detector->estimate(z, warm);
        warm = e.x_hat;
        chi2 = e.chi2;
      }
      if (baselines::chi_square_alarm(chi2, s.chi2)) {
        rec.chi2_alarm_tick = t;
        rec.chi2_censored = false;
        break;
      }
    }
    rec.chi2_run_length = (rec.chi2_censored ? size : rec.chi2_alarm_tick) - start + 1;

    if (attacked) {
      if (rec.alarm_tick > 0) rec.ht_location = s.ht(sim.z[rec.alarm_tick - 1]);
      if (rec.chi2_alarm_tick > 0) rec.ht_chi2_location = s.ht(sim.z[rec.chi2_alarm_tick - 1]);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  return rec;
}

RunMetrics Harness::run(const Scenario& scenario) const {
  validate(scenario);
  if (scenario.testbed != impl_->setup.testbed) {
    throw ConfigError("scenario testbed differs from the harness");
  }
  if (scenario.attack.target) impl_->candidate(*scenario.attack.target);

  const int n = scenario.replications;
  std::vector<ReplicationRecord> records(n);
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto work = [&]() {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        records[i] = replicate(scenario, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    }
  };
  const int workers = std::min(scenario.workers, n);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  int failures = 0;
  std::string first;
  for (const auto& r : records) {
    if (!r.failed) continue;
    if (failures++ == 0) first = r.error;
  }
  if (failures * 20 > n) {
    throw HarnessError(scenario.name + ": " + std::to_string(failures) + " of " +
                       std::to_string(n) + " replications failed (first: " + first + ")");
  }
  return aggregate(scenario, std::move(records), candidate_ids(), detector_config().threshold);
}

std::vector<TickLog> Harness::logs(const Scenario& scenario) const {
  std::vector<TickLog> out;
  const int count = std::min(scenario.log_replications, scenario.replications);
  for (int i = 0; i < count; ++i) {
    const SimulatedStream sim = simulate(scenario, i);
    TickLog log;
    log.name = scenario.name + "_" + std::to_string(i);
    log.onset = sim.onset;
    log.ticks = detect(sim.z, 1, false).ticks;
    out.push_back(std::move(log));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> optional_value(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

Json to_json(const RunLengthSummary& s) {
  Json j;
  j["count"] = s.count;
  j["mean"] = s.mean;
  j["sd"] = s.sd;
  j["se"] = s.se;
  j["censored"] = s.censored;
  j["uncensored"] = s.uncensored;
  j["mean_uncensored"] = optional_json(s.mean_uncensored);
  j["sd_uncensored"] = optional_json(s.sd_uncensored);
  return j;
}

RunLengthSummary run_lengths_from_json(const Json& j) {
  RunLengthSummary s;
  s.count = j.at("count").get<int>();
  s.mean = j.at("mean").get<double>();
  s.sd = j.at("sd").get<double>();
  s.se = j.at("se").get<double>();
  s.censored = j.at("censored").get<int>();
  s.uncensored = j.at("uncensored").get<int>();
  s.mean_uncensored = optional_value(j.at("mean_uncensored"));
  s.sd_uncensored = optional_value(j.at("sd_uncensored"));
  return s;
}

Json to_json(const std::optional<Confusion>& c) {
  if (!c) return nullptr;
  Json j;
  j["total"] = c->total;
  j["accuracy"] = c->accuracy;
  j["macro_precision"] = optional_json(c->macro_precision);
  j["macro_recall"] = optional_json(c->macro_recall);
  j["macro_f"] = optional_json(c->macro_f);
  Json classes = Json::array();
  for (const auto& m : c->classes) {
    Json k;
    k["id"] = m.id;
    k["support"] = m.support;
    k["precision"] = optional_json(m.precision);
    k["recall"] = optional_json(m.recall);
    k["f"] = optional_json(m.f);
    classes.push_back(k);
  }
  j["classes"] = classes;
  return j;
}

std::optional<Confusion> confusion_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  Confusion c;
  c.total = j.at("total").get<int>();
  c.accuracy = j.at("accuracy").get<double>();
  c.macro_precision = optional_value(j.at("macro_precision"));
  c.macro_recall = optional_value(j.at("macro_recall"));
  c.macro_f = optional_value(j.at("macro_f"));
  for (const auto& k : j.at("classes")) {
    ClassMetrics m;
    m.id = k.at("id").get<int>();
    m.support = k.at("support").get<int>();
    m.precision = optional_value(k.at("precision"));
    m.recall = optional_value(k.at("recall"));
    m.f = optional_value(k.at("f"));
    c.classes.push_back(m);
  }
  return c;
}

std::string kind_name(AttackPlan::Kind kind) {
  switch (kind) {
    case AttackPlan::Kind::kNone:
      return "none";
    case AttackPlan::Kind::kSnr:
      return "snr";
    case AttackPlan::Kind::kLevel:
      return "level";
    case AttackPlan::Kind::kBeta:
      return "beta";
  }
  return "none";
}

AttackPlan::Kind kind_from_name(const std::string& name) {
  for (auto k : {AttackPlan::Kind::kNone, AttackPlan::Kind::kSnr, AttackPlan::Kind::kLevel,
                 AttackPlan::Kind::kBeta}) {
    if (kind_name(k) == name) return k;
  }
  throw MetricsError("unknown attack kind '" + name + "'");
}

Json to_json(const ReplicationRecord& r) {
  Json j;
  j["index"] = r.index;
  j["target"] = r.target;
  j["run_length"] = r.run_length;
  j["censored"] = r.censored;
  j["alarm_tick"] = r.alarm_tick;
  j["location"] = r.location;
  j["tie"] = r.tie;
  j["tied_ticks"] = r.tied_ticks;
  j["ht_location"] = r.ht_location;
  j["chi2_run_length"] = r.chi2_run_length;
  j["chi2_censored"] = r.chi2_censored;
  j["chi2_alarm_tick"] = r.chi2_alarm_tick;
  j["ht_chi2_location"] = r.ht_chi2_location;
  j["failed"] = r.failed;
  j["error"] = r.error;
  return j;
}

ReplicationRecord record_from_json(const Json& j) {
  ReplicationRecord r;
  r.index = j.at("index").get<int>();
  r.target = j.at("target").get<int>();
  r.run_length = j.at("run_length").get<int>();
  r.censored = j.at("censored").get<bool>();
  r.alarm_tick = j.at("alarm_tick").get<int>();
  r.location = j.at("location").get<int>();
  r.tie = j.at("tie").get<bool>();
  r.tied_ticks = j.at("tied_ticks").get<int>();
  r.ht_location = j.at("ht_location").get<int>();
  r.chi2_run_length = j.at("chi2_run_length").get<int>();
  r.chi2_censored = j.at("chi2_censored").get<bool>();
  r.chi2_alarm_tick = j.at("chi2_alarm_tick").get<int>();
  r.ht_chi2_location = j.at("ht_chi2_location").get<int>();
  r.failed = j.at("failed").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

Json to_json(const RunMetrics& m) {
  Json j;
  j["name"] = m.name;
  j["testbed"] = to_string(m.testbed);
  j["attack"] = m.attack;
  j["kind"] = kind_name(m.kind);
  j["magnitude"] = m.magnitude;
  j["replications"] = m.replications;
  j["failures"] = m.failures;
  j["onset"] = m.onset;
  j["threshold"] = m.threshold;
  j["sgl"] = to_json(m.sgl);
  j["chi2"] = to_json(m.chi2);
  j["sgl_localization"] = to_json(m.sgl_localization);
  j["ht_localization"] = to_json(m.ht_localization);
  j["ht_sgl_localization"] = to_json(m.ht_sgl_localization);
  Json records = Json::array();
  for (const auto& r : m.records) records.push_back(to_json(r));
  j["records"] = records;
  return j;
}

RunMetrics run_from_json(const Json& j) {
  RunMetrics m;
  m.name = j.at("name").get<std::string>();
  const std::string testbed = j.at("testbed").get<std::string>();
  if (testbed != "linear" && testbed != "grid14") throw MetricsError("unknown testbed '" + testbed + "'");
  m.testbed = testbed == "linear" ? Testbed::kLinear : Testbed::kGrid14;
  m.attack = j.at("attack").get<std::string>();
  m.kind = kind_from_name(j.at("kind").get<std::string>());
  m.magnitude = j.at("magnitude").get<double>();
  m.replications = j.at("replications").get<int>();
  m.failures = j.at("failures").get<int>();
  m.onset = j.at("onset").get<int>();
  m.threshold = j.at("threshold").get<double>();
  m.sgl = run_lengths_from_json(j.at("sgl"));
  m.chi2 = run_lengths_from_json(j.at("chi2"));
  m.sgl_localization = confusion_from_json(j.at("sgl_localization"));
  m.ht_localization = confusion_from_json(j.at("ht_localization"));
  m.ht_sgl_localization = confusion_from_json(j.at("ht_sgl_localization"));
  for (const auto& r : j.at("records")) m.records.push_back(record_from_json(r));
  return m;
}

std::string csv_value(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string safe_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "log" : out;
}

}  // namespace

std::string metrics_json(const Report& report) {
  Json j;
  j["name"] = report.name;
  j["notes"] = report.notes;
  if (report.calibration) {
    const auto& c = *report.calibration;
    Json cal;
    cal["ticks"] = c.ticks;
    cal["lambda1"] = c.config.lambda1;
    cal["lambda2"] = c.config.lambda2;
    cal["threshold"] = c.config.threshold;
    cal["normalization"] = c.config.normalization;
    cal["alpha"] = c.config.alpha;
    cal["lambda_max_median"] = c.lambda_max_median;
    cal["zero_fraction"] = c.zero_fraction;
    cal["mean_active_groups"] = c.mean_active_groups;
    j["calibration"] = cal;
  } else {
    j["calibration"] = nullptr;
  }
  Json runs = Json::array();
  for (const auto& m : report.runs) runs.push_back(to_json(m));
  j["runs"] = runs;
  return j.dump(2) + "\n";
}

std::vector<RunMetrics> parse_metrics_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw MetricsError(std::string("metrics document is not valid JSON: ") + e.what());
  }
  std::vector<RunMetrics> out;
  try {
    for (const auto& r : j.at("runs")) out.push_back(run_from_json(r));
  } catch (const Json::exception& e) {
    throw MetricsError(std::string("malformed metrics document: ") + e.what());
  }
  return out;
}

std::string table_csv(const Report& report) {
  bool all_linear = true, all_grid = true;
  for (const auto& m : report.runs) {
    all_linear = all_linear && m.testbed == Testbed::kLinear;
    all_grid = all_grid && m.testbed == Testbed::kGrid14;
  }
  const std::string key = all_linear ? "snr" : (all_grid ? "level" : "magnitude");
  std::ostringstream os;
  os << "scenario," << key
     << ",chi2_arl,chi2_arl_sd,chi2_arl_se,sgl_arl,sgl_arl_sd,sgl_arl_se,"
        "chi2_accuracy,sgl_accuracy,chi2_precision,sgl_precision,chi2_recall,sgl_recall,"
        "chi2_f,sgl_f,ht_at_sgl_accuracy,chi2_censored,sgl_censored,replications,failures\n";
  const auto acc = [](const std::optional<Confusion>& c) -> std::optional<double> {
    if (!c) return std::nullopt;
    return c->accuracy;
  };
  const auto field = [](const std::optional<Confusion>& c,
                        std::optional<double> Confusion::*member) -> std::optional<double> {
    if (!c) return std::nullopt;
    return (*c).*member;
  };
  for (const auto& m : report.runs) {
    os << m.name << ',' << format_double(m.magnitude) << ',' << format_double(m.chi2.mean) << ','
       << format_double(m.chi2.sd) << ',' << format_double(m.chi2.se) << ','
       << format_double(m.sgl.mean) << ',' << format_double(m.sgl.sd) << ','
       << format_double(m.sgl.se) << ',' << csv_value(acc(m.ht_localization)) << ','
       << csv_value(acc(m.sgl_localization)) << ','
       << csv_value(field(m.ht_localization, &Confusion::macro_precision)) << ','
       << csv_value(field(m.sgl_localization, &Confusion::macro_precision)) << ','
       << csv_value(field(m.ht_localization, &Confusion::macro_recall)) << ','
       << csv_value(field(m.sgl_localization, &Confusion::macro_recall)) << ','
       << csv_value(field(m.ht_localization, &Confusion::macro_f)) << ','
       << csv_value(field(m.sgl_localization, &Confusion::macro_f)) << ','
       << csv_value(acc(m.ht_sgl_localization)) << ',' << m.chi2.censored << ','
       << m.sgl.censored << ',' << m.replications << ',' << m.failures << '\n';
  }
  return os.str();
}

std::string plot_svg(const TickLog& log) {
  if (log.ticks.empty()) throw MetricsError("plot '" + log.name + "' has no ticks");
  constexpr double kWidth = 800.0, kHeight = 320.0;
  constexpr double kLeft = 60.0, kRight = 20.0, kTop = 30.0, kBottom = 40.0;
  const double t0 = log.ticks.front().t;
  const double t1 = std::max(log.ticks.back().t, log.ticks.front().t + 1);
  double ymax = 0.0;
  for (const auto& k : log.ticks) ymax = std::max({ymax, k.statistic, k.threshold});
  if (ymax <= 0.0) ymax = 1.0;
  ymax *= 1.05;
  const auto px = [&](double t) { return kLeft + (t - t0) / (t1 - t0) * (kWidth - kLeft - kRight); };
  const auto py = [&](double y) { return kTop + (1.0 - y / ymax) * (kHeight - kTop - kBottom); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "<title>" << log.name << "</title>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line class=\"axis\" x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
     << kWidth - kRight << "\" y2=\"" << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  os << "<line class=\"axis\" x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
     << "\" y2=\"" << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  os << "<polyline class=\"statistic\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"";
  for (std::size_t k = 0; k < log.ticks.size(); ++k) {
    if (k > 0) os << ' ';
    os << px(log.ticks[k].t) << ',' << py(log.ticks[k].statistic);
  }
  os << "\"/>\n";
  const double threshold = log.ticks.front().threshold;
  os << "<line class=\"threshold\" x1=\"" << kLeft << "\" y1=\"" << py(threshold) << "\" x2=\""
     << kWidth - kRight << "\" y2=\"" << py(threshold)
     << "\" stroke=\"firebrick\" stroke-dasharray=\"6,4\"/>\n";
  if (log.onset > 0) {
    os << "<line class=\"onset\" x1=\"" << px(log.onset) << "\" y1=\"" << kTop << "\" x2=\""
       << px(log.onset) << "\" y2=\"" << kHeight - kBottom
       << "\" stroke=\"gray\" stroke-dasharray=\"2,3\"/>\n";
    os << "<text x=\"" << px(log.onset) + 4.0 << "\" y=\"" << kTop + 12.0
       << "\" font-size=\"11\">onset t=" << log.onset << "</text>\n";
  }
  os << "<text x=\"" << (kWidth - kRight) << "\" y=\"" << py(threshold) - 4.0
     << "\" font-size=\"11\" text-anchor=\"end\">threshold</text>\n";
  os << "<text x=\"" << kWidth / 2.0 << "\" y=\"" << kHeight - 8.0
     << "\" font-size=\"12\" text-anchor=\"middle\">t</text>\n";
  os << "<text x=\"14\" y=\"" << kHeight / 2.0
     << "\" font-size=\"12\" transform=\"rotate(-90 14 " << kHeight / 2.0
     << ")\" text-anchor=\"middle\">statistic</text>\n";
  os << "<text x=\"" << kLeft << "\" y=\"" << kHeight - kBottom + 14.0 << "\" font-size=\"10\">"
     << static_cast<int>(t0) << "</text>\n";
  os << "<text x=\"" << kWidth - kRight << "\" y=\"" << kHeight - kBottom + 14.0
     << "\" font-size=\"10\" text-anchor=\"end\">" << static_cast<int>(t1) << "</text>\n";
  os << "<text x=\"" << kLeft - 4.0 << "\" y=\"" << kTop + 4.0
     << "\" font-size=\"10\" text-anchor=\"end\">" << ymax << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const Report& report,
                                               const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (report.runs.empty()) throw MetricsError("report has no metrics");

  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back("metrics.json", metrics_json(report));
  files.emplace_back("table.csv", table_csv(report));
  std::set<std::string> names;
  for (const auto& log : report.logs) {
    const std::string name = safe_name(log.name);
    if (!names.insert(name).second) throw MetricsError("duplicate log name '" + name + "'");
    std::ostringstream stats;
    detect::write_tick_csv(stats, log.ticks);
    files.emplace_back("stats_" + name + ".csv", stats.str());
    files.emplace_back("plot_" + name + ".svg", plot_svg(log));
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<fs::path> staged;
  std::vector<fs::path> written;
  const auto cleanup = [&]() {
    std::error_code ignore;
    for (const auto& p : staged) fs::remove(p, ignore);
    for (const auto& p : written) fs::remove(p, ignore);
  };
  for (const auto& [name, content] : files) {
    const fs::path tmp = out_dir / (name + ".tmp");
    std::ofstream out(tmp, std::ios::binary);
    if (out) staged.push_back(tmp);
    out << content;
    out.close();
    if (!out) {
      cleanup();
      throw IoError("cannot write " + tmp.string());
    }
  }
  for (std::size_t k = 0; k < files.size(); ++k) {
    const fs::path target = out_dir / files[k].first;
    fs::rename(staged[k], target, ec);
    if (ec) {
      cleanup();
      throw IoError("cannot write " + target.string() + ": " + ec.message());
    }
    written.push_back(target);
  }
  return written;
}

}  // namespace gridsentinel::bench

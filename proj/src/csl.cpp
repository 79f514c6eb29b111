#include "rtdtr/csl.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "rtdtr/rng.hpp"

namespace rtdtr {

using nlohmann::json;

namespace {

constexpr std::uint64_t kDoseStream = 101;

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

std::vector<double> dose_levels(const CslConfig& cfg) {
  std::vector<double> levels;
  const auto count = static_cast<int>(std::floor((cfg.dose_hi - cfg.dose_lo) / cfg.dose_step + 1e-9));
  for (int i = 0; i <= count; ++i) levels.push_back(cfg.dose_lo + i * cfg.dose_step);
  return levels;
}

// Uniform choice among levels[i] != current satisfying keep(level).
template <typename Keep>
double pick_other(const std::vector<double>& levels, double current, double u, Keep keep) {
  std::vector<double> options;
  for (double d : levels)
    if (d != current && keep(d)) options.push_back(d);
  if (options.empty()) return current;
  const auto i = std::min(options.size() - 1, static_cast<std::size_t>(u * static_cast<double>(options.size())));
  return options[i];
}

}  // namespace

CslConfig csl_config_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  CslConfig cfg;
  read_if(j, "version", cfg.version);
  if (auto it = j.find("grid"); it != j.end()) {
    double t_end = cfg.grid.t_end(), dt = cfg.grid.dt(), cdt = cfg.grid.covariate_dt();
    read_if(*it, "t_end", t_end);
    read_if(*it, "dt", dt);
    read_if(*it, "covariate_dt", cdt);
    cfg.grid = TimeGrid(t_end, dt, cdt);
  }
  read_if(j, "dose_lo", cfg.dose_lo);
  read_if(j, "dose_hi", cfg.dose_hi);
  read_if(j, "dose_step", cfg.dose_step);
  read_if(j, "delta", cfg.delta);
  read_if(j, "bmi_mean", cfg.bmi_mean);
  read_if(j, "bmi_sd", cfg.bmi_sd);
  read_if(j, "bmi_lo", cfg.bmi_lo);
  read_if(j, "bmi_hi", cfg.bmi_hi);
  read_if(j, "observational", cfg.observational);
  read_if(j, "dilation_init_lo", cfg.dilation_init_lo);
  read_if(j, "dilation_init_hi", cfg.dilation_init_hi);
  read_if(j, "dilation_rate", cfg.dilation_rate);
  read_if(j, "dilation_rate_dose", cfg.dilation_rate_dose);
  read_if(j, "dilation_rate_latent", cfg.dilation_rate_latent);
  read_if(j, "dilation_noise_sd", cfg.dilation_noise_sd);
  read_if(j, "completion", cfg.completion);
  read_if(j, "y0", cfg.y0);
  read_if(j, "delay", cfg.delay);
  read_if(j, "delay_pivot", cfg.delay_pivot);
  read_if(j, "dose_adequate", cfg.dose_adequate);
  read_if(j, "long_interval", cfg.long_interval);
  read_if(j, "per_change", cfg.per_change);
  read_if(j, "change_pivot", cfg.change_pivot);
  read_if(j, "latent", cfg.latent);
  read_if(j, "sd", cfg.sd);
  validate_csl_config(cfg);
  return cfg;
}

CslConfig load_csl_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSL config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return csl_config_from_json(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError("CSL config " + path + ": " + e.what());
  }
}

std::string csl_config_to_json(const CslConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["grid"] = {{"t_end", cfg.grid.t_end()}, {"dt", cfg.grid.dt()}, {"covariate_dt", cfg.grid.covariate_dt()}};
  j["dose_lo"] = cfg.dose_lo;
  j["dose_hi"] = cfg.dose_hi;
  j["dose_step"] = cfg.dose_step;
  j["delta"] = cfg.delta;
  j["bmi_mean"] = cfg.bmi_mean;
  j["bmi_sd"] = cfg.bmi_sd;
  j["bmi_lo"] = cfg.bmi_lo;
  j["bmi_hi"] = cfg.bmi_hi;
  j["observational"] = cfg.observational;
  j["dilation_init_lo"] = cfg.dilation_init_lo;
  j["dilation_init_hi"] = cfg.dilation_init_hi;
  j["dilation_rate"] = cfg.dilation_rate;
  j["dilation_rate_dose"] = cfg.dilation_rate_dose;
  j["dilation_rate_latent"] = cfg.dilation_rate_latent;
  j["dilation_noise_sd"] = cfg.dilation_noise_sd;
  j["completion"] = cfg.completion;
  j["y0"] = cfg.y0;
  j["delay"] = cfg.delay;
  j["delay_pivot"] = cfg.delay_pivot;
  j["dose_adequate"] = cfg.dose_adequate;
  j["long_interval"] = cfg.long_interval;
  j["per_change"] = cfg.per_change;
  j["change_pivot"] = cfg.change_pivot;
  j["latent"] = cfg.latent;
  j["sd"] = cfg.sd;
  return j.dump(2);
}

void validate_csl_config(const CslConfig& cfg) {
  if (!(cfg.dose_hi > cfg.dose_lo) || !(cfg.dose_step > 0.0))
    throw ConfigError("CSL config: dose range must be nonempty with a positive step");
  if (cfg.delta == 0.0) {
    if (cfg.dose_lo != 0.0) throw ConfigError("CSL config: delta = 0 requires dose_lo = 0");
  } else if (!(cfg.delta > cfg.dose_lo && cfg.delta <= cfg.dose_hi)) {
    throw ConfigError("CSL config: delta outside the dose range");
  }
  if (cfg.observational.size() != 4) throw ConfigError("CSL config: observational needs 4 parameters");
  if (cfg.completion.size() != 3) throw ConfigError("CSL config: completion needs 3 parameters");
  if (!(cfg.bmi_sd > 0.0) || !(cfg.bmi_hi > cfg.bmi_lo))
    throw ConfigError("CSL config: invalid BMI distribution");
  if (!(cfg.dose_adequate > 0.0)) throw ConfigError("CSL config: dose_adequate must be positive");
}

double csl_next_dilation(const CslConfig& cfg, double prev, double dose, double u, double noise) {
  const double rate = cfg.dilation_rate + cfg.dilation_rate_dose * dose / cfg.dose_hi + cfg.dilation_rate_latent * u;
  const double next = prev + cfg.grid.covariate_dt() * rate + cfg.dilation_noise_sd * noise;
  return std::min(10.0, std::max(prev, next));
}

double csl_delivery_intensity(const CslConfig& cfg, double z3, double dose) {
  const std::array<double, 3> x{1.0, z3 / 10.0, dose / cfg.dose_hi};
  return completion_intensity(cfg.completion, x);
}

int dose_stratum(double dose, double delta) {
  if (delta == 0.0) return dose > 0.0 ? 1 : 0;
  return dose >= delta ? 1 : 0;
}

StrataPath strata_from_dose(const DosePath& path, double delta) {
  StrataPath out;
  if (path.doses.empty()) return out;
  out.a0 = dose_stratum(path.doses.front(), delta);
  int current = out.a0;
  for (std::size_t i = 1; i < path.doses.size(); ++i) {
    const int s = dose_stratum(path.doses[i], delta);
    if (s != current) {
      out.switch_times.push_back(path.times[i]);
      current = s;
    }
  }
  return out;
}

struct CslWorld::Trajectory {
  SimulatedUnit sim;
  DosePath dose;
};

CslWorld::CslWorld(CslConfig cfg)
    : cfg_(std::move(cfg)), observational_(IntensityFamily::OxytocinLinExp, cfg_.observational) {
  validate_csl_config(cfg_);
  if (dose_stratum(cfg_.dose_lo, cfg_.delta) != 0)
    throw ConfigError("CSL config: the lowest dose must lie in the lower stratum");
  levels_ = dose_levels(cfg_);
}

CslWorld::Trajectory CslWorld::run(const IntensitySpec* switching, std::uint64_t seed,
                                   bool record_dose) const {
  const TimeGrid& grid = cfg_.grid;
  Engine cov_rng = make_engine(seed, {stream::kCovariates});
  Engine sw_rng = make_engine(seed, {stream::kSwitching});
  Engine comp_rng = make_engine(seed, {stream::kCompletion});
  Engine dose_rng = make_engine(seed, {kDoseStream});
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Trajectory out;
  UnitRecord& unit = out.sim.record;

  double bmi = 0.0;
  do {
    bmi = cfg_.bmi_mean + cfg_.bmi_sd * std_normal(cov_rng);
  } while (bmi < cfg_.bmi_lo || bmi > cfg_.bmi_hi);
  const double z_bmi = (bmi - cfg_.bmi_mean) / cfg_.bmi_sd;
  unit.z_bmi = z_bmi;
  unit.z2 = {bmi};
  const double u = std_normal(cov_rng);
  unit.u = u;

  const double dt = grid.dt();
  const std::size_t K = grid.steps();
  const std::size_t m = grid.steps_per_covariate();
  const double n_other = static_cast<double>(levels_.size() - 1);
  std::size_t lower_count = 0;
  for (double d : levels_) lower_count += dose_stratum(d, cfg_.delta) == 0 ? 1 : 0;
  const std::size_t upper_count = levels_.size() - lower_count;

  double dose = cfg_.dose_lo;
  int a = dose_stratum(dose, cfg_.delta);
  unit.a0 = a;
  if (record_dose) {
    out.dose.times.push_back(0.0);
    out.dose.doses.push_back(dose);
  }
  double last_dose_change = 0.0;
  double last_switch = 0.0;
  double z3 = cfg_.dilation_init_lo + (cfg_.dilation_init_hi - cfg_.dilation_init_lo) * unif(cov_rng);
  std::vector<double> z3_all;
  z3_all.reserve(K / m + 1);
  double shortfall = 0.0;
  std::size_t changes = 0;
  bool alive = true;
  unit.t_max = grid.t_end();

  auto advance_dilation = [&](double prev) {
    return csl_next_dilation(cfg_, prev, dose, u, std_normal(cov_rng));
  };
  auto set_dose = [&](double next, double t_next) {
    dose = next;
    last_dose_change = t_next;
    ++changes;
    const int s = dose_stratum(dose, cfg_.delta);
    if (s != a) {
      a = s;
      last_switch = t_next;
      unit.switch_times.push_back(t_next);
    }
    if (record_dose) {
      out.dose.times.push_back(t_next);
      out.dose.doses.push_back(dose);
    }
  };

  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid.time_at(k);
    if (k % m == 0) {
      if (k > 0) z3 = advance_dilation(z3);
      z3_all.push_back(z3);
    }
    // Every stream advances once per step so worlds stay aligned.
    const double uc = unif(comp_rng);
    const double us = unif(sw_rng);
    const double ut = unif(dose_rng);
    const double upick = unif(dose_rng);
    if (!alive) continue;

    HistoryView practice;
    practice.z3_now = z3;
    practice.time_since_change = t - last_dose_change;
    practice.z_bmi = z_bmi;
    practice.t = t;
    const double mu = intensity_eval(observational_, practice);
    const double lam_t = csl_delivery_intensity(cfg_, z3, dose);
    if (dose < cfg_.dose_adequate && t - last_dose_change >= cfg_.long_interval) shortfall += dt;

    const double t_next = grid.time_at(k + 1);
    if (uc < std::min(lam_t * dt, 1.0)) {
      unit.t_max = t_next;
      alive = false;
      continue;
    }
    if (!switching) {
      if (us < std::min(mu * dt, 1.0))
        set_dose(pick_other(levels_, dose, upick, [](double) { return true; }), t_next);
      continue;
    }
    HistoryView h;
    h.a_minus = a;
    h.z3_now = z3;
    h.time_since_change = t - last_switch;
    h.z_bmi = z_bmi;
    h.t = t;
    const double lam_a = intensity_eval(*switching, h);
    const int other = 1 - a;
    if (us < std::min(lam_a * dt, 1.0)) {
      set_dose(pick_other(levels_, dose, upick,
                          [&](double d) { return dose_stratum(d, cfg_.delta) == other; }),
               t_next);
      continue;
    }
    const double same = static_cast<double>((a == 1 ? upper_count : lower_count) - 1);
    if (same > 0.0 && ut < std::min(mu * same / n_other * dt, 1.0)) {
      set_dose(pick_other(levels_, dose, upick,
                          [&](double d) { return dose_stratum(d, cfg_.delta) == a; }),
               t_next);
    }
  }
  z3_all.push_back(advance_dilation(z3));
  unit.z3_path.assign(z3_all.begin(),
                      z3_all.begin() + static_cast<std::ptrdiff_t>(
                                           std::min(z3_all.size(), grid.covariate_points(unit.t_max))));

  const double under_fraction = shortfall / unit.t_max;
  const double mean = cfg_.y0 + cfg_.delay * std::max(0.0, z_bmi - cfg_.delay_pivot) * under_fraction +
                      cfg_.per_change * std::max(0.0, cfg_.change_pivot - z_bmi) * static_cast<double>(changes) +
                      cfg_.latent * u;
  unit.y = mean + cfg_.sd * std_normal(cov_rng);
  out.sim.z2_mean = z_bmi;
  out.sim.z3_integral = under_fraction;
  return out;
}

SimulatedUnit CslWorld::simulate(const IntensitySpec& switching, std::uint64_t seed) const {
  if (switching.family != IntensityFamily::OxytocinLinExp)
    throw ConfigError("CslWorld: policies must be OxytocinLinExp");
  return run(&switching, seed, false).sim;
}

SimulatedUnit CslWorld::simulate_observed(std::uint64_t seed) const {
  return run(nullptr, seed, false).sim;
}

std::pair<UnitRecord, DosePath> CslWorld::simulate_with_dose(std::uint64_t seed) const {
  auto traj = run(nullptr, seed, true);
  return {std::move(traj.sim.record), std::move(traj.dose)};
}

std::pair<UnitRecord, DosePath> CslWorld::simulate_with_dose(const IntensitySpec& switching,
                                                             std::uint64_t seed) const {
  auto traj = run(&switching, seed, true);
  return {std::move(traj.sim.record), std::move(traj.dose)};
}

Cohort generate_csl_like_cohort(const CslConfig& cfg, std::size_t n, std::uint64_t seed) {
  return generate_observed_cohort(CslWorld(cfg), n, seed);
}

}  // namespace rtdtr

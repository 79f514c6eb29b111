#include "rtdtr/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rtdtr/rng.hpp"

namespace rtdtr {

std::string_view case_name(CaseId id) {
  switch (id) {
    case CaseId::Case1: return "Case1";
    case CaseId::Case2: return "Case2";
    case CaseId::Case3: return "Case3";
    case CaseId::Case4: return "Case4";
    case CaseId::CslLike: return "CslLike";
  }
  return "?";
}

CaseId parse_case(std::string_view name) {
  for (auto id : {CaseId::Case1, CaseId::Case2, CaseId::Case3, CaseId::Case4, CaseId::CslLike}) {
    if (case_name(id) == name) return id;
  }
  throw ConfigError("unknown case: " + std::string(name));
}

CaseConfig CaseConfig::for_case(CaseId id) {
  CaseConfig cfg;
  cfg.case_id = id;
  const bool linear = id == CaseId::Case1 || id == CaseId::Case3;
  cfg.has_latent = id == CaseId::Case3 || id == CaseId::Case4;
  if (linear) {
    cfg.observational = IntensitySpec(IntensityFamily::LinExp, {-0.1, 0.05, 0.1});
    cfg.policy_family = IntensityFamily::LinExp;
  } else {
    cfg.observational = IntensitySpec(IntensityFamily::SigmoidSwitch, {0.8, -0.5, 1.2});
    cfg.policy_family = IntensityFamily::SigmoidSwitch;
  }
  if (cfg.has_latent) {
    cfg.covariate.latent = 0.01;
    cfg.completion.z2 = 0.08;
    cfg.completion.latent = 0.07;
  }
  auto& y = cfg.outcome;
  switch (id) {
    case CaseId::Case1:
      y.y0 = 3.0;
      y.switch_count = -0.1;
      y.z3_integral = 0.1;
      y.sd = 0.5;
      break;
    case CaseId::Case2:
      y.y0 = 1.0;
      y.treat_sigmoid = -4.0;
      y.sd = 0.1;
      break;
    case CaseId::Case3:
      y.y0 = 3.0;
      y.switch_by_z2 = -0.1;
      y.z3_integral = 0.1;
      y.latent = 0.6;
      y.sd = 0.3;
      y.uses_phi_y2 = false;
      break;
    case CaseId::Case4:
      y.y0 = 1.0;
      y.treat_sigmoid_by_z2 = -3.0;
      y.latent = 0.6;
      y.sd = 0.3;
      y.uses_phi_y2 = false;
      break;
    case CaseId::CslLike:
      throw ConfigError("CslLike is configured through CslConfig");
  }
  return cfg;
}

ReplicateParams draw_replicate_params(const CaseConfig& cfg, std::uint64_t seed) {
  Engine eng = make_engine(seed, {stream::kReplicateParams});
  ReplicateParams rp;
  const auto p1 = static_cast<std::size_t>(cfg.p1);
  const auto p2 = static_cast<std::size_t>(cfg.p2);
  std::uniform_real_distribution<double> rate(0.1, 0.9);
  std::uniform_real_distribution<double> scale(0.1, 1.0);
  std::normal_distribution<double> loc(0.0, 0.5);
  std::normal_distribution<double> load(1.0, 0.5);
  std::normal_distribution<double> coef(0.0, 0.1);

  rp.p.resize(p1);
  for (auto& v : rp.p) v = rate(eng);
  if (cfg.has_latent) {
    rp.alpha.resize(p2);
    rp.beta.resize(p2);
    for (std::size_t k = 0; k < p2; ++k) {
      rp.alpha[k] = loc(eng);
      rp.beta[k] = load(eng);
    }
  } else {
    rp.mu.resize(p2);
    for (auto& v : rp.mu) v = loc(eng);
  }
  rp.sigma.resize(p2);
  for (auto& v : rp.sigma) v = scale(eng);
  rp.phi_y1.resize(p1);
  for (auto& v : rp.phi_y1) v = coef(eng);
  if (cfg.outcome.uses_phi_y2) {
    rp.phi_y2.resize(p2);
    for (auto& v : rp.phi_y2) v = coef(eng);
  }
  return rp;
}

CaseWorld::CaseWorld(CaseConfig cfg, ReplicateParams rp) : cfg_(std::move(cfg)), rp_(std::move(rp)) {
  if (rp_.p.size() != static_cast<std::size_t>(cfg_.p1) ||
      rp_.sigma.size() != static_cast<std::size_t>(cfg_.p2))
    throw ConfigError("ReplicateParams dimensions do not match CaseConfig");
  if (cfg_.has_latent && (rp_.alpha.size() != rp_.sigma.size() || rp_.beta.size() != rp_.sigma.size()))
    throw ConfigError("latent cases need alpha and beta hyperdraws");
  if (!cfg_.has_latent && rp_.mu.size() != rp_.sigma.size())
    throw ConfigError("cases without a latent variable need mu hyperdraws");
}

SimulatedUnit CaseWorld::simulate(const IntensitySpec& switching, std::uint64_t seed) const {
  const TimeGrid& grid = cfg_.grid;
  const auto& cov = cfg_.covariate;
  const auto& comp = cfg_.completion;
  const auto& out = cfg_.outcome;
  Engine cov_rng = make_engine(seed, {stream::kCovariates});
  Engine sw_rng = make_engine(seed, {stream::kSwitching});
  Engine comp_rng = make_engine(seed, {stream::kCompletion});
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SimulatedUnit sim;
  UnitRecord& unit = sim.record;
  const double u = cfg_.has_latent ? 1.0 + std_normal(cov_rng) : 0.0;
  if (cfg_.has_latent) unit.u = u;

  unit.z1.resize(rp_.p.size());
  for (std::size_t k = 0; k < rp_.p.size(); ++k) unit.z1[k] = unif(cov_rng) < rp_.p[k] ? 1.0 : 0.0;
  unit.z2.resize(rp_.sigma.size());
  for (std::size_t k = 0; k < rp_.sigma.size(); ++k) {
    const double m = cfg_.has_latent ? rp_.alpha[k] + rp_.beta[k] * u : rp_.mu[k];
    unit.z2[k] = m + rp_.sigma[k] * std_normal(cov_rng);
  }
  const double z1bar = std::accumulate(unit.z1.begin(), unit.z1.end(), 0.0) /
                       static_cast<double>(std::max<std::size_t>(1, unit.z1.size()));
  const double z2bar = std::accumulate(unit.z2.begin(), unit.z2.end(), 0.0) /
                       static_cast<double>(std::max<std::size_t>(1, unit.z2.size()));
  sim.z1_mean = z1bar;
  sim.z2_mean = z2bar;

  const double dt = grid.dt();
  const std::size_t K = grid.steps();
  const std::size_t m = grid.steps_per_covariate();
  std::vector<double> z3_all;
  z3_all.reserve(K / m + 1);

  int a = 0;  // treatment starts in the lower stratum
  unit.a0 = a;
  double last_change = 0.0;
  double int_a = 0.0;
  double z3 = cov.initial_prev;
  double z3_full = 0.0;
  double z3_treat = 0.0;
  double treat_sig = 0.0;
  bool alive = true;
  unit.t_max = grid.t_end();
  const double base_mean = cov.intercept + cov.z1 * z1bar + cov.z2 * z2bar + cov.latent * u;
  const double comp_base =
      comp.intercept + comp.z1 * z1bar + comp.z2 * z2bar + comp.latent * u;

  auto draw_z3 = [&](double prev) {
    const double mean = base_mean + cov.treatment * int_a + cov.ar * prev;
    return mean + cov.sd * std_normal(cov_rng);
  };

  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid.time_at(k);
    double z3_left = z3;
    if (k % m == 0) {
      z3 = draw_z3(z3);
      z3_all.push_back(z3);
    }
    z3_full += z3 * dt;
    // Both uniforms are consumed every step so streams stay aligned across
    // worlds regardless of the realised path.
    const double uc = unif(comp_rng);
    const double us = unif(sw_rng);
    if (!alive) continue;

    HistoryView h;
    h.a_minus = a;
    h.z3_now = z3;
    h.time_since_change = t - last_change;
    h.t = t;
    const double lam_a = intensity_eval(switching, h);
    const double lam_t = std::exp(clamp_log_intensity(comp_base + comp.a * a + comp.z3 * z3_left));

    z3_treat += z3 * dt;
    treat_sig += a * (2.0 * sigmoid(z3, out.sigmoid_k) - 1.0) * dt;
    int_a += a * dt;

    const double t_next = grid.time_at(k + 1);
    if (uc < std::min(lam_t * dt, 1.0)) {
      unit.t_max = t_next;
      alive = false;
    } else if (us < std::min(lam_a * dt, 1.0)) {
      a ^= 1;
      last_change = t_next;
      unit.switch_times.push_back(t_next);
    }
  }
  z3_all.push_back(draw_z3(z3));  // value at t_end, only stored when uncensored

  unit.z3_path.assign(z3_all.begin(),
                      z3_all.begin() + static_cast<std::ptrdiff_t>(
                                           std::min(z3_all.size(), grid.covariate_points(unit.t_max))));

  const double z3_int = cfg_.z3_window == Z3Window::Full ? z3_full : z3_treat;
  sim.z3_integral = z3_int;
  sim.treat_sigmoid_integral = treat_sig;
  const double J = static_cast<double>(unit.switch_times.size());
  double mean = out.y0 + (out.switch_count + out.switch_by_z2 * z2bar) * J +
                out.z3_integral * z3_int +
                (out.treat_sigmoid + out.treat_sigmoid_by_z2 * z2bar) * treat_sig + out.latent * u;
  for (std::size_t k = 0; k < unit.z1.size(); ++k) mean += rp_.phi_y1[k] * unit.z1[k];
  for (std::size_t k = 0; k < rp_.phi_y2.size(); ++k) mean += rp_.phi_y2[k] * unit.z2[k];
  unit.y = mean + out.sd * std_normal(cov_rng);
  return sim;
}

UnitRecord simulate_unit(const CaseConfig& cfg, const ReplicateParams& rp,
                         const IntensitySpec& switching, std::uint64_t seed) {
  return CaseWorld(cfg, rp).simulate(switching, seed).record;
}

Cohort generate_cohort(const World& world, const IntensitySpec& switching, std::size_t n,
                       std::uint64_t seed) {
  if (n == 0) throw ConfigError("generate_cohort: n must be at least 1");
  Cohort cohort;
  cohort.case_id = world.case_id();
  cohort.seed = seed;
  cohort.grid = world.grid();
  cohort.units.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    cohort.units.push_back(world.simulate(switching, derive_seed(seed, {stream::kUnit, i})).record);
  return cohort;
}

Cohort generate_observed_cohort(const World& world, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("generate_observed_cohort: n must be at least 1");
  Cohort cohort;
  cohort.case_id = world.case_id();
  cohort.seed = seed;
  cohort.grid = world.grid();
  cohort.units.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    cohort.units.push_back(world.simulate_observed(derive_seed(seed, {stream::kUnit, i})).record);
  return cohort;
}

Cohort generate_cohort(const CaseConfig& cfg, const ReplicateParams& rp,
                       const IntensitySpec& switching, std::size_t n, std::uint64_t seed) {
  return generate_cohort(CaseWorld(cfg, rp), switching, n, seed);
}

Cohort redact_latent(Cohort cohort) {
  for (auto& u : cohort.units) u.u.reset();
  return cohort;
}

double guarded_exp(double y, std::size_t* clamped) {
  constexpr double kMaxExponent = 700.0;
  if (y > kMaxExponent) {
    if (clamped) ++*clamped;
    return std::exp(kMaxExponent);
  }
  return std::exp(y);
}

double evaluate_policy_loss(const World& world, std::span<const double> eta,
                            IntensityFamily family, std::size_t n_eval, std::uint64_t seed) {
  if (n_eval == 0) throw ConfigError("evaluate_policy_loss: n_eval must be at least 1");
  const IntensitySpec policy(family, std::vector<double>(eta.begin(), eta.end()));
  double total = 0.0;
  for (std::size_t i = 0; i < n_eval; ++i) {
    const auto sim = world.simulate(policy, derive_seed(seed, {stream::kUnit, i}));
    total += guarded_exp(sim.record.y);
  }
  return total / static_cast<double>(n_eval);
}

double evaluate_policy_loss(const World& world, std::span<const double> eta, std::size_t n_eval,
                            std::uint64_t seed) {
  return evaluate_policy_loss(world, eta, world.policy_family(), n_eval, seed);
}

}  // namespace rtdtr

#include "rtdtr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rtdtr/rng.hpp"
#include "rtdtr/simgen.hpp"

namespace rtdtr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double logsumexp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double experimental_logdensity(std::span<const double> eta, IntensityFamily family,
                               const UnitRecord& unit, const TimeGrid& grid) {
  return switching_loglik(eta, family, unit, grid);
}

PolicyObjective::PolicyObjective(const Cohort& cohort, const PosteriorDraws& draws,
                                 IntensityFamily exp_family, bool self_normalized)
    : family_(exp_family), self_normalized_(self_normalized) {
  if (cohort.units.empty()) throw ConfigError("policy: empty cohort");
  if (draws.size() == 0) throw ConfigError("policy: posterior has no draws");
  if (family_dimension(exp_family) == 0) throw ConfigError("policy: family has no parameters");
  paths_.reserve(cohort.n());
  for (const auto& u : cohort.units) {
    paths_.emplace_back(u, cohort.grid);
    exp_y_.push_back(guarded_exp(u.y, &clamped_));
  }
  const std::size_t M = draws.size();
  std::vector<std::vector<double>> thetas(M);
  for (std::size_t m = 0; m < M; ++m) thetas[m] = draws.row(m);
  log_den_.resize(paths_.size());
  std::vector<double> terms(M);
  const double log_m = std::log(static_cast<double>(M));
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    for (std::size_t m = 0; m < M; ++m) terms[m] = path_loglik(draws.family, thetas[m], paths_[i]);
    log_den_[i] = logsumexp(terms) - log_m;
  }
}

WeightVector PolicyObjective::weights(std::span<const double> eta) const {
  WeightVector wv;
  wv.log_denominators = log_den_;
  wv.log_numerators.resize(paths_.size());
  wv.w.resize(paths_.size());
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    wv.log_numerators[i] = path_loglik(family_, eta, paths_[i]);
    wv.w[i] = std::exp(wv.log_numerators[i] - log_den_[i]);
    if (!std::isfinite(wv.w[i]))
      throw DiagnosticFailure("positivity violation: non-finite importance weight for unit " +
                              std::to_string(i));
  }
  return wv;
}

double PolicyObjective::loss(std::span<const double> eta) const {
  double num = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    const double w = std::exp(path_loglik(family_, eta, paths_[i]) - log_den_[i]);
    if (!std::isfinite(w)) return kInf;
    num += w * exp_y_[i];
    wsum += w;
  }
  if (self_normalized_) return wsum > 0.0 ? num / wsum : kInf;
  return num / static_cast<double>(paths_.size());
}

WeightVector compute_weights(std::span<const double> eta, const Cohort& cohort,
                             const PosteriorDraws& draws, IntensityFamily exp_family) {
  return PolicyObjective(cohort, draws, exp_family).weights(eta);
}

double posterior_predictive_loss(std::span<const double> eta, const Cohort& cohort,
                                 const PosteriorDraws& draws, IntensityFamily exp_family,
                                 bool self_normalized) {
  const PolicyObjective obj(cohort, draws, exp_family, self_normalized);
  obj.weights(eta);  // surfaces positivity violations
  return obj.loss(eta);
}

WeightDiagnostics weight_diagnostics(std::span<const double> w) {
  WeightDiagnostics d;
  double s = 0.0, s2 = 0.0, mx = 0.0;
  for (double v : w) {
    if (!std::isfinite(v)) {
      ++d.n_nonfinite;
      continue;
    }
    s += v;
    s2 += v * v;
    mx = std::max(mx, v);
  }
  d.ess = s2 > 0.0 ? s * s / s2 : 0.0;
  d.max_share = s > 0.0 ? mx / s : 0.0;
  return d;
}

WeightDiagnostics weight_diagnostics(const WeightVector& w) { return weight_diagnostics(w.w); }

std::pair<std::vector<double>, std::vector<double>> DeConfig::box(std::size_t dim) const {
  if (population_size < 4) throw ConfigError("de: population_size must be at least 4");
  if (!(F > 0.0) || !(CR >= 0.0 && CR <= 1.0)) throw ConfigError("de: need F > 0 and CR in [0, 1]");
  auto expand = [dim](const std::vector<double>& v, double def, const char* name) {
    if (v.empty()) return std::vector<double>(dim, def);
    if (v.size() == 1) return std::vector<double>(dim, v[0]);
    if (v.size() != dim) throw ConfigError(std::string("de: ") + name + " bound has wrong length");
    return v;
  };
  auto lo = expand(lower, -5.0, "lower");
  auto hi = expand(upper, 5.0, "upper");
  for (std::size_t j = 0; j < dim; ++j)
    if (!std::isfinite(lo[j]) || !std::isfinite(hi[j]) || lo[j] > hi[j])
      throw ConfigError("de: bounds must be finite with lower <= upper");
  return {lo, hi};
}

DeResult de_minimize(const Objective& objective, std::size_t dim, const DeConfig& cfg) {
  if (dim == 0) throw ConfigError("de: dimension must be positive");
  const auto [lo, hi] = cfg.box(dim);
  Engine rng = make_engine(cfg.seed, {stream::kOptimizer});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t NP = cfg.population_size;

  DeResult res;
  auto eval = [&](std::span<const double> x) {
    ++res.evaluations;
    const double f = objective(x);
    return std::isfinite(f) ? f : kInf;
  };
  auto inside = [&](std::size_t j) { return lo[j] + (hi[j] - lo[j]) * unif(rng); };

  auto& pop = res.population;
  auto& fit = res.fitness;
  pop.assign(NP, std::vector<double>(dim));
  fit.resize(NP);
  for (auto& x : pop)
    for (std::size_t j = 0; j < dim; ++j) x[j] = inside(j);
  for (std::size_t i = 0; i < NP; ++i) fit[i] = eval(pop[i]);

  std::uniform_int_distribution<std::size_t> pick(0, NP - 1);
  std::uniform_int_distribution<std::size_t> pick_dim(0, dim - 1);
  std::vector<std::vector<double>> trials(NP, std::vector<double>(dim));
  for (std::size_t g = 0; g < cfg.generations; ++g) {
    for (std::size_t i = 0; i < NP; ++i) {
      std::size_t r1, r2, r3;
      do r1 = pick(rng); while (r1 == i);
      do r2 = pick(rng); while (r2 == i || r2 == r1);
      do r3 = pick(rng); while (r3 == i || r3 == r1 || r3 == r2);
      const std::size_t j_rand = pick_dim(rng);
      for (std::size_t j = 0; j < dim; ++j) {
        if (j == j_rand || unif(rng) < cfg.CR) {
          double v = pop[r1][j] + cfg.F * (pop[r2][j] - pop[r3][j]);
          if (v < lo[j] || v > hi[j]) v = inside(j);
          trials[i][j] = v;
        } else {
          trials[i][j] = pop[i][j];
        }
      }
    }
    for (std::size_t i = 0; i < NP; ++i) {
      const double f = eval(trials[i]);
      if (f < fit[i]) {
        pop[i] = trials[i];
        fit[i] = f;
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(fit.begin(), fit.end()) - fit.begin());
  res.x = pop[best];
  res.f = fit[best];
  return res;
}

PolicyEstimate optimize_eta(const PolicyObjective& objective, const DeConfig& de) {
  const std::size_t dim = family_dimension(objective.family());
  const auto res = de_minimize([&](std::span<const double> eta) { return objective.loss(eta); }, dim, de);
  PolicyEstimate est;
  est.eta = res.x;
  est.evaluations = res.evaluations;
  est.loss = objective.loss(est.eta);
  if (!std::isfinite(est.loss))
    throw DiagnosticFailure("optimize_eta: no candidate with finite weights was found");
  est.ess = weight_diagnostics(objective.weights(est.eta)).ess;
  if (est.ess < kLowEssThreshold) {
    est.low_overlap = true;
    est.warning = "low overlap: weight ESS " + std::to_string(est.ess) + " < " +
                  std::to_string(kLowEssThreshold);
  }
  return est;
}

PolicyEstimate optimize_eta(const Cohort& cohort, const PosteriorDraws& draws,
                            IntensityFamily exp_family, const DeConfig& de) {
  return optimize_eta(PolicyObjective(cohort, draws, exp_family), de);
}

double observed_mean_loss(const Cohort& cohort) {
  if (cohort.units.empty()) throw ConfigError("unopt: empty cohort");
  double s = 0.0;
  for (const auto& u : cohort.units) s += guarded_exp(u.y);
  return s / static_cast<double>(cohort.n());
}

UnoptBaseline unopt_baseline(const Cohort& cohort, const PosteriorDraws& draws) {
  UnoptBaseline b;
  b.observed_loss = observed_mean_loss(cohort);
  if (draws.size() > 0) b.theta_hat = draws.mean();
  return b;
}

}  // namespace rtdtr

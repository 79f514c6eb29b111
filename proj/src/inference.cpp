#include "rtdtr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rtdtr/rng.hpp"

namespace rtdtr {

namespace {

const double kLogFloor = std::log(kIntensityFloor);
const double kLogCeiling = std::log(kIntensityCeiling);

// d log(lambda) / d(time since change) for the log-affine families.
double time_slope(IntensityFamily family, std::span<const double> p) {
  switch (family) {
    case IntensityFamily::LinExp: return p[2];
    case IntensityFamily::OxytocinLinExp: return p[3] / 20.0;
    default: return 0.0;
  }
}

HistoryView run_history(const CompiledPath::Run& run, std::optional<double> z_bmi) {
  HistoryView h;
  h.a_minus = run.a_minus;
  h.z3_now = run.z3;
  h.time_since_change = run.time_since_change;
  h.z_bmi = z_bmi;
  return h;
}

// sum_{i<K} exp(clamp(a + c i)).
double clamped_geometric_sum(double a, double c, std::size_t K) {
  const double last = a + c * static_cast<double>(K - 1);
  if (std::min(a, last) >= kLogFloor && std::max(a, last) <= kLogCeiling) {
    if (std::abs(c) < 1e-14) return static_cast<double>(K) * std::exp(a);
    return std::exp(a) * (std::expm1(c * static_cast<double>(K)) / std::expm1(c));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < K; ++i)
    s += std::exp(clamp_log_intensity(a + c * static_cast<double>(i)));
  return s;
}

void check_dimension(IntensityFamily family, std::span<const double> params) {
  const auto dim = family_dimension(family);
  if (dim == 0 || params.size() != dim)
    throw ConfigError("likelihood: parameter vector does not match " +
                      std::string(family_name(family)));
}

}  // namespace

CompiledPath::CompiledPath(const UnitRecord& unit, const TimeGrid& grid)
    : z_bmi_(unit.z_bmi), dt_(grid.dt()) {
  const std::size_t K = std::min(grid.step_index(unit.t_max), grid.steps());
  const std::size_t m = grid.steps_per_covariate();
  std::size_t next_switch = 0;
  int a = unit.a0;
  double last = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid.time_at(k);
    bool changed = false;
    while (next_switch < unit.switch_times.size() &&
           grid.step_index(unit.switch_times[next_switch]) <= k) {
      a ^= 1;
      last = unit.switch_times[next_switch];
      ++next_switch;
      changed = true;
    }
    const std::size_t zi = std::min(k / m, unit.z3_path.size() - 1);
    if (runs_.empty() || changed || k % m == 0) {
      runs_.push_back({0, a, unit.z3_path[zi], std::max(0.0, t - last)});
    }
    ++runs_.back().steps;
  }
  jumps_.reserve(unit.switch_times.size());
  for (double s : unit.switch_times) {
    const std::size_t ks = grid.step_index(s);
    jumps_.push_back(step_history(unit, ks == 0 ? 0 : ks - 1, grid));
  }
}

double path_loglik(IntensityFamily family, std::span<const double> params,
                   const CompiledPath& path) {
  check_dimension(family, params);
  double jump_term = 0.0;
  for (const auto& h : path.jumps()) jump_term += clamp_log_intensity(log_intensity(family, params, h));

  double exposure = 0.0;
  if (family_is_log_affine_in_time(family)) {
    const double c = time_slope(family, params) * path.dt();
    for (const auto& run : path.runs()) {
      const double a = log_intensity(family, params, run_history(run, path.z_bmi()));
      exposure += clamped_geometric_sum(a, c, run.steps);
    }
  } else {
    for (const auto& run : path.runs()) {
      const double a = clamp_log_intensity(log_intensity(family, params, run_history(run, path.z_bmi())));
      exposure += static_cast<double>(run.steps) * std::exp(a);
    }
  }
  return jump_term - exposure * path.dt();
}

double switching_loglik(std::span<const double> theta, IntensityFamily family,
                        const UnitRecord& unit, const TimeGrid& grid) {
  return path_loglik(family, theta, CompiledPath(unit, grid));
}

double log_prior(std::span<const double> theta) {
  constexpr double kSd = 5.0;
  const double norm = -0.5 * std::log(2.0 * M_PI * kSd * kSd);
  double lp = 0.0;
  for (double v : theta) lp += norm - 0.5 * v * v / (kSd * kSd);
  return lp;
}

void McmcConfig::validate() const {
  if (n_iter == 0 || burn_in >= n_iter) throw ConfigError("mcmc: need 0 <= burn_in < n_iter");
  if (thin == 0) throw ConfigError("mcmc: thin must be positive");
  if (retained() == 0) throw ConfigError("mcmc: no draws retained after burn-in and thinning");
  for (double s : proposal_scale)
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("mcmc: proposal scales must be positive");
}

std::vector<double> PosteriorDraws::row(std::size_t i) const {
  std::vector<double> r(dim());
  for (std::size_t j = 0; j < dim(); ++j) r[j] = draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return r;
}

std::vector<double> PosteriorDraws::mean() const {
  const Eigen::VectorXd m = draws.colwise().mean();
  return {m.data(), m.data() + m.size()};
}

PosteriorDraws PosteriorDraws::point_mass(std::vector<double> theta, IntensityFamily family) {
  PosteriorDraws pd;
  pd.family = family;
  pd.draws = Eigen::Map<const Eigen::RowVectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  pd.acceptance_rate = 1.0;
  return pd;
}

MetropolisResult metropolis(const LogDensity& log_target, std::vector<double> init,
                            const McmcConfig& cfg, const std::optional<Eigen::MatrixXd>& proposal_chol) {
  cfg.validate();
  const std::size_t d = init.size();
  if (d == 0) throw ConfigError("metropolis: empty initial point");
  std::vector<double> scale = cfg.proposal_scale.empty() ? std::vector<double>(d, 0.1) : cfg.proposal_scale;
  if (scale.size() != d) throw ConfigError("metropolis: proposal_scale has wrong length");
  std::optional<Eigen::MatrixXd> chol = proposal_chol;
  if (chol && (chol->rows() != static_cast<Eigen::Index>(d) || chol->cols() != static_cast<Eigen::Index>(d)))
    throw ConfigError("metropolis: proposal Cholesky factor has wrong shape");

  Engine rng = make_engine(cfg.seed, {stream::kMcmc});
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> x = std::move(init);
  double lp = log_target(x);
  if (!std::isfinite(lp)) throw DiagnosticFailure("metropolis: target is not finite at the initial point");

  constexpr std::size_t kBatch = 50;
  constexpr double kTargetRate = 0.3;
  double global = 1.0;
  std::size_t batch_accepts = 0;
  std::size_t post_accepts = 0;

  // Burn-in samples used to shape the proposal halfway through burn-in.
  const std::size_t shape_from = cfg.burn_in / 4;
  const std::size_t shape_at = cfg.burn_in / 2;
  std::vector<std::vector<double>> shaping;

  MetropolisResult res;
  res.draws.resize(static_cast<Eigen::Index>(cfg.retained()), static_cast<Eigen::Index>(d));
  std::size_t kept = 0;
  std::vector<double> z(d), prop(d);
  Eigen::VectorXd zv(static_cast<Eigen::Index>(d));

  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    for (auto& v : z) v = std_normal(rng);
    if (chol) {
      for (std::size_t j = 0; j < d; ++j) zv[static_cast<Eigen::Index>(j)] = z[j];
      const Eigen::VectorXd step = *chol * zv;
      for (std::size_t j = 0; j < d; ++j) prop[j] = x[j] + global * step[static_cast<Eigen::Index>(j)];
    } else {
      for (std::size_t j = 0; j < d; ++j) prop[j] = x[j] + global * scale[j] * z[j];
    }
    const double lp_prop = log_target(prop);
    const double log_u = std::log(unif(rng));
    if (std::isfinite(lp_prop) && log_u < lp_prop - lp) {
      x = prop;
      lp = lp_prop;
      ++batch_accepts;
      if (it >= cfg.burn_in) ++post_accepts;
    }

    if (it < cfg.burn_in && cfg.adapt) {
      if (!proposal_chol && d > 1 && it >= shape_from && it < shape_at) shaping.push_back(x);
      if ((it + 1) % kBatch == 0) {
        const double rate = static_cast<double>(batch_accepts) / kBatch;
        global *= std::exp(2.0 * (rate - kTargetRate));
        batch_accepts = 0;
      }
      if (it + 1 == shape_at && shaping.size() > 2 * d) {
        Eigen::MatrixXd S(static_cast<Eigen::Index>(shaping.size()), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < shaping.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) S(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = shaping[r][j];
        const Eigen::MatrixXd centered = S.rowwise() - S.colwise().mean();
        Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(shaping.size() - 1);
        const double ridge = 1e-10 + 1e-6 * cov.diagonal().maxCoeff();
        cov.diagonal().array() += ridge;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() == Eigen::Success && cov.diagonal().minCoeff() > 0.0) {
          chol = llt.matrixL();
          global = 2.38 / std::sqrt(static_cast<double>(d));
        }
        shaping.clear();
      }
    } else if (it == cfg.burn_in) {
      batch_accepts = 0;
    }

    if (it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 && kept < cfg.retained()) {
      for (std::size_t j = 0; j < d; ++j) res.draws(static_cast<Eigen::Index>(kept), static_cast<Eigen::Index>(j)) = x[j];
      ++kept;
    }
  }
  res.acceptance_rate = static_cast<double>(post_accepts) / static_cast<double>(cfg.n_iter - cfg.burn_in);
  res.final_scale.resize(d);
  for (std::size_t j = 0; j < d; ++j)
    res.final_scale[j] = chol ? global * std::sqrt((*chol).row(static_cast<Eigen::Index>(j)).squaredNorm())
                              : global * scale[j];
  return res;
}

PosteriorDraws sample_posterior(const Cohort& cohort, IntensityFamily family, const McmcConfig& mc,
                                std::optional<std::vector<double>> init) {
  const auto dim = family_dimension(family);
  if (dim == 0) throw ConfigError("sample_posterior: family has no switching parameters");
  if (cohort.units.empty()) throw ConfigError("sample_posterior: empty cohort");
  if (family == IntensityFamily::OxytocinLinExp)
    for (const auto& u : cohort.units)
      if (!u.z_bmi) throw ConfigError("sample_posterior: OxytocinLinExp needs z_bmi on every unit");

  std::vector<CompiledPath> paths;
  paths.reserve(cohort.n());
  for (const auto& u : cohort.units) paths.emplace_back(u, cohort.grid);

  const LogDensity target = [&](std::span<const double> th) {
    double s = log_prior(th);
    for (const auto& p : paths) s += path_loglik(family, th, p);
    return s;
  };
  std::vector<double> x0 = init.value_or(std::vector<double>(dim, 0.0));
  if (x0.size() != dim) throw ConfigError("sample_posterior: init has wrong length");
  if (!init) {
    // Start at the constant-rate MLE so the chain begins near the mode.
    double jumps = 0.0, exposure = 0.0;
    for (const auto& u : cohort.units) {
      jumps += static_cast<double>(u.switch_count());
      exposure += u.t_max;
    }
    if (family != IntensityFamily::SigmoidSwitch && jumps > 0) x0[0] = std::log(jumps / exposure);
  }
  McmcConfig cfg = mc;
  if (cfg.proposal_scale.empty()) {
    // Scale the initial proposal to the sample size; burn-in refines it.
    const double s = 2.0 / std::sqrt(static_cast<double>(cohort.n()));
    cfg.proposal_scale.assign(dim, std::min(0.5, s));
  }
  const auto res = metropolis(target, x0, cfg);
  if (res.acceptance_rate == 0.0)
    throw DiagnosticFailure("sample_posterior: chain rejected every proposal after burn-in");

  PosteriorDraws pd;
  pd.draws = res.draws;
  pd.acceptance_rate = res.acceptance_rate;
  pd.family = family;
  return pd;
}

double split_r(std::span<const double> chain) {
  const std::size_t half = chain.size() / 2;
  if (half < 2) return 1.0;
  auto stats = [](std::span<const double> c) {
    const double m = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
    double v = 0.0;
    for (double x : c) v += (x - m) * (x - m);
    return std::pair{m, v / static_cast<double>(c.size() - 1)};
  };
  const auto [m1, v1] = stats(chain.subspan(0, half));
  const auto [m2, v2] = stats(chain.subspan(chain.size() - half, half));
  const double n = static_cast<double>(half);
  const double W = 0.5 * (v1 + v2);
  const double grand = 0.5 * (m1 + m2);
  const double B = n * ((m1 - grand) * (m1 - grand) + (m2 - grand) * (m2 - grand));
  if (W <= 0.0) return B > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

std::vector<CoordinateSummary> posterior_summary(const PosteriorDraws& pd) {
  std::vector<CoordinateSummary> out(pd.dim());
  for (std::size_t j = 0; j < pd.dim(); ++j) {
    const Eigen::VectorXd col = pd.draws.col(static_cast<Eigen::Index>(j));
    const double m = col.mean();
    const double var = pd.size() > 1 ? (col.array() - m).square().sum() / static_cast<double>(pd.size() - 1) : 0.0;
    out[j].mean = m;
    out[j].sd = std::sqrt(var);
    out[j].split_r = split_r(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
  }
  return out;
}

}  // namespace rtdtr

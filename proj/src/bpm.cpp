#include "rtdtr/bpm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "rtdtr/rng.hpp"

namespace rtdtr {

namespace {

constexpr double kTimeEps = 1e-9;
// beta | s2 ~ N(0, s2 * kPriorScale * I), s2 ~ InvGamma(kPriorShape, kPriorRate)
constexpr double kPriorScale = 100.0;
constexpr double kPriorShape = 0.01;
constexpr double kPriorRate = 0.01;

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct LinearDraws {
  Eigen::MatrixXd beta;
  Eigen::VectorXd sd;
};

// Exact draws from the conjugate normal-inverse-gamma posterior.
LinearDraws conjugate_draws(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t n_draws,
                            Engine& rng) {
  const auto p = X.cols();
  Eigen::MatrixXd prec = X.transpose() * X;
  prec.diagonal().array() += 1.0 / kPriorScale;
  const Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw DiagnosticFailure("bpm: singular regression design");
  const Eigen::VectorXd mn = llt.solve(X.transpose() * y);
  const double an = kPriorShape + 0.5 * static_cast<double>(X.rows());
  const double bn = kPriorRate + 0.5 * std::max(0.0, y.squaredNorm() - mn.dot(prec * mn));
  const Eigen::MatrixXd U = llt.matrixU();

  LinearDraws out;
  out.beta.resize(static_cast<Eigen::Index>(n_draws), p);
  out.sd.resize(static_cast<Eigen::Index>(n_draws));
  std::gamma_distribution<double> gam(an, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t m = 0; m < n_draws; ++m) {
    const double s2 = bn / gam(rng);
    Eigen::VectorXd e(p);
    for (Eigen::Index j = 0; j < p; ++j) e[j] = z(rng);
    // U^T U = prec, so U^{-1} e ~ N(0, prec^{-1}).
    const Eigen::VectorXd dev = U.triangularView<Eigen::Upper>().solve(e);
    const auto i = static_cast<Eigen::Index>(m);
    out.beta.row(i) = (mn + std::sqrt(s2) * dev).transpose();
    out.sd[i] = std::sqrt(s2);
  }
  return out;
}

// A run of completion-model steps with constant covariates.
struct CompletionRun {
  std::array<double, 5> x;
  double exposure = 0.0;
};

double completion_loglik(std::span<const double> c, const std::vector<CompletionRun>& runs,
                         const std::vector<std::array<double, 5>>& events) {
  auto eta = [&](const std::array<double, 5>& x) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += c[j] * x[j];
    return clamp_log_intensity(s);
  };
  double ll = 0.0;
  for (const auto& e : events) ll += eta(e);
  for (const auto& r : runs) ll -= r.exposure * std::exp(eta(r.x));
  return ll;
}

}  // namespace

BpmSkeleton BpmSkeleton::for_case(const CaseConfig& cfg) {
  BpmSkeleton s;
  s.grid = cfg.grid;
  s.policy_family = cfg.policy_family;
  switch (cfg.case_id) {
    case CaseId::Case1:
    case CaseId::Case3: s.form = BpmOutcomeForm::SwitchCount; break;
    case CaseId::Case2:
    case CaseId::Case4: s.form = BpmOutcomeForm::SigmoidExposure; break;
    case CaseId::CslLike: throw ConfigError("bpm: unsupported case CslLike");
  }
  const auto& y = cfg.outcome;
  if (s.form == BpmOutcomeForm::SwitchCount) {
    s.treatment_term = y.switch_count != 0.0;
    s.treatment_by_z2 = y.switch_by_z2 != 0.0;
  } else {
    s.treatment_term = y.treat_sigmoid != 0.0;
    s.treatment_by_z2 = y.treat_sigmoid_by_z2 != 0.0;
  }
  s.z3_integral_term = y.z3_integral != 0.0;
  s.z2_terms = y.uses_phi_y2;
  s.sigmoid_k = y.sigmoid_k;
  s.z3_initial_prev = cfg.covariate.initial_prev;
  s.z3_full_window = cfg.z3_window == Z3Window::Full;
  return s;
}

BpmFeatures bpm_features(const UnitRecord& unit, const BpmSkeleton& skel) {
  const auto& grid = skel.grid;
  BpmFeatures f;
  f.J = static_cast<double>(unit.switch_count());
  f.z1_mean = mean_of(unit.z1);
  f.z2_mean = mean_of(unit.z2);
  const std::size_t K = grid.step_index(unit.t_max);
  for (std::size_t k = 0; k < K; ++k) {
    const auto h = step_history(unit, k, grid);
    f.z3_integral += h.z3_now * grid.dt();
    f.treat_sigmoid += h.a_minus * (2.0 * sigmoid(h.z3_now, skel.sigmoid_k) - 1.0) * grid.dt();
  }
  return f;
}

double BpmPosterior::mean_outcome_variance() const {
  return outcome_sd.size() == 0 ? 0.0 : outcome_sd.array().square().mean();
}

BpmPosterior fit_bpm(const Cohort& cohort, const BpmSkeleton& skeleton, const BpmConfig& cfg) {
  if (cohort.units.empty()) throw ConfigError("bpm: empty cohort");
  if (cfg.n_draws == 0) throw ConfigError("bpm: n_draws must be at least 1");
  cfg.mcmc.validate();
  const auto& grid = skeleton.grid;
  const std::size_t m = grid.steps_per_covariate();
  const double dt = grid.dt();
  const std::size_t n = cohort.n();
  const std::size_t p1 = cohort.units.front().z1.size();
  const std::size_t p2 = cohort.units.front().z2.size();
  for (const auto& u : cohort.units) {
    validate_unit(u, grid);
    if (u.z1.size() != p1 || u.z2.size() != p2)
      throw DataError("bpm: units disagree on baseline covariate dimensions");
  }

  BpmPosterior post;
  post.skeleton = skeleton;
  Engine rng = make_engine(cfg.seed, {stream::kBpm});

  // Z3 transitions and completion-intensity data.
  std::vector<std::array<double, 5>> zrows;
  std::vector<double> ztarget;
  std::vector<CompletionRun> runs;
  std::vector<std::array<double, 5>> events;
  double n_events = 0.0, exposure = 0.0;
  std::vector<double> final_int_a(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = cohort.units[i];
    const double z1bar = mean_of(u.z1), z2bar = mean_of(u.z2);
    const std::size_t K = grid.step_index(u.t_max);
    double int_a = 0.0;
    for (std::size_t k = 0; k <= K; ++k) {
      if (k % m == 0 && k / m < u.z3_path.size()) {
        const std::size_t j = k / m;
        const double prev = j == 0 ? skeleton.z3_initial_prev : u.z3_path[j - 1];
        zrows.push_back({1.0, int_a, prev, z1bar, z2bar});
        ztarget.push_back(u.z3_path[j]);
      }
      if (k == K) break;
      const auto h = step_history(u, k, grid);
      const double z3_left =
          k % m == 0 ? (k == 0 ? skeleton.z3_initial_prev : u.z3_path[k / m - 1]) : h.z3_now;
      const std::array<double, 5> x{1.0, static_cast<double>(h.a_minus), z1bar, z2bar, z3_left};
      if (!runs.empty() && runs.back().x == x) runs.back().exposure += dt;
      else runs.push_back({x, dt});
      exposure += dt;
      int_a += h.a_minus * dt;
    }
    final_int_a[i] = int_a;
    if (u.t_max < grid.t_end() - kTimeEps && K > 0) {
      const auto h = step_history(u, K - 1, grid);
      const std::size_t k = K - 1;
      const double z3_left =
          k % m == 0 ? (k == 0 ? skeleton.z3_initial_prev : u.z3_path[k / m - 1]) : h.z3_now;
      events.push_back({1.0, static_cast<double>(h.a_minus), z1bar, z2bar, z3_left});
      n_events += 1.0;
    }
  }
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(zrows.size()), 5);
  Eigen::VectorXd zt(static_cast<Eigen::Index>(zrows.size()));
  for (std::size_t i = 0; i < zrows.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = zrows[i][j];
    zt[static_cast<Eigen::Index>(i)] = ztarget[i];
  }
  auto cov = conjugate_draws(Z, zt, cfg.n_draws, rng);
  post.covariate = std::move(cov.beta);
  post.covariate_sd = std::move(cov.sd);

  // Outcome.
  std::vector<Eigen::Index> cols{0};
  if (skeleton.treatment_term) cols.push_back(1);
  if (skeleton.treatment_by_z2) cols.push_back(2);
  if (skeleton.z3_integral_term) cols.push_back(3);
  for (std::size_t k = 0; k < p1; ++k) cols.push_back(static_cast<Eigen::Index>(4 + k));
  if (skeleton.z2_terms)
    for (std::size_t k = 0; k < p2; ++k) cols.push_back(static_cast<Eigen::Index>(4 + p1 + k));
  const auto q = static_cast<Eigen::Index>(4 + p1 + p2);
  Eigen::MatrixXd full(static_cast<Eigen::Index>(n), q);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = cohort.units[i];
    const auto f = bpm_features(u, skeleton);
    const double T = skeleton.form == BpmOutcomeForm::SwitchCount ? f.J : f.treat_sigmoid;
    const auto r = static_cast<Eigen::Index>(i);
    full(r, 0) = 1.0;
    full(r, 1) = T;
    full(r, 2) = T * f.z2_mean;
    full(r, 3) = f.z3_integral;
    for (std::size_t k = 0; k < p1; ++k) full(r, static_cast<Eigen::Index>(4 + k)) = u.z1[k];
    for (std::size_t k = 0; k < p2; ++k) full(r, static_cast<Eigen::Index>(4 + p1 + k)) = u.z2[k];
    y[r] = u.y;
  }
  post.outcome = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cfg.n_draws), q);
  if (!(skeleton.z3_full_window && skeleton.z3_integral_term)) {
    auto out = conjugate_draws(full(Eigen::all, cols), y, cfg.n_draws, rng);
    post.outcome(Eigen::all, cols) = out.beta;
    post.outcome_sd = std::move(out.sd);
  } else {
    post.outcome_sd.resize(static_cast<Eigen::Index>(cfg.n_draws));
    std::normal_distribution<double> z(0.0, 1.0);
    const std::size_t K_end = grid.steps();
    Eigen::MatrixXd completed = full;
    std::vector<double> path;
    for (std::size_t d = 0; d < cfg.n_draws; ++d) {
      const auto cz = post.covariate.row(static_cast<Eigen::Index>(d));
      const double zsd = post.covariate_sd[static_cast<Eigen::Index>(d)];
      for (std::size_t i = 0; i < n; ++i) {
        const auto& u = cohort.units[i];
        const double base = cz[0] + cz[1] * final_int_a[i] + cz[3] * mean_of(u.z1) + cz[4] * mean_of(u.z2);
        path = u.z3_path;
        double tail = 0.0;
        for (std::size_t k = grid.step_index(u.t_max); k < K_end; ++k) {
          while (path.size() <= k / m) path.push_back(base + cz[2] * path.back() + zsd * z(rng));
          tail += path[k / m] * dt;
        }
        completed(static_cast<Eigen::Index>(i), 3) = full(static_cast<Eigen::Index>(i), 3) + tail;
      }
      auto out = conjugate_draws(completed(Eigen::all, cols), y, 1, rng);
      post.outcome(static_cast<Eigen::Index>(d), cols) = out.beta.row(0);
      post.outcome_sd[static_cast<Eigen::Index>(d)] = out.sd[0];
    }
  }

  const LogDensity target = [&](std::span<const double> c) {
    return log_prior(c) + completion_loglik(c, runs, events);
  };
  std::vector<double> c0(5, 0.0);
  if (n_events > 0) c0[0] = std::log(n_events / exposure);
  McmcConfig mc = cfg.mcmc;
  if (mc.proposal_scale.empty())
    mc.proposal_scale.assign(5, std::min(0.5, 2.0 / std::sqrt(static_cast<double>(n))));
  const auto res = metropolis(target, c0, mc);
  if (res.acceptance_rate == 0.0)
    throw DiagnosticFailure("bpm: completion chain rejected every proposal after burn-in");
  const auto R = static_cast<std::size_t>(res.draws.rows());
  if (R == 0) throw ConfigError("bpm: completion sampler retained no draws");
  post.completion.resize(static_cast<Eigen::Index>(cfg.n_draws), 5);
  for (std::size_t i = 0; i < cfg.n_draws; ++i)
    post.completion.row(static_cast<Eigen::Index>(i)) =
        res.draws.row(static_cast<Eigen::Index>(i * R / cfg.n_draws));
  post.completion_acceptance = res.acceptance_rate;

  post.z1.reserve(n);
  post.z2.reserve(n);
  for (const auto& u : cohort.units) {
    post.z1.push_back(u.z1);
    post.z2.push_back(u.z2);
  }
  return post;
}

BpmPosterior fit_bpm(const Cohort& cohort, CaseId case_id, const BpmConfig& cfg) {
  if (case_id == CaseId::CslLike) throw ConfigError("bpm: unsupported case CslLike");
  auto skel = BpmSkeleton::for_case(CaseConfig::for_case(case_id));
  skel.grid = cohort.grid;
  return fit_bpm(cohort, skel, cfg);
}

BpmObjective::BpmObjective(const BpmPosterior& posterior, std::size_t n_mc, std::uint64_t seed)
    : post_(posterior) {
  if (n_mc == 0) throw ConfigError("bpm: n_mc must be at least 1");
  if (post_.size() == 0 || post_.z1.empty()) throw ConfigError("bpm: empty posterior");
  const auto& grid = post_.skeleton.grid;
  const std::size_t K = grid.steps();
  const std::size_t n_cov = K / grid.steps_per_covariate() + 1;
  const std::size_t p1 = post_.z1.front().size();
  std::uniform_int_distribution<std::size_t> pick(0, post_.z1.size() - 1);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  paths_.reserve(post_.size() * n_mc);
  for (std::size_t d = 0; d < post_.size(); ++d) {
    const auto beta = post_.outcome.row(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < n_mc; ++j) {
      Engine rng = make_engine(seed, {stream::kBpm, d, j});
      Path p;
      p.draw = d;
      const std::size_t b = pick(rng);
      const auto& z1 = post_.z1[b];
      const auto& z2 = post_.z2[b];
      p.z1_mean = mean_of(z1);
      p.z2_mean = mean_of(z2);
      for (std::size_t k = 0; k < z1.size(); ++k) p.baseline += beta[static_cast<Eigen::Index>(4 + k)] * z1[k];
      for (std::size_t k = 0; k < z2.size(); ++k)
        p.baseline += beta[static_cast<Eigen::Index>(4 + p1 + k)] * z2[k];
      p.z3_noise.resize(n_cov);
      for (auto& v : p.z3_noise) v = z(rng);
      p.log_u_switch.resize(K);
      p.log_u_completion.resize(K);
      for (std::size_t k = 0; k < K; ++k) {
        p.log_u_completion[k] = std::log(unif(rng));
        p.log_u_switch[k] = std::log(unif(rng));
      }
      p.outcome_noise = z(rng);
      paths_.push_back(std::move(p));
    }
  }
}

double BpmObjective::simulate(const Path& p, std::span<const double> eta) const {
  const auto& skel = post_.skeleton;
  const auto& grid = skel.grid;
  const auto d = static_cast<Eigen::Index>(p.draw);
  const auto beta = post_.outcome.row(d);
  const auto cz = post_.covariate.row(d);
  const auto cc = post_.completion.row(d);
  const double zsd = post_.covariate_sd[d];
  const double dt = grid.dt();
  const double log_dt = std::log(dt);
  const std::size_t K = grid.steps();
  const std::size_t m = grid.steps_per_covariate();
  const IntensityFamily fam = skel.policy_family;
  const bool time_free = fam == IntensityFamily::SigmoidSwitch;

  const double z3_base = cz[0] + cz[3] * p.z1_mean + cz[4] * p.z2_mean;
  const double comp_base = cc[0] + cc[2] * p.z1_mean + cc[3] * p.z2_mean;
  int a = 0;
  double last_change = 0.0, int_a = 0.0, z3 = skel.z3_initial_prev;
  double z3_int = 0.0, treat_sig = 0.0, J = 0.0;
  double sig = 0.0, log_lam_a = 0.0;
  bool stale = true;
  HistoryView h;
  for (std::size_t k = 0; k < K; ++k) {
    const double z3_left = z3;
    if (k % m == 0) {
      z3 = z3_base + cz[1] * int_a + cz[2] * z3 + zsd * p.z3_noise[k / m];
      sig = 2.0 * sigmoid(z3, skel.sigmoid_k) - 1.0;
      stale = true;
    }
    if (stale || !time_free) {
      h.a_minus = a;
      h.z3_now = z3;
      h.t = grid.time_at(k);
      h.time_since_change = h.t - last_change;
      log_lam_a = clamp_log_intensity(log_intensity(fam, eta, h));
      stale = false;
    }
    const double log_lam_t = clamp_log_intensity(comp_base + cc[1] * a + cc[4] * z3_left);
    z3_int += z3 * dt;
    treat_sig += a * sig * dt;
    int_a += a * dt;
    // u < min(lambda dt, 1) compared on the log scale.
    if (p.log_u_completion[k] < std::min(log_lam_t + log_dt, 0.0)) {
      if (skel.z3_full_window) {
        // Z3 runs on to t_end with the exposure frozen.
        for (std::size_t r = k + 1; r < K; ++r) {
          if (r % m == 0) z3 = z3_base + cz[1] * int_a + cz[2] * z3 + zsd * p.z3_noise[r / m];
          z3_int += z3 * dt;
        }
      }
      break;
    }
    if (p.log_u_switch[k] < std::min(log_lam_a + log_dt, 0.0)) {
      a ^= 1;
      last_change = grid.time_at(k + 1);
      J += 1.0;
      stale = true;
    }
  }
  const double T = skel.form == BpmOutcomeForm::SwitchCount ? J : treat_sig;
  const double y = beta[0] + beta[1] * T + beta[2] * T * p.z2_mean + beta[3] * z3_int + p.baseline +
                   post_.outcome_sd[d] * p.outcome_noise;
  return guarded_exp(y);
}

double BpmObjective::loss(std::span<const double> eta) const {
  if (eta.size() != family_dimension(post_.skeleton.policy_family))
    throw ConfigError("bpm: eta has wrong length for the policy family");
  double s = 0.0;
  for (const auto& p : paths_) s += simulate(p, eta);
  const double v = s / static_cast<double>(paths_.size());
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

double bpm_expected_loss(std::span<const double> eta, const BpmPosterior& posterior, std::size_t n_mc,
                         std::uint64_t seed) {
  return BpmObjective(posterior, n_mc, seed).loss(eta);
}

PolicyEstimate bpm_optimize(const BpmPosterior& posterior, const DeConfig& de, std::size_t n_mc,
                            std::uint64_t seed) {
  const BpmObjective obj(posterior, n_mc, seed);
  const std::size_t dim = family_dimension(posterior.skeleton.policy_family);
  const auto res = de_minimize([&](std::span<const double> eta) { return obj.loss(eta); }, dim, de);
  PolicyEstimate est;
  est.eta = res.x;
  est.loss = res.f;
  est.evaluations = res.evaluations;
  if (!std::isfinite(est.loss))
    throw DiagnosticFailure("bpm_optimize: no candidate with a finite expected loss was found");
  return est;
}

}  // namespace rtdtr

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "rtdtr/policy.hpp"
#include "rtdtr/rng.hpp"

using namespace rtdtr;

namespace {

double brute_force_logdensity(IntensityFamily family, const std::vector<double>& eta, const UnitRecord& u,
                              const TimeGrid& g) {
  const IntensitySpec spec(family, eta);
  double ll = 0.0;
  for (double s : u.switch_times) ll += std::log(intensity_eval(spec, step_history(u, g.step_index(s) - 1, g)));
  for (std::size_t k = 0; k < g.step_index(u.t_max); ++k) ll -= intensity_eval(spec, step_history(u, k, g)) * g.dt();
  return ll;
}

UnitRecord flat_unit(double t_max, const TimeGrid& g, double y = 0.0) {
  UnitRecord u;
  u.t_max = t_max;
  u.z3_path.assign(g.covariate_points(t_max), 0.0);
  u.y = y;
  return u;
}

Cohort cohort_of(std::vector<UnitRecord> units, const TimeGrid& g) {
  Cohort c;
  c.units = std::move(units);
  c.grid = g;
  return c;
}

struct Case1Data {
  CaseConfig cfg = CaseConfig::for_case(CaseId::Case1);
  ReplicateParams rp = draw_replicate_params(cfg, kReferencePopulationSeed);
  Cohort cohort;
  explicit Case1Data(std::size_t n, std::uint64_t seed) {
    cohort = redact_latent(generate_cohort(cfg, rp, cfg.observational, n, seed));
  }
};

double rastrigin(std::span<const double> x) {
  double f = 10.0 * static_cast<double>(x.size());
  for (double v : x) f += v * v - 10.0 * std::cos(2.0 * M_PI * v);
  return f;
}

}  // namespace

TEST_CASE("experimental log-density") {
  const TimeGrid g;
  SUBCASE("no switches at constant intensity 2 over t_max = 1") {
    const auto u = flat_unit(1.0, g);
    CHECK(experimental_logdensity(std::vector<double>{std::log(2.0), 0.0, 0.0}, IntensityFamily::LinExp, u, g) ==
          doctest::Approx(-2.0).epsilon(1e-12));
  }
  SUBCASE("unit intensity over t_max = 5") {
    const TimeGrid wide(6.0, 0.01, 0.1);
    auto u = flat_unit(5.0, wide);
    u.z_bmi = 0.7;
    CHECK(experimental_logdensity(std::vector<double>{0, 0, 0, 0}, IntensityFamily::OxytocinLinExp, u, wide) ==
          doctest::Approx(-5.0).epsilon(1e-12));
  }
  SUBCASE("same family and eta = theta reproduces the switching loglik") {
    Case1Data d(20, 4);
    const std::vector<double> theta{-0.3, 0.2, 0.15};
    for (const auto& u : d.cohort.units) {
      const double le = experimental_logdensity(theta, IntensityFamily::LinExp, u, d.cohort.grid);
      const double lo = switching_loglik(theta, IntensityFamily::LinExp, u, d.cohort.grid);
      CHECK(le == lo);
    }
  }
}

TEST_CASE("doubling the intensity scales the numerator by 2^J exp(-int lambda)") {
  Case1Data d(30, 11);
  const auto& g = d.cohort.grid;
  const std::vector<double> eta{-0.4, 0.1, 0.2};
  std::vector<double> doubled = eta;
  doubled[0] += std::log(2.0);
  std::size_t with_switches = 0;
  for (const auto& u : d.cohort.units) {
    const double base = brute_force_logdensity(IntensityFamily::LinExp, eta, u, g);
    const double twice = brute_force_logdensity(IntensityFamily::LinExp, doubled, u, g);
    const double survival = std::log(2.0) * static_cast<double>(u.switch_count()) - twice + base;  // = int lambda
    const double got = experimental_logdensity(doubled, IntensityFamily::LinExp, u, g) -
                       experimental_logdensity(eta, IntensityFamily::LinExp, u, g);
    CHECK(got == doctest::Approx(static_cast<double>(u.switch_count()) * std::log(2.0) - survival).epsilon(1e-9));
    CHECK(experimental_logdensity(eta, IntensityFamily::LinExp, u, g) == doctest::Approx(base).epsilon(1e-9));
    with_switches += u.switch_count() > 0 ? 1 : 0;
  }
  CHECK(with_switches > 0);
}

TEST_CASE("weight identity under a point-mass posterior") {
  Case1Data d(200, 21);
  const auto theta = d.cfg.observational.params;
  const auto draws = PosteriorDraws::point_mass(theta, IntensityFamily::LinExp);
  const auto w = compute_weights(theta, d.cohort, draws, IntensityFamily::LinExp);
  REQUIRE(w.w.size() == d.cohort.n());
  for (double wi : w.w) CHECK(std::abs(wi - 1.0) < 1e-10);

  SUBCASE("weights of one reduce the loss to the empirical mean") {
    double mean = 0.0;
    for (const auto& u : d.cohort.units) mean += std::exp(u.y);
    mean /= static_cast<double>(d.cohort.n());
    const double loss = posterior_predictive_loss(theta, d.cohort, draws, IntensityFamily::LinExp);
    CHECK(loss == doctest::Approx(mean).epsilon(1e-10));
    CHECK(loss == doctest::Approx(observed_mean_loss(d.cohort)).epsilon(1e-10));
    CHECK(loss == doctest::Approx(31.95).epsilon(0.10));
  }
}

TEST_CASE("loss arithmetic") {
  const TimeGrid g;
  SUBCASE("unit weights and constant outcome log c give c") {
    std::vector<UnitRecord> units(5, flat_unit(1.0, g, std::log(7.5)));
    const auto c = cohort_of(units, g);
    const std::vector<double> theta{0.0, 0.0, 0.0};
    CHECK(posterior_predictive_loss(theta, c, PosteriorDraws::point_mass(theta, IntensityFamily::LinExp),
                                    IntensityFamily::LinExp) == doctest::Approx(7.5).epsilon(1e-12));
  }
  SUBCASE("a single unit with weight 2 and y = 0 gives 2") {
    // Observed intensity 1 and policy intensity 1 - log 2 over [0, 1) without
    // switches: w = exp(-(1 - log 2) + 1) = 2.
    const auto c = cohort_of({flat_unit(1.0, g, 0.0)}, g);
    const auto draws = PosteriorDraws::point_mass({0.0, 0.0, 0.0}, IntensityFamily::LinExp);
    const std::vector<double> eta{std::log(1.0 - std::log(2.0)), 0.0, 0.0};
    const auto w = compute_weights(eta, c, draws, IntensityFamily::LinExp);
    CHECK(w.w[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(posterior_predictive_loss(eta, c, draws, IntensityFamily::LinExp) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("one unit with y = 0 has observed loss 1") {
    CHECK(observed_mean_loss(cohort_of({flat_unit(1.0, g, 0.0)}, g)) == 1.0);
  }
}

TEST_CASE("self-normalised loss is a weighted mean") {
  Case1Data d(100, 5);
  const auto draws = PosteriorDraws::point_mass(d.cfg.observational.params, IntensityFamily::LinExp);
  const std::vector<double> eta{0.3, -0.2, 0.1};
  const auto w = compute_weights(eta, d.cohort, draws, IntensityFamily::LinExp);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w.w.size(); ++i) {
    num += w.w[i] * std::exp(d.cohort.units[i].y);
    den += w.w[i];
  }
  const PolicyObjective sn(d.cohort, draws, IntensityFamily::LinExp, true);
  const PolicyObjective raw(d.cohort, draws, IntensityFamily::LinExp, false);
  CHECK(sn.loss(eta) == doctest::Approx(num / den).epsilon(1e-10));
  CHECK(raw.loss(eta) == doctest::Approx(num / static_cast<double>(w.w.size())).epsilon(1e-10));
}

TEST_CASE("weight diagnostics") {
  SUBCASE("equal weights") {
    const std::vector<double> w(100, 1.0);
    const auto d = weight_diagnostics(w);
    CHECK(d.ess == doctest::Approx(100.0));
    CHECK(d.max_share == doctest::Approx(0.01));
  }
  SUBCASE("one surviving weight") {
    std::vector<double> w(10, 0.0);
    w[0] = 1.0;
    const auto d = weight_diagnostics(w);
    CHECK(d.ess == doctest::Approx(1.0));
    CHECK(d.max_share == doctest::Approx(1.0));
  }
  SUBCASE("hand arithmetic") {
    const std::vector<double> w{2.0, 1.0, 1.0};
    CHECK(weight_diagnostics(w).ess == doctest::Approx(16.0 / 6.0));
  }
}

TEST_CASE("differential evolution") {
  SUBCASE("convex bowl") {
    DeConfig cfg;
    cfg.seed = 3;
    const auto res = de_minimize(
        [](std::span<const double> x) { return (x[0] - 1.0) * (x[0] - 1.0) + (x[1] - 2.0) * (x[1] - 2.0); }, 2, cfg);
    CHECK(std::hypot(res.x[0] - 1.0, res.x[1] - 2.0) < 1e-3);
  }
  SUBCASE("Rastrigin in two dimensions") {
    std::size_t solved = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      DeConfig cfg;
      cfg.seed = s;
      solved += de_minimize(rastrigin, 2, cfg).f < 1e-2 ? 1 : 0;
    }
    CHECK(solved >= 95);
  }
  SUBCASE("collapsed box returns its point") {
    DeConfig cfg;
    cfg.lower = {0.25, -1.5};
    cfg.upper = {0.25, -1.5};
    const auto res = de_minimize(rastrigin, 2, cfg);
    CHECK(res.x == std::vector<double>{0.25, -1.5});
  }
  SUBCASE("never worse than the best initial member") {
    DeConfig init_only;
    init_only.generations = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      init_only.seed = s;
      DeConfig full = init_only;
      full.generations = 30;
      CHECK(de_minimize(rastrigin, 3, full).f <= de_minimize(rastrigin, 3, init_only).f);
    }
  }
  SUBCASE("invalid settings") {
    DeConfig cfg;
    cfg.population_size = 3;
    CHECK_THROWS_AS(cfg.box(2), ConfigError);
    DeConfig inv;
    inv.lower = {1.0};
    inv.upper = {0.0};
    CHECK_THROWS_AS(inv.box(2), ConfigError);
  }
}

TEST_CASE("argmin is invariant to additive outcome shifts") {
  Case1Data d(150, 31);
  McmcConfig mc;
  mc.seed = 2;
  const auto draws = sample_posterior(d.cohort, IntensityFamily::LinExp, mc);
  Cohort shifted = d.cohort;
  const double c = 1.7;
  for (auto& u : shifted.units) u.y += c;
  const PolicyObjective a(d.cohort, draws, IntensityFamily::LinExp);
  const PolicyObjective b(shifted, draws, IntensityFamily::LinExp);
  std::size_t best_a = 0, best_b = 0;
  double fa = INFINITY, fb = INFINITY;
  std::size_t idx = 0;
  for (double e0 : {-0.8, -0.2, 0.4})
    for (double e1 : {-0.5, 0.5})
      for (double e2 : {-0.6, 0.0, 0.6}) {
        const std::vector<double> eta{e0, e1, e2};
        const double la = a.loss(eta), lb = b.loss(eta);
        CHECK(lb == doctest::Approx(la * std::exp(c)).epsilon(1e-10));
        if (la < fa) fa = la, best_a = idx;
        if (lb < fb) fb = lb, best_b = idx;
        ++idx;
      }
  CHECK(best_a == best_b);
}

TEST_CASE("loss is continuous in eta") {
  Case1Data d(100, 8);
  McmcConfig mc;
  mc.seed = 9;
  const auto draws = sample_posterior(d.cohort, IntensityFamily::LinExp, mc);
  const PolicyObjective obj(d.cohort, draws, IntensityFamily::LinExp);
  const double h = 1e-4;
  for (double t = -0.8; t <= 0.8; t += 0.1) {
    const std::vector<double> eta{t, 0.3, -0.2};
    const std::vector<double> nudged{t + h, 0.3, -0.2};
    const double f = obj.loss(eta);
    CHECK(std::abs(obj.loss(nudged) - f) / f < 1e-2);
  }
}

TEST_CASE("pinned optimisation reproduces the observed loss") {
  Case1Data d(200, 13);
  const auto theta = d.cfg.observational.params;
  DeConfig de;
  de.lower = theta;
  de.upper = theta;
  const auto est = optimize_eta(d.cohort, PosteriorDraws::point_mass(theta, IntensityFamily::LinExp),
                                IntensityFamily::LinExp, de);
  CHECK(est.eta == theta);
  CHECK(est.loss == doctest::Approx(observed_mean_loss(d.cohort)).epsilon(1e-10));
  CHECK(est.ess == doctest::Approx(200.0));
}

TEST_CASE("reported loss is the objective at the returned eta") {
  Case1Data d(120, 17);
  McmcConfig mc;
  mc.seed = 4;
  const auto draws = sample_posterior(d.cohort, IntensityFamily::LinExp, mc);
  DeConfig de;
  de.lower = {-0.85};
  de.upper = {0.85};
  de.generations = 20;
  const auto est = optimize_eta(d.cohort, draws, IntensityFamily::LinExp, de);
  CHECK(est.loss == posterior_predictive_loss(est.eta, d.cohort, draws, IntensityFamily::LinExp));
  CHECK(est.ess > 0.0);
  CHECK(est.ess <= 120.0 + 1e-9);
}

TEST_CASE("learned policy weakly beats observed practice on Case 1") {
  const auto cfg = CaseConfig::for_case(CaseId::Case1);
  const CaseWorld world(cfg, draw_replicate_params(cfg, kReferencePopulationSeed));
  std::size_t wins = 0;
  const std::size_t reps = 10;
  for (std::uint64_t r = 0; r < reps; ++r) {
    const auto cohort = redact_latent(generate_observed_cohort(world, 200, derive_seed(r, {stream::kTraining})));
    McmcConfig mc;
    mc.seed = derive_seed(r, {stream::kMcmc});
    const auto draws = sample_posterior(cohort, IntensityFamily::LinExp, mc);
    DeConfig de;
    de.lower = {-0.85};
    de.upper = {0.85};
    de.seed = derive_seed(r, {stream::kOptimizer});
    const auto est = optimize_eta(cohort, draws, IntensityFamily::LinExp, de);
    const auto eval_seed = derive_seed(r, {stream::kEvaluation});
    const double learned = evaluate_policy_loss(world, est.eta, 2000, eval_seed);
    const double mimic = evaluate_policy_loss(world, cfg.observational.params, 2000, eval_seed);
    wins += learned <= mimic ? 1 : 0;
  }
  CHECK(wins >= 9);
}

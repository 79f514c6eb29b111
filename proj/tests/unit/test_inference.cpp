#include <doctest.h>

#include <cmath>
#include <random>

#include "rtdtr/csl.hpp"
#include "rtdtr/inference.hpp"

using namespace rtdtr;

namespace {

// Step-by-step evaluation of the discretised counting-process density; the
// compiled path must agree with it.
double brute_force_loglik(IntensityFamily family, const std::vector<double>& theta,
                          const UnitRecord& u, const TimeGrid& g) {
  const IntensitySpec spec(family, theta);
  double ll = 0.0;
  for (double s : u.switch_times) ll += std::log(intensity_eval(spec, step_history(u, g.step_index(s) - 1, g)));
  for (std::size_t k = 0; k < g.step_index(u.t_max); ++k) ll -= intensity_eval(spec, step_history(u, k, g)) * g.dt();
  return ll;
}

UnitRecord flat_unit(double t_max, const TimeGrid& g, std::vector<double> switches = {}) {
  UnitRecord u;
  u.t_max = t_max;
  u.z3_path.assign(g.covariate_points(t_max), 0.0);
  u.switch_times = std::move(switches);
  return u;
}

Cohort case_cohort(CaseId id, std::size_t n, std::uint64_t seed) {
  const auto cfg = CaseConfig::for_case(id);
  return generate_cohort(cfg, draw_replicate_params(cfg, kReferencePopulationSeed), cfg.observational, n, seed);
}

}  // namespace

TEST_CASE("loglik of a unit-rate process") {
  const TimeGrid g;
  const std::vector<double> zero{0.0, 0.0, 0.0};
  CHECK(switching_loglik(zero, IntensityFamily::LinExp, flat_unit(2.0, g), g) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(switching_loglik(zero, IntensityFamily::LinExp, flat_unit(2.0, g, {1.0}), g) ==
        doctest::Approx(-2.0).epsilon(1e-12));
  const std::vector<double> wrong{0.0, 0.0};
  CHECK_THROWS_AS(switching_loglik(wrong, IntensityFamily::LinExp, flat_unit(2.0, g), g), ConfigError);
}

TEST_CASE("compiled path agrees with step-by-step evaluation") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 1.0);
  struct Setting {
    CaseId id;
    IntensityFamily family;
  };
  for (auto [id, family] : {Setting{CaseId::Case1, IntensityFamily::LinExp},
                            Setting{CaseId::Case2, IntensityFamily::SigmoidSwitch},
                            Setting{CaseId::Case3, IntensityFamily::LinExp}}) {
    const auto cohort = case_cohort(id, 40, 2);
    for (const auto& u : cohort.units) {
      for (double scale : {0.3, 3.0, 30.0}) {
        std::vector<double> th(3);
        for (auto& v : th) v = scale * nd(rng);
        const double fast = switching_loglik(th, family, u, cohort.grid);
        const double slow = brute_force_loglik(family, th, u, cohort.grid);
        CHECK(fast == doctest::Approx(slow).epsilon(1e-9));
      }
    }
  }
  const CslConfig csl;
  const auto cohort = generate_csl_like_cohort(csl, 40, 5);
  for (const auto& u : cohort.units) {
    for (double scale : {0.3, 3.0, 30.0}) {
      std::vector<double> th(4);
      for (auto& v : th) v = scale * nd(rng);
      const double fast = switching_loglik(th, IntensityFamily::OxytocinLinExp, u, cohort.grid);
      const double slow = brute_force_loglik(IntensityFamily::OxytocinLinExp, th, u, cohort.grid);
      CHECK(fast == doctest::Approx(slow).epsilon(1e-9));
    }
  }
}

TEST_CASE("Riemann sum converges as dt halves") {
  const auto cohort = case_cohort(CaseId::Case1, 20, 9);
  const TimeGrid half(3.0, 0.005, 0.1);
  const std::vector<double> th{-0.1, 0.05, 0.1};
  for (const auto& u : cohort.units) {
    const double a = switching_loglik(th, IntensityFamily::LinExp, u, cohort.grid);
    const double b = switching_loglik(th, IntensityFamily::LinExp, u, half);
    CHECK(std::abs(a - b) < 1e-2);
  }
}

TEST_CASE("loglik ignores outcome and latent") {
  const auto cohort = case_cohort(CaseId::Case3, 10, 1);
  const std::vector<double> th{0.2, -0.1, 0.3};
  for (auto u : cohort.units) {
    const double before = switching_loglik(th, IntensityFamily::LinExp, u, cohort.grid);
    u.y += 100.0;
    u.u = -7.0;
    CHECK(switching_loglik(th, IntensityFamily::LinExp, u, cohort.grid) == before);
  }
}

TEST_CASE("jump term adds the log intensity of each switch") {
  const auto cohort = case_cohort(CaseId::Case1, 20, 4);
  const std::vector<double> th{0.1, 0.2, -0.3};
  const IntensitySpec spec(IntensityFamily::LinExp, th);
  for (const auto& u : cohort.units) {
    double jumps = 0.0;
    for (double s : u.switch_times) jumps += std::log(intensity_eval(spec, step_history(u, cohort.grid.step_index(s) - 1, cohort.grid)));
    double exposure = 0.0;
    for (std::size_t k = 0; k < cohort.grid.step_index(u.t_max); ++k)
      exposure += intensity_eval(spec, step_history(u, k, cohort.grid)) * cohort.grid.dt();
    CHECK(switching_loglik(th, IntensityFamily::LinExp, u, cohort.grid) == doctest::Approx(jumps - exposure).epsilon(1e-10));
  }
}

TEST_CASE("log prior") {
  const double mode = 3.0 * std::log(1.0 / (5.0 * std::sqrt(2.0 * M_PI)));
  const std::vector<double> zero{0.0, 0.0, 0.0};
  CHECK(log_prior(zero) == doctest::Approx(mode).epsilon(1e-14));
  const std::vector<double> five{5.0, 0.0, 0.0};
  CHECK(log_prior(five) - mode == doctest::Approx(-0.5).epsilon(1e-12));
  const std::vector<double> a{0.3, -1.2, 4.0}, b{-0.3, 1.2, -4.0};
  CHECK(log_prior(a) == log_prior(b));
}

TEST_CASE("metropolis recovers a normal target") {
  McmcConfig cfg;
  cfg.n_iter = 40000;
  cfg.burn_in = 2000;
  cfg.thin = 2;
  cfg.seed = 3;
  const auto res = metropolis([](std::span<const double> x) { return -0.5 * std::pow((x[0] - 2.0) / 0.5, 2); }, {0.0}, cfg);
  const Eigen::VectorXd c = res.draws.col(0);
  const double m = c.mean();
  const double sd = std::sqrt((c.array() - m).square().sum() / static_cast<double>(c.size() - 1));
  CHECK(m == doctest::Approx(2.0).epsilon(0.03));
  CHECK(sd == doctest::Approx(0.5).epsilon(0.05));
  CHECK(res.acceptance_rate > 0.15);
  CHECK(res.acceptance_rate < 0.5);
}

TEST_CASE("mcmc configuration") {
  McmcConfig cfg;
  CHECK(cfg.retained() == 500);
  cfg.burn_in = 4000;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.burn_in = 10;
  cfg.thin = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("data-free posterior equals the prior") {
  const TimeGrid tiny(1e-6, 1e-6, 1e-6);
  Cohort cohort;
  cohort.grid = tiny;
  cohort.units.push_back(flat_unit(1e-6, tiny));
  McmcConfig mc;
  mc.n_iter = 60000;
  mc.burn_in = 5000;
  mc.thin = 10;
  mc.seed = 8;
  const auto pd = sample_posterior(cohort, IntensityFamily::LinExp, mc);
  for (const auto& s : posterior_summary(pd)) {
    CHECK(std::abs(s.mean) < 1.0);
    CHECK(s.sd == doctest::Approx(5.0).epsilon(0.2));
  }
}

TEST_CASE("sampling is deterministic and failures are diagnosed") {
  const auto cohort = case_cohort(CaseId::Case1, 100, 2);
  McmcConfig mc;
  mc.n_iter = 600;
  mc.burn_in = 200;
  mc.seed = 5;
  const auto a = sample_posterior(cohort, IntensityFamily::LinExp, mc);
  const auto b = sample_posterior(cohort, IntensityFamily::LinExp, mc);
  CHECK(a.draws == b.draws);
  CHECK(a.size() == 100);
  CHECK(a.draws.allFinite());

  mc.adapt = false;
  mc.proposal_scale = {1e3, 1e3, 1e3};
  CHECK_THROWS_AS(sample_posterior(cohort, IntensityFamily::LinExp, mc), DiagnosticFailure);
  Cohort empty;
  CHECK_THROWS_AS(sample_posterior(empty, IntensityFamily::LinExp, McmcConfig{}), ConfigError);
}

TEST_CASE("posterior summary") {
  PosteriorDraws same;
  same.draws = Eigen::MatrixXd::Constant(50, 2, 1.5);
  for (const auto& s : posterior_summary(same)) {
    CHECK(s.sd == 0.0);
    CHECK(s.split_r == 1.0);
    CHECK(s.mean == 1.5);
  }
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 1.0);
  PosteriorDraws iid;
  iid.draws.resize(500, 1);
  for (int i = 0; i < 500; ++i) iid.draws(i, 0) = nd(rng);
  const auto s = posterior_summary(iid)[0];
  CHECK(std::abs(s.mean) < 0.1);
  CHECK(std::abs(s.sd - 1.0) < 0.1);
  CHECK(s.split_r < 1.05);
}

TEST_CASE("posterior recovery on Case 1") {
  const auto cohort = case_cohort(CaseId::Case1, 1000, 31);
  McmcConfig mc;
  mc.seed = 2;
  const auto pd = sample_posterior(cohort, IntensityFamily::LinExp, mc);
  const auto summary = posterior_summary(pd);
  const double truth[] = {-0.1, 0.05, 0.1};
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(summary[j].mean - truth[j]) < 3.0 * summary[j].sd);
    CHECK(summary[j].split_r < 1.1);
  }
}

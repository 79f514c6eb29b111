// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
// Usage: rtdtr_acceptance [config_dir] [criterion ...]

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "rtdtr/harness.hpp"
#include "rtdtr/rng.hpp"

using namespace rtdtr;

namespace {

std::string g_config_dir = RTDTR_CONFIG_DIR;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fails]");
    pass = pass && ok;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

StudyConfig case_config(const std::string& file) { return load_study_config(g_config_dir + "/" + file); }

std::vector<double> losses(const StudyTable& t, Method m) {
  std::vector<double> out;
  for (const auto& r : t.replicates) {
    const auto* res = r.find(m);
    out.push_back(res && res->ok ? res->evaluated_loss : kNA);
  }
  return out;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

StudyTable study(const std::string& file, std::size_t n_reps, std::vector<Method> methods) {
  const auto sc = case_config(file);
  const std::vector<std::size_t> n{200};
  return run_study(sc.run, n, n_reps, methods, sc.seed, sc.workers);
}

const std::vector<Method> kUnoptProposed{Method::Unopt, Method::Proposed};
const std::vector<Method> kAll{Method::Unopt, Method::Bpm, Method::Proposed};

// Replicates of the BPM studies, reused by the runtime criterion.
std::vector<ReplicateResult> g_bpm_replicates;

Verdict criterion1() {
  const auto t = study("case1.json", 10, kUnoptProposed);
  const auto u = losses(t, Method::Unopt), p = losses(t, Method::Proposed);
  Verdict v;
  v.require(all_finite(u) && all_finite(p), "all replicates ok");
  v.require(mean(u) >= 29.0 && mean(u) <= 35.0, fmt("Unopt mean %.2f in [29, 35]", mean(u)));
  v.require(mean(p) >= 21.0 && mean(p) <= 24.5, fmt("Proposed mean %.2f in [21, 24.5]", mean(p)));
  std::size_t wins = 0;
  double worst_rt = 0.0;
  for (std::size_t r = 0; r < u.size(); ++r) {
    wins += p[r] < u[r] ? 1 : 0;
    worst_rt = std::max(worst_rt, t.replicates[r].find(Method::Proposed)->runtime_seconds);
  }
  v.require(wins >= 9, fmt("Proposed < Unopt in %.0f/10", static_cast<double>(wins)));
  v.require(worst_rt < 60.0, fmt("slowest Proposed fit %.2f s < 60 s", worst_rt));
  return v;
}

Verdict criterion2() {
  const auto t = study("case2.json", 10, kUnoptProposed);
  const auto u = losses(t, Method::Unopt), p = losses(t, Method::Proposed);
  Verdict v;
  v.require(all_finite(u) && all_finite(p), "all replicates ok");
  v.require(mean(p) >= 3.5 && mean(p) <= 9.0, fmt("Proposed mean %.2f in [3.5, 9]", mean(p)));
  v.require(mean(p) < mean(u), fmt("Proposed mean %.2f < Unopt mean %.2f", mean(p), mean(u)));
  return v;
}

Verdict criterion3() {
  const auto t = study("case3.json", 10, kAll);
  g_bpm_replicates.insert(g_bpm_replicates.end(), t.replicates.begin(), t.replicates.end());
  const auto u = losses(t, Method::Unopt), b = losses(t, Method::Bpm), p = losses(t, Method::Proposed);
  Verdict v;
  v.require(all_finite(u) && all_finite(b) && all_finite(p), "all replicates ok");
  v.require(mean(p) >= 54.0 && mean(p) <= 62.0, fmt("Proposed mean %.2f in [54, 62]", mean(p)));
  std::size_t beat_u = 0, beat_b = 0;
  for (std::size_t r = 0; r < p.size(); ++r) {
    beat_u += p[r] < u[r] ? 1 : 0;
    beat_b += p[r] < b[r] ? 1 : 0;
  }
  v.require(beat_u == p.size(), fmt("Proposed < Unopt in %.0f/10", static_cast<double>(beat_u)));
  v.require(beat_b == p.size(), fmt("Proposed < BPM in %.0f/10", static_cast<double>(beat_b)));
  v.require(mean(b) >= mean(u) - 5.0, fmt("BPM mean %.2f >= Unopt mean %.2f - 5", mean(b), mean(u)));
  return v;
}

Verdict criterion4() {
  const auto t = study("case4.json", 5, kAll);
  g_bpm_replicates.insert(g_bpm_replicates.end(), t.replicates.begin(), t.replicates.end());
  const auto b = losses(t, Method::Bpm), p = losses(t, Method::Proposed);
  Verdict v;
  v.require(all_finite(b) && all_finite(p), "all replicates ok");
  v.require(mean(p) < mean(b) / 3.0, fmt("Proposed mean %.2f < BPM mean %.2f / 3", mean(p), mean(b)));
  return v;
}

Verdict criterion5() {
  const auto cfg = CaseConfig::for_case(CaseId::Case1);
  const auto rp = draw_replicate_params(cfg, kReferencePopulationSeed);
  const auto cohort = redact_latent(generate_cohort(cfg, rp, cfg.observational, 1000, 5001));
  McmcConfig mc;
  mc.seed = 5;
  const auto summary = posterior_summary(sample_posterior(cohort, IntensityFamily::LinExp, mc));
  const double truth[] = {-0.1, 0.05, 0.1};
  Verdict v;
  for (std::size_t j = 0; j < 3; ++j) {
    const double z = std::abs(summary[j].mean - truth[j]) / summary[j].sd;
    v.require(z < 3.0, fmt("theta%.0f %.3f at %.2f sd", static_cast<double>(j), summary[j].mean, z));
    v.require(summary[j].split_r < 1.1, fmt("split-R %.3f", summary[j].split_r));
  }
  return v;
}

Cohort case1_cohort(std::size_t n, std::uint64_t seed) {
  const auto cfg = CaseConfig::for_case(CaseId::Case1);
  return redact_latent(
      generate_cohort(cfg, draw_replicate_params(cfg, kReferencePopulationSeed), cfg.observational, n, seed));
}

Verdict criterion6() {
  Verdict v;
  const auto c1 = CaseConfig::for_case(CaseId::Case1);
  const auto cohort = case1_cohort(200, 601);
  const auto theta = c1.observational.params;
  const auto point = PosteriorDraws::point_mass(theta, IntensityFamily::LinExp);

  {
    const auto w = compute_weights(theta, cohort, point, IntensityFamily::LinExp);
    double worst = 0.0;
    for (double wi : w.w) worst = std::max(worst, std::abs(wi - 1.0));
    v.require(worst < 1e-10, fmt("weight identity max |w-1| %.1e", worst));
    double m = 0.0;
    for (const auto& u : cohort.units) m += std::exp(u.y) / static_cast<double>(cohort.n());
    const double loss = posterior_predictive_loss(theta, cohort, point, IntensityFamily::LinExp);
    v.require(std::abs(loss - m) <= 1e-10 * m, fmt("empirical-mean reduction |diff| %.1e", std::abs(loss - m)));
  }
  {
    const TimeGrid half(cohort.grid.t_end(), cohort.grid.dt() / 2.0, cohort.grid.covariate_dt());
    double worst = 0.0;
    for (const auto& u : cohort.units)
      worst = std::max(worst, std::abs(switching_loglik(theta, IntensityFamily::LinExp, u, cohort.grid) -
                                       switching_loglik(theta, IntensityFamily::LinExp, u, half)));
    v.require(worst < 1e-2, fmt("Riemann max |dloglik| %.2e", worst));
  }
  {
    auto cfg = c1;
    cfg.completion = {-1e9, 0, 0, 0, 0, 0};
    const auto rp = draw_replicate_params(cfg, 602);
    const double c = 1.5;
    const IntensitySpec rate(IntensityFamily::LinExp, {std::log(c), 0.0, 0.0});
    const auto pc = generate_cohort(cfg, rp, rate, 10000, 603);
    double s = 0.0, s2 = 0.0;
    for (const auto& u : pc.units) {
      const double j = static_cast<double>(u.switch_count());
      s += j;
      s2 += j * j;
    }
    const double n = static_cast<double>(pc.n());
    const double m = s / n, se = std::sqrt((s2 / n - m * m) / n);
    const double tau = cfg.grid.t_end();
    v.require(std::abs(m - c * tau) < 3.0 * se, fmt("Poisson mean %.3f vs %.3f (se %.3f)", m, c * tau, se));
  }
  {
    DeConfig de;
    de.seed = 604;
    const auto r = de_minimize(
        [](std::span<const double> x) { return (x[0] - 0.3) * (x[0] - 0.3) + (x[1] + 0.4) * (x[1] + 0.4); }, 2, de);
    const double err = std::hypot(r.x[0] - 0.3, r.x[1] + 0.4);
    v.require(err < 1e-3, fmt("DE convex error %.1e", err));
  }
  {
    bool ok = std::abs(sigmoid(1.5, 1.5) - 0.5) < 1e-15 && sigmoid(1e6, 1.5) == 1.0 && sigmoid(-1e6, 1.5) == 0.0;
    ok = ok && std::abs(sigmoid(1.2, 1.5) - 1.0 / (1.0 + std::exp(3.0))) < 1e-15;
    for (double z = -3.0; z < 3.0; z += 0.01) ok = ok && std::abs(sigmoid(z, 0.0) + sigmoid(-z, 0.0) - 1.0) < 1e-12;
    v.require(ok, "sigmoid identities");
  }
  {
    McmcConfig mc;
    mc.seed = 605;
    mc.n_iter = 2000;
    mc.burn_in = 1000;
    const auto small = case1_cohort(150, 606);
    const auto draws = sample_posterior(small, IntensityFamily::LinExp, mc);
    Cohort shifted = small;
    for (auto& u : shifted.units) u.y += 1.3;
    const PolicyObjective a(small, draws, IntensityFamily::LinExp);
    const PolicyObjective b(shifted, draws, IntensityFamily::LinExp);
    DeConfig de = RunConfig::default_de();
    de.seed = 607;
    de.generations = 30;
    const auto ea = optimize_eta(a, de), eb = optimize_eta(b, de);
    v.require(ea.eta == eb.eta, "argmin invariant under outcome shift");
  }
  return v;
}

Verdict criterion7() {
  const auto sc = case_config("csl_like.json");
  Verdict v;
  std::size_t k = 0;
  for (double delta : {0.0, 2.0, 4.0, 6.0, 8.0}) {
    RunConfig cfg = sc.run;
    cfg.csl.delta = delta;
    const std::vector<std::size_t> n{200};
    const auto t = run_study(cfg, n, 10, kUnoptProposed, derive_seed(sc.seed, {++k}), sc.workers);
    std::size_t positive = 0;
    for (const auto& r : t.replicates) {
      const auto* p = r.find(Method::Proposed);
      positive += p && p->ok && p->params.size() == 4 && p->params[1] > 0.0 ? 1 : 0;
    }
    const auto u = losses(t, Method::Unopt), p = losses(t, Method::Proposed);
    const bool finite = all_finite(u) && all_finite(p);
    v.require(positive >= 8, fmt("delta %.0f: eta2 > 0 in %.0f/10", delta, static_cast<double>(positive)));
    v.require(finite && mean(p) < 0.6 * mean(u), fmt("loss %.1f < 0.6 x Unopt %.1f", mean(p), mean(u)));
  }
  return v;
}

Verdict criterion8() {
  Verdict v;
  std::size_t both = 0, ordered = 0;
  double worst = 0.0;
  for (const auto& r : g_bpm_replicates) {
    const auto* b = r.find(Method::Bpm);
    const auto* p = r.find(Method::Proposed);
    if (!b || !p || !b->ok || !p->ok) continue;
    ++both;
    ordered += p->runtime_seconds < b->runtime_seconds ? 1 : 0;
    worst = std::max(worst, p->runtime_seconds / b->runtime_seconds);
  }
  v.require(both > 0, fmt("%.0f replicates with both methods", static_cast<double>(both)));
  v.require(ordered == both, fmt("Proposed faster in %.0f/%.0f, worst ratio %.3f", static_cast<double>(ordered),
                                 static_cast<double>(both), worst));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (std::all_of(a.begin(), a.end(), ::isdigit))
      only.insert(std::stoi(a));
    else
      g_config_dir = a;
  }
  // Criterion 8 reads the replicates of 3 and 4.
  if (only.count(8)) only.insert({3, 4});

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8}};
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    std::printf("%s criterion %d: %s\n", v.pass ? "PASS" : "FAIL", id, v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

#include "rtdtr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <mutex>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "rtdtr/rng.hpp"

namespace rtdtr {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename F>
void capture(MethodResult& r, F&& body) {
  try {
    body();
    r.ok = true;
  } catch (const ConfigError& e) {
    r.error_kind = "config";
    r.error = e.what();
  } catch (const DomainError& e) {
    r.error_kind = "config";
    r.error = e.what();
  } catch (const DataError& e) {
    r.error_kind = "data";
    r.error = e.what();
  } catch (const DiagnosticFailure& e) {
    r.error_kind = "diagnostic";
    r.error = e.what();
  } catch (const std::exception& e) {
    r.error_kind = "internal";
    r.error = e.what();
  }
}

std::string format_number(double v, TableFormat fmt) {
  if (!std::isfinite(v)) return "NA";
  if (fmt == TableFormat::Markdown) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << v;
    return os.str();
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(std::string(where) + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

std::string_view anchor_name(BoxAnchor a) { return a == BoxAnchor::ThetaHat ? "theta_hat" : "absolute"; }

BoxAnchor parse_anchor(const std::string& s) {
  if (s == "absolute") return BoxAnchor::Absolute;
  if (s == "theta_hat") return BoxAnchor::ThetaHat;
  throw ConfigError("de.anchor must be \"absolute\" or \"theta_hat\"");
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Unopt: return "unopt";
    case Method::Bpm: return "bpm";
    case Method::Proposed: return "proposed";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::Unopt, Method::Bpm, Method::Proposed})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method: " + std::string(name));
}

DeConfig RunConfig::default_de() {
  DeConfig de;
  de.lower = {-0.85};
  de.upper = {0.85};
  return de;
}

RunConfig RunConfig::for_case(CaseId id) {
  RunConfig cfg;
  cfg.case_id = id;
  if (id == CaseId::CslLike) {
    cfg.box_anchor = BoxAnchor::ThetaHat;
    cfg.de.lower = {-1.0};
    cfg.de.upper = {1.0};
  }
  return cfg;
}

DeConfig optimizer_box(const RunConfig& cfg, std::size_t dim, const std::vector<double>* theta_hat,
                       std::uint64_t seed) {
  DeConfig de = cfg.de;
  de.seed = seed;
  if (cfg.box_anchor == BoxAnchor::ThetaHat) {
    if (!theta_hat || theta_hat->size() != dim)
      throw ConfigError("theta_hat-anchored bounds need a posterior mean of matching dimension");
    auto [lo, hi] = de.box(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      lo[j] += (*theta_hat)[j];
      hi[j] += (*theta_hat)[j];
    }
    de.lower = lo;
    de.upper = hi;
  }
  return de;
}

std::unique_ptr<World> make_world(const RunConfig& cfg) {
  if (cfg.case_id == CaseId::CslLike) return std::make_unique<CslWorld>(cfg.csl);
  const auto cc = CaseConfig::for_case(cfg.case_id);
  return std::make_unique<CaseWorld>(cc, draw_replicate_params(cc, cfg.population_seed));
}

const MethodResult* ReplicateResult::find(Method m) const {
  for (const auto& r : methods)
    if (r.method == m) return &r;
  return nullptr;
}

ReplicateResult run_replicate(const RunConfig& cfg, std::size_t n, std::uint64_t seed,
                              std::span<const Method> methods) {
  if (n < 10) throw ConfigError("run_replicate: n must be at least 10");
  if (cfg.n_eval == 0) throw ConfigError("run_replicate: n_eval must be at least 1");
  cfg.mcmc.validate();
  const auto world = make_world(cfg);
  const Cohort cohort =
      redact_latent(generate_observed_cohort(*world, n, derive_seed(seed, {stream::kTraining})));
  const std::uint64_t eval_seed = derive_seed(seed, {stream::kEvaluation});
  const IntensityFamily obs_family = world->observational().family;
  const IntensityFamily exp_family = world->policy_family();
  const std::size_t dim = family_dimension(exp_family);

  ReplicateResult out;
  out.case_id = cfg.case_id;
  out.n = n;
  out.seed = seed;

  auto wants = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };

  // Posterior of theta, shared by Unopt and Proposed.
  std::optional<PosteriorDraws> draws;
  std::string posterior_error, posterior_kind;
  double sampling_seconds = 0.0;
  if (wants(Method::Unopt) || wants(Method::Proposed)) {
    MethodResult probe;
    capture(probe, [&] {
      McmcConfig mc = cfg.mcmc;
      mc.seed = derive_seed(seed, {stream::kMcmc});
      const auto t0 = Clock::now();
      draws = sample_posterior(cohort, obs_family, mc);
      sampling_seconds = seconds_since(t0);
    });
    posterior_error = probe.error;
    posterior_kind = probe.error_kind;
  }
  const std::vector<double> theta_hat = draws ? draws->mean() : std::vector<double>{};

  for (Method m : methods) {
    MethodResult r;
    r.method = m;
    switch (m) {
      case Method::Unopt:
        capture(r, [&] {
          r.evaluated_loss = observed_mean_loss(cohort);
          r.params = theta_hat;
          if (!draws) r.warning = "theta-hat unavailable: " + posterior_error;
        });
        break;
      case Method::Proposed:
        if (!draws) {
          r.error = posterior_error;
          r.error_kind = posterior_kind;
          break;
        }
        capture(r, [&] {
          const auto t0 = Clock::now();
          const PolicyObjective obj(cohort, *draws, exp_family, cfg.self_normalized);
          const auto de = optimizer_box(cfg, dim, &theta_hat, derive_seed(seed, {stream::kOptimizer}));
          const auto est = optimize_eta(obj, de);
          r.runtime_seconds = sampling_seconds + seconds_since(t0);
          r.params = est.eta;
          r.estimated_loss = est.loss;
          r.ess = est.ess;
          r.warning = est.warning;
          r.evaluated_loss = evaluate_policy_loss(*world, est.eta, exp_family, cfg.n_eval, eval_seed);
        });
        break;
      case Method::Bpm:
        capture(r, [&] {
          if (cfg.case_id == CaseId::CslLike) throw ConfigError("bpm: unsupported case CslLike");
          const auto de = optimizer_box(cfg, dim, draws ? &theta_hat : nullptr,
                                  derive_seed(seed, {stream::kBpm, stream::kOptimizer}));
          BpmConfig bc;
          bc.mcmc = cfg.mcmc;
          bc.mcmc.seed = derive_seed(seed, {stream::kBpm, stream::kMcmc});
          bc.n_draws = cfg.bpm_draws;
          bc.n_mc = cfg.bpm_mc;
          bc.seed = derive_seed(seed, {stream::kBpm});
          const auto t0 = Clock::now();
          const auto post = fit_bpm(cohort, cfg.case_id, bc);
          const auto est = bpm_optimize(post, de, bc.n_mc, derive_seed(seed, {stream::kBpm, stream::kEvaluation}));
          r.runtime_seconds = seconds_since(t0);
          r.params = est.eta;
          r.estimated_loss = est.loss;
          r.evaluated_loss = evaluate_policy_loss(*world, est.eta, exp_family, cfg.n_eval, eval_seed);
        });
        break;
    }
    out.methods.push_back(std::move(r));
  }
  return out;
}

std::uint64_t replicate_seed(std::uint64_t study_seed, std::size_t r) {
  return derive_seed(study_seed, {stream::kReplicate, r});
}

StudyTable aggregate(std::vector<ReplicateResult> replicates) {
  StudyTable table;
  using Key = std::tuple<CaseId, std::size_t, Method>;
  std::vector<Key> order;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> values;
  std::map<Key, std::size_t> failures;
  for (const auto& rep : replicates) {
    for (const auto& m : rep.methods) {
      const Key k{rep.case_id, rep.n, m.method};
      if (!values.count(k)) {
        order.push_back(k);
        values[k];
        failures[k] = 0;
      }
      if (!m.ok || !std::isfinite(m.evaluated_loss)) {
        ++failures[k];
        continue;
      }
      values[k].first.push_back(m.evaluated_loss);
      if (std::isfinite(m.runtime_seconds)) values[k].second.push_back(m.runtime_seconds);
    }
  }
  auto mean_sd = [](const std::vector<double>& v) {
    std::pair<double, double> ms{kNA, kNA};
    if (v.empty()) return ms;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    ms.first = mean;
    if (v.size() >= 2) {
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      ms.second = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return ms;
  };
  for (const auto& k : order) {
    StudyRow row;
    std::tie(row.case_id, row.n, row.method) = k;
    const auto& [losses, rts] = values[k];
    row.n_ok = losses.size();
    row.n_failed = failures[k];
    std::tie(row.loss_mean, row.loss_sd) = mean_sd(losses);
    std::tie(row.rt_mean, row.rt_sd) = mean_sd(rts);
    table.rows.push_back(row);
  }
  table.replicates = std::move(replicates);
  return table;
}

StudyTable run_study(const RunConfig& cfg, std::span<const std::size_t> n_list, std::size_t n_reps,
                     std::span<const Method> methods, std::uint64_t study_seed, std::size_t workers) {
  if (n_reps < 2) throw ConfigError("run_study: n_reps must be at least 2");
  struct Job {
    std::size_t n, r;
  };
  std::vector<Job> jobs;
  for (std::size_t n : n_list)
    for (std::size_t r = 0; r < n_reps; ++r) jobs.push_back({n, r});
  std::vector<ReplicateResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        results[i] = run_replicate(cfg, jobs[i].n, replicate_seed(study_seed, jobs[i].r), methods);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t w = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return aggregate(std::move(results));
}

std::string report_table(const StudyTable& table, TableFormat format) {
  static const char* const kColumns[] = {"case", "n", "method", "loss_mean", "loss_sd", "rt_mean", "rt_sd"};
  std::ostringstream os;
  bool sd_footnote = false;
  bool failure_footnote = false;
  auto cells = [&](const StudyRow& r) {
    if (r.n_ok < 2) sd_footnote = true;
    if (r.n_failed > 0) failure_footnote = true;
    const bool no_rt = r.method == Method::Unopt;
    return std::vector<std::string>{std::string(case_name(r.case_id)),
                                    std::to_string(r.n),
                                    std::string(method_name(r.method)),
                                    format_number(r.loss_mean, format),
                                    format_number(r.loss_sd, format),
                                    no_rt ? "NA" : format_number(r.rt_mean, format),
                                    no_rt ? "NA" : format_number(r.rt_sd, format)};
  };
  if (format == TableFormat::Csv) {
    for (std::size_t i = 0; i < 7; ++i) os << (i ? "," : "") << kColumns[i];
    os << '\n';
    for (const auto& r : table.rows) {
      const auto c = cells(r);
      for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
      os << '\n';
    }
    return os.str();
  }
  os << '|';
  for (const char* c : kColumns) os << ' ' << c << " |";
  os << "\n|";
  for (std::size_t i = 0; i < 7; ++i) os << (i < 3 ? " --- |" : " ---: |");
  os << '\n';
  for (const auto& r : table.rows) {
    os << '|';
    for (const auto& c : cells(r)) os << ' ' << c << " |";
    os << '\n';
  }
  if (sd_footnote) os << "\nNA sd: fewer than two successful replicates.\n";
  if (failure_footnote) {
    os << "\nFailed replicates:";
    for (const auto& r : table.rows)
      if (r.n_failed > 0)
        os << ' ' << case_name(r.case_id) << '/' << r.n << '/' << method_name(r.method) << '=' << r.n_failed;
    os << '\n';
  }
  return os.str();
}

StudyConfig study_config_from_json(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    check_keys(j, {"case", "n", "n_reps", "methods", "seed", "workers", "population_seed", "n_eval",
                   "self_normalized", "mcmc", "de", "bpm", "csl"},
               "config");
    StudyConfig sc;
    const CaseId id = parse_case(j.value("case", std::string("Case1")));
    sc.run = RunConfig::for_case(id);
    auto& run = sc.run;
    if (auto it = j.find("n"); it != j.end())
      sc.n_list = it->is_array() ? it->get<std::vector<std::size_t>>()
                                 : std::vector<std::size_t>{it->get<std::size_t>()};
    read_if(j, "n_reps", sc.n_reps);
    read_if(j, "seed", sc.seed);
    read_if(j, "workers", sc.workers);
    if (auto it = j.find("methods"); it != j.end()) {
      sc.methods.clear();
      for (const auto& m : *it) sc.methods.push_back(parse_method(m.get<std::string>()));
    }
    read_if(j, "population_seed", run.population_seed);
    read_if(j, "n_eval", run.n_eval);
    read_if(j, "self_normalized", run.self_normalized);
    if (auto it = j.find("mcmc"); it != j.end()) {
      check_keys(*it, {"n_iter", "burn_in", "thin", "proposal_scale", "adapt"}, "mcmc");
      read_if(*it, "n_iter", run.mcmc.n_iter);
      read_if(*it, "burn_in", run.mcmc.burn_in);
      read_if(*it, "thin", run.mcmc.thin);
      read_if(*it, "proposal_scale", run.mcmc.proposal_scale);
      read_if(*it, "adapt", run.mcmc.adapt);
    }
    if (auto it = j.find("de"); it != j.end()) {
      check_keys(*it, {"population_size", "generations", "F", "CR", "lower", "upper", "anchor"}, "de");
      read_if(*it, "population_size", run.de.population_size);
      read_if(*it, "generations", run.de.generations);
      read_if(*it, "F", run.de.F);
      read_if(*it, "CR", run.de.CR);
      read_if(*it, "lower", run.de.lower);
      read_if(*it, "upper", run.de.upper);
      if (auto a = it->find("anchor"); a != it->end()) run.box_anchor = parse_anchor(a->get<std::string>());
    }
    if (auto it = j.find("bpm"); it != j.end()) {
      check_keys(*it, {"n_draws", "n_mc"}, "bpm");
      read_if(*it, "n_draws", run.bpm_draws);
      read_if(*it, "n_mc", run.bpm_mc);
    }
    if (auto it = j.find("csl"); it != j.end()) {
      if (it->is_string()) {
        std::filesystem::path p = it->get<std::string>();
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        run.csl = load_csl_config(p.string());
      } else {
        run.csl = csl_config_from_json(it->dump());
      }
    }
    run.mcmc.validate();
    run.de.box(1);
    if (run.n_eval == 0) throw ConfigError("config: n_eval must be at least 1");
    if (run.bpm_draws == 0 || run.bpm_mc == 0) throw ConfigError("config: bpm n_draws and n_mc must be positive");
    return sc;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return study_config_from_json(ss.str(), dir.empty() ? "." : dir.string());
}

std::string study_config_to_json(const StudyConfig& sc) {
  const auto& run = sc.run;
  json j;
  j["case"] = std::string(case_name(run.case_id));
  j["n"] = sc.n_list;
  j["n_reps"] = sc.n_reps;
  json methods = json::array();
  for (auto m : sc.methods) methods.push_back(std::string(method_name(m)));
  j["methods"] = methods;
  j["seed"] = sc.seed;
  j["workers"] = sc.workers;
  j["population_seed"] = run.population_seed;
  j["n_eval"] = run.n_eval;
  j["self_normalized"] = run.self_normalized;
  j["mcmc"] = {{"n_iter", run.mcmc.n_iter},
               {"burn_in", run.mcmc.burn_in},
               {"thin", run.mcmc.thin},
               {"proposal_scale", run.mcmc.proposal_scale},
               {"adapt", run.mcmc.adapt}};
  j["de"] = {{"population_size", run.de.population_size},
             {"generations", run.de.generations},
             {"F", run.de.F},
             {"CR", run.de.CR},
             {"lower", run.de.lower},
             {"upper", run.de.upper},
             {"anchor", std::string(anchor_name(run.box_anchor))}};
  j["bpm"] = {{"n_draws", run.bpm_draws}, {"n_mc", run.bpm_mc}};
  if (run.case_id == CaseId::CslLike) j["csl"] = json::parse(csl_config_to_json(run.csl));
  return j.dump(2);
}

std::string replicate_to_json(const ReplicateResult& r) {
  json j;
  j["case"] = std::string(case_name(r.case_id));
  j["n"] = r.n;
  j["seed"] = r.seed;
  json ms = json::array();
  for (const auto& m : r.methods) {
    json o;
    o["method"] = std::string(method_name(m.method));
    o["ok"] = m.ok;
    if (!m.ok) {
      o["error"] = m.error;
      o["error_kind"] = m.error_kind;
    }
    o["evaluated_loss"] = number_or_null(m.evaluated_loss);
    o["runtime_seconds"] = number_or_null(m.runtime_seconds);
    o["params"] = m.params;
    o["estimated_loss"] = number_or_null(m.estimated_loss);
    o["ess"] = number_or_null(m.ess);
    if (!m.warning.empty()) o["warning"] = m.warning;
    ms.push_back(std::move(o));
  }
  j["methods"] = std::move(ms);
  return j.dump();
}

ReplicateResult replicate_from_json(const std::string& text) {
  auto num = [](const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() || it->is_null() ? kNA : it->get<double>();
  };
  try {
    const json j = json::parse(text);
    ReplicateResult r;
    r.case_id = parse_case(j.at("case").get<std::string>());
    r.n = j.at("n").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("methods")) {
      MethodResult m;
      m.method = parse_method(o.at("method").get<std::string>());
      m.ok = o.at("ok").get<bool>();
      m.error = o.value("error", std::string());
      m.error_kind = o.value("error_kind", std::string());
      m.evaluated_loss = num(o, "evaluated_loss");
      m.runtime_seconds = num(o, "runtime_seconds");
      m.params = o.value("params", std::vector<double>{});
      m.estimated_loss = num(o, "estimated_loss");
      m.ess = num(o, "ess");
      m.warning = o.value("warning", std::string());
      r.methods.push_back(std::move(m));
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("replicate record: ") + e.what());
  }
}

}  // namespace rtdtr

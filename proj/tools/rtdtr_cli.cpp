#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rtdtr/harness.hpp"
#include "rtdtr/io.hpp"
#include "rtdtr/recsvc.hpp"

using namespace rtdtr;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> case_name;
  std::optional<std::uint64_t> population_seed;
  std::optional<std::size_t> workers;
};

struct ServeSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<double> eta;
  std::string estimate;
  std::size_t dt_steps = 10;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Study settings from --config, minus its optional "serve" section.
StudyConfig load_config(const Common& c, ServeSettings* serve = nullptr) {
  StudyConfig sc;
  if (!c.config.empty()) {
    json j;
    try {
      j = json::parse(read_text(c.config));
    } catch (const json::exception& e) {
      throw ConfigError("config: " + std::string(e.what()));
    }
    if (auto it = j.find("serve"); it != j.end()) {
      if (serve) {
        try {
          serve->host = it->value("host", serve->host);
          serve->port = it->value("port", serve->port);
          serve->eta = it->value("eta", serve->eta);
          serve->estimate = it->value("estimate", serve->estimate);
          serve->dt_steps = it->value("dt_steps", serve->dt_steps);
        } catch (const json::exception& e) {
          throw ConfigError("config serve: " + std::string(e.what()));
        }
      }
      j.erase("serve");
    }
    const auto dir = std::filesystem::path(c.config).parent_path();
    sc = study_config_from_json(j.dump(), dir.empty() ? "." : dir.string());
  }
  if (c.case_name) {
    const CaseId id = parse_case(*c.case_name);
    if (id != sc.run.case_id) {
      RunConfig fresh = RunConfig::for_case(id);
      fresh.mcmc = sc.run.mcmc;
      fresh.n_eval = sc.run.n_eval;
      fresh.csl = sc.run.csl;
      sc.run = fresh;
    }
  }
  if (c.seed) sc.seed = *c.seed;
  if (c.population_seed) sc.run.population_seed = *c.population_seed;
  if (c.workers) sc.workers = *c.workers;
  return sc;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file");
  app->add_option("--seed", c.seed, "root seed");
  app->add_option("--case", c.case_name, "Case1, Case2, Case3, Case4 or CslLike");
  app->add_option("--population-seed", c.population_seed, "seed of the case population");
}

std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse number \"" + tok + "\"");
    }
  }
  return v;
}

void write_json_out(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << text << '\n';
}

IntensityFamily observational_family(const Cohort& cohort, const RunConfig& run) {
  RunConfig r = cohort.case_id == run.case_id ? run : RunConfig::for_case(cohort.case_id);
  r.csl = run.csl;
  return make_world(r)->observational().family;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int exit_code_for(const std::string& kind) {
  if (kind == "config") return kExitConfig;
  if (kind == "data") return kExitData;
  if (kind == "diagnostic") return kExitDiagnostic;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random real-time dynamic treatment regimes: simulation, inference, optimisation, evaluation"};
  app.require_subcommand(1);
  Common c;

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate an observational cohort");
  add_common(sim, c);
  std::size_t sim_n = 200;
  std::string sim_out = "cohort.jsonl";
  sim->add_option("--n", sim_n, "number of units");
  sim->add_option("--out", sim_out, "cohort file (JSONL)");

  // fit-theta
  auto* fit = app.add_subcommand("fit-theta", "sample the posterior of the observational intensity");
  add_common(fit, c);
  std::string fit_cohort, fit_out = "posterior.json";
  fit->add_option("--cohort", fit_cohort, "cohort file")->required();
  fit->add_option("--out", fit_out, "posterior file");

  // optimize
  auto* opt = app.add_subcommand("optimize", "minimise the posterior predictive loss over eta");
  add_common(opt, c);
  std::string opt_cohort, opt_post, opt_out = "-";
  opt->add_option("--cohort", opt_cohort, "cohort file")->required();
  opt->add_option("--posterior", opt_post, "posterior file")->required();
  opt->add_option("--out", opt_out, "estimate file");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "loss of a policy on fresh simulated units");
  add_common(ev, c);
  std::string ev_eta, ev_est;
  std::optional<std::size_t> ev_n;
  ev->add_option("--eta", ev_eta, "comma-separated policy parameters");
  ev->add_option("--estimate", ev_est, "estimate file from optimize");
  ev->add_option("--n-eval", ev_n, "evaluation units");

  // replicate
  auto* rep = app.add_subcommand("replicate", "one replicate of every method");
  add_common(rep, c);
  std::optional<std::size_t> rep_n;
  std::vector<std::string> rep_methods;
  std::string rep_out = "-";
  rep->add_option("--n", rep_n, "training units");
  rep->add_option("--methods", rep_methods, "unopt, bpm, proposed");
  rep->add_option("--out", rep_out, "replicate record (JSON)");

  // study
  auto* st = app.add_subcommand("study", "replicated simulation study");
  add_common(st, c);
  st->add_option("--workers", c.workers, "worker threads");
  std::optional<std::size_t> st_reps;
  std::vector<std::size_t> st_n;
  std::vector<std::string> st_methods;
  std::string st_records, st_out = "-", st_format = "csv";
  st->add_option("--n", st_n, "training sizes");
  st->add_option("--n-reps", st_reps, "replicates per size");
  st->add_option("--methods", st_methods, "unopt, bpm, proposed");
  st->add_option("--records", st_records, "write replicate records (JSONL)");
  st->add_option("--out", st_out, "summary table");
  st->add_option("--format", st_format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown"}));

  // report
  auto* rp = app.add_subcommand("report", "summary table from replicate records");
  add_common(rp, c);
  std::vector<std::string> rp_in;
  std::string rp_out = "-", rp_format = "csv";
  rp->add_option("records", rp_in, "replicate record files (JSONL)")->required();
  rp->add_option("--out", rp_out, "summary table");
  rp->add_option("--format", rp_format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown"}));

  // serve
  auto* sv = app.add_subcommand("serve", "recommendation service over HTTP");
  add_common(sv, c);
  std::optional<std::string> sv_host, sv_eta, sv_est;
  std::optional<int> sv_port;
  sv->add_option("--host", sv_host, "bind address");
  sv->add_option("--port", sv_port, "port (0 picks a free port)");
  sv->add_option("--eta", sv_eta, "default policy parameters");
  sv->add_option("--estimate", sv_est, "default policy from an optimize estimate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*sim) {
      const auto sc = load_config(c);
      const auto world = make_world(sc.run);
      const Cohort cohort = redact_latent(
          generate_observed_cohort(*world, sim_n, derive_seed(sc.seed, {stream::kTraining})));
      write_cohort(cohort, sim_out);
      std::cerr << "wrote " << cohort.n() << " units to " << sim_out << '\n';
    } else if (*fit) {
      const auto sc = load_config(c);
      const Cohort cohort = read_cohort(fit_cohort);
      McmcConfig mc = sc.run.mcmc;
      mc.seed = derive_seed(sc.seed, {stream::kMcmc});
      const auto draws = sample_posterior(cohort, observational_family(cohort, sc.run), mc);
      write_posterior(draws, fit_out);
      std::cerr << "acceptance " << draws.acceptance_rate << ", " << draws.size() << " draws\n";
    } else if (*opt) {
      auto sc = load_config(c);
      const Cohort cohort = read_cohort(opt_cohort);
      if (cohort.case_id != sc.run.case_id) sc.run = RunConfig::for_case(cohort.case_id);
      const auto draws = read_posterior(opt_post);
      const auto family = make_world(sc.run)->policy_family();
      const PolicyObjective obj(cohort, draws, family, sc.run.self_normalized);
      const auto theta_hat = draws.mean();
      const auto de = optimizer_box(sc.run, family_dimension(family), &theta_hat,
                                    derive_seed(sc.seed, {stream::kOptimizer}));
      const auto est = optimize_eta(obj, de);
      if (!est.warning.empty()) std::cerr << "warning: " << est.warning << '\n';
      if (opt_out == "-")
        std::cout << estimate_to_json(est, family) << '\n';
      else
        write_estimate(est, family, opt_out);
    } else if (*ev) {
      auto sc = load_config(c);
      std::vector<double> eta;
      if (!ev_est.empty()) {
        eta = read_estimate(ev_est).second;
      } else if (!ev_eta.empty()) {
        eta = parse_vector(ev_eta);
      } else {
        throw ConfigError("evaluate needs --eta or --estimate");
      }
      const auto world = make_world(sc.run);
      if (eta.size() != family_dimension(world->policy_family()))
        throw ConfigError("eta has wrong length for the case's policy family");
      const double loss = evaluate_policy_loss(*world, eta, world->policy_family(), ev_n.value_or(sc.run.n_eval),
                                               derive_seed(sc.seed, {stream::kEvaluation}));
      std::cout << json{{"case", std::string(case_name(sc.run.case_id))}, {"eta", eta}, {"loss", loss}}.dump()
                << '\n';
    } else if (*rep) {
      auto sc = load_config(c);
      std::vector<Method> methods = sc.methods;
      if (!rep_methods.empty()) {
        methods.clear();
        for (const auto& m : rep_methods) methods.push_back(parse_method(m));
      }
      const auto r = run_replicate(sc.run, rep_n.value_or(sc.n_list.front()), sc.seed, methods);
      write_json_out(replicate_to_json(r), rep_out);
      for (const auto& m : r.methods)
        if (!m.ok) {
          std::cerr << method_name(m.method) << " failed: " << m.error << '\n';
          return exit_code_for(m.error_kind);
        }
    } else if (*st) {
      auto sc = load_config(c);
      if (!st_n.empty()) sc.n_list = st_n;
      if (st_reps) sc.n_reps = *st_reps;
      if (!st_methods.empty()) {
        sc.methods.clear();
        for (const auto& m : st_methods) sc.methods.push_back(parse_method(m));
      }
      const auto table = run_study(sc.run, sc.n_list, sc.n_reps, sc.methods, sc.seed, sc.workers);
      if (!st_records.empty()) {
        std::ofstream out(st_records);
        if (!out) throw DataError("cannot open " + st_records + " for writing");
        for (const auto& r : table.replicates) out << replicate_to_json(r) << '\n';
      }
      const auto fmt = st_format == "markdown" ? TableFormat::Markdown : TableFormat::Csv;
      const std::string text = report_table(table, fmt);
      if (st_out == "-")
        std::cout << text;
      else
        std::ofstream(st_out) << text;
    } else if (*rp) {
      std::vector<ReplicateResult> reps;
      for (const auto& path : rp_in) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open " + path);
        std::size_t lineno = 0;
        for (std::string line; std::getline(in, line);) {
          ++lineno;
          if (line.empty()) continue;
          try {
            reps.push_back(replicate_from_json(line));
          } catch (const std::exception& e) {
            throw DataError(path + " line " + std::to_string(lineno) + ": " + e.what());
          }
        }
      }
      const auto fmt = rp_format == "markdown" ? TableFormat::Markdown : TableFormat::Csv;
      const std::string text = report_table(aggregate(std::move(reps)), fmt);
      if (rp_out == "-")
        std::cout << text;
      else
        std::ofstream(rp_out) << text;
    } else if (*sv) {
      ServeSettings ss;
      auto sc = load_config(c, &ss);
      if (sv_host) ss.host = *sv_host;
      if (sv_port) ss.port = *sv_port;
      if (sv_eta) ss.eta = parse_vector(*sv_eta);
      if (sv_est) ss.estimate = *sv_est;
      ServiceConfig cfg;
      cfg.simulator = sc.run.csl;
      cfg.seed = sc.seed;
      cfg.default_dt_steps = ss.dt_steps;
      if (!ss.estimate.empty()) {
        auto [family, eta] = read_estimate(ss.estimate);
        if (family != IntensityFamily::OxytocinLinExp)
          throw ConfigError("serve needs an OxytocinLinExp estimate");
        cfg.default_eta = eta;
      } else if (!ss.eta.empty()) {
        cfg.default_eta = ss.eta;
      }
      RecommendationService service(cfg);
      HttpServer server(service);
      const int port = server.bind(ss.host, ss.port);
      std::cerr << "listening on http://" << ss.host << ':' << port << '\n';
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen();
      g_server = nullptr;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DiagnosticFailure& e) {
    std::cerr << "diagnostic failure: " << e.what() << '\n';
    return kExitDiagnostic;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

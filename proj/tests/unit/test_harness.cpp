#include <doctest.h>

#include <cmath>
#include <sstream>

#include "rtdtr/harness.hpp"

using namespace rtdtr;

namespace {

RunConfig fast_config(CaseId id) {
  RunConfig cfg = RunConfig::for_case(id);
  cfg.mcmc.n_iter = 800;
  cfg.mcmc.burn_in = 400;
  cfg.mcmc.thin = 4;
  cfg.de.population_size = 12;
  cfg.de.generations = 10;
  cfg.n_eval = 200;
  cfg.bpm_draws = 5;
  cfg.bpm_mc = 2;
  return cfg;
}

const std::vector<Method> kUnoptProposed{Method::Unopt, Method::Proposed};

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("method names") {
  for (auto m : {Method::Unopt, Method::Bpm, Method::Proposed}) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("oracle"), ConfigError);
}

TEST_CASE("replicates are reproducible") {
  const auto cfg = fast_config(CaseId::Case1);
  const auto a = run_replicate(cfg, 60, 42, kUnoptProposed);
  const auto b = run_replicate(cfg, 60, 42, kUnoptProposed);
  CHECK(replicate_to_json(a).size() > 0);
  REQUIRE(a.methods.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.methods[i].ok);
    CHECK(a.methods[i].evaluated_loss == b.methods[i].evaluated_loss);
    CHECK(a.methods[i].params == b.methods[i].params);
  }
  const auto* unopt = a.find(Method::Unopt);
  REQUIRE(unopt);
  CHECK(std::isnan(unopt->runtime_seconds));
  CHECK(unopt->params.size() == 3);
  const auto* prop = a.find(Method::Proposed);
  REQUIRE(prop);
  CHECK(prop->runtime_seconds > 0.0);
  CHECK(a.find(Method::Bpm) == nullptr);
  CHECK_THROWS_AS(run_replicate(cfg, 9, 1, kUnoptProposed), ConfigError);
}

TEST_CASE("a failing method does not abort the replicate") {
  auto cfg = fast_config(CaseId::CslLike);
  const std::vector<Method> all{Method::Unopt, Method::Bpm, Method::Proposed};
  const auto r = run_replicate(cfg, 40, 3, all);
  REQUIRE(r.methods.size() == 3);
  const auto* bpm = r.find(Method::Bpm);
  REQUIRE(bpm);
  CHECK_FALSE(bpm->ok);
  CHECK(bpm->error_kind == "config");
  CHECK(r.find(Method::Unopt)->ok);
  CHECK(r.find(Method::Proposed)->ok);
}

TEST_CASE("study seeds and aggregation") {
  const auto cfg = fast_config(CaseId::Case1);
  const std::vector<std::size_t> ns{40};
  const auto table = run_study(cfg, ns, 3, kUnoptProposed, 99, 2);
  REQUIRE(table.replicates.size() == 3);
  REQUIRE(table.rows.size() == 2);

  SUBCASE("a replicate re-run standalone reproduces its record") {
    auto alone = run_replicate(cfg, 40, replicate_seed(99, 1), kUnoptProposed);
    auto stored = table.replicates[1];
    for (auto* r : {&alone, &stored})
      for (auto& m : r->methods) m.runtime_seconds = kNA;  // wall clock varies
    CHECK(replicate_to_json(alone) == replicate_to_json(stored));
  }
  SUBCASE("rows are means and sample sds over replicates") {
    const auto& row = table.rows[1];
    CHECK(row.method == Method::Proposed);
    CHECK(row.n_ok == 3);
    double m = 0.0;
    for (const auto& r : table.replicates) m += r.find(Method::Proposed)->evaluated_loss / 3.0;
    CHECK(row.loss_mean == doctest::Approx(m).epsilon(1e-12));
    CHECK(row.loss_sd >= 0.0);
    CHECK(std::isnan(table.rows[0].rt_mean));
  }
  SUBCASE("csv parses back to the same values") {
    const auto rows = parse_csv(report_table(table, TableFormat::Csv));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"case", "n", "method", "loss_mean", "loss_sd", "rt_mean", "rt_sd"});
    CHECK(rows[1][2] == "unopt");
    CHECK(rows[1][5] == "NA");
    CHECK(rows[1][6] == "NA");
    CHECK(std::stod(rows[2][3]) == table.rows[1].loss_mean);
    CHECK(std::stod(rows[2][4]) == table.rows[1].loss_sd);
    CHECK(std::stod(rows[2][5]) == table.rows[1].rt_mean);
  }
  SUBCASE("records round-trip through JSON") {
    for (const auto& r : table.replicates)
      CHECK(replicate_to_json(replicate_from_json(replicate_to_json(r))) == replicate_to_json(r));
    CHECK_THROWS_AS(replicate_from_json("{}"), DataError);
  }
  CHECK_THROWS_AS(run_study(cfg, ns, 1, kUnoptProposed, 1), ConfigError);
  CHECK(run_study(cfg, std::vector<std::size_t>{}, 2, kUnoptProposed, 1).rows.empty());
}

TEST_CASE("a single replicate has undefined sds") {
  ReplicateResult r;
  r.n = 200;
  MethodResult m;
  m.method = Method::Proposed;
  m.ok = true;
  m.evaluated_loss = 22.0;
  m.runtime_seconds = 0.5;
  r.methods = {m};
  const auto table = aggregate({r});
  REQUIRE(table.rows.size() == 1);
  CHECK(std::isnan(table.rows[0].loss_sd));
  const auto csv = parse_csv(report_table(table, TableFormat::Csv));
  CHECK(csv[1][4] == "NA");
  CHECK(csv[1][6] == "NA");
  const auto md = report_table(table, TableFormat::Markdown);
  CHECK(md.find("| Case1 | 200 | proposed | 22.00 | NA") != std::string::npos);
  CHECK(md.find("fewer than two") != std::string::npos);
}

TEST_CASE("study configuration files") {
  const auto sc = study_config_from_json(
      R"({"case":"Case3","n":[200,600],"n_reps":4,"methods":["unopt","bpm"],"seed":5,)"
      R"("mcmc":{"n_iter":1000,"burn_in":500},"de":{"generations":20,"lower":[-1],"upper":[1]}})");
  CHECK(sc.run.case_id == CaseId::Case3);
  CHECK(sc.n_list == std::vector<std::size_t>{200, 600});
  CHECK(sc.n_reps == 4);
  CHECK(sc.methods == std::vector<Method>{Method::Unopt, Method::Bpm});
  CHECK(sc.seed == 5);
  CHECK(sc.run.mcmc.n_iter == 1000);
  CHECK(sc.run.de.generations == 20);
  const auto again = study_config_from_json(study_config_to_json(sc));
  CHECK(study_config_to_json(again) == study_config_to_json(sc));
  CHECK_THROWS_AS(study_config_from_json(R"({"cases":"Case1"})"), ConfigError);
  CHECK_THROWS_AS(study_config_from_json(R"({"mcmc":{"n_iter":10,"burn_in":20}})"), ConfigError);
  CHECK_THROWS_AS(study_config_from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(load_study_config("/nonexistent.json"), ConfigError);
  const auto csl = study_config_from_json(R"({"case":"CslLike"})");
  CHECK(csl.run.box_anchor == BoxAnchor::ThetaHat);
}

TEST_CASE("theta-hat anchored boxes") {
  auto cfg = RunConfig::for_case(CaseId::CslLike);
  const std::vector<double> theta{1.0, 2.0, 3.0, 4.0};
  const auto de = optimizer_box(cfg, 4, &theta, 1);
  CHECK(de.lower == std::vector<double>{0.0, 1.0, 2.0, 3.0});
  CHECK(de.upper == std::vector<double>{2.0, 3.0, 4.0, 5.0});
  CHECK_THROWS_AS(optimizer_box(cfg, 4, nullptr, 1), ConfigError);
  const auto abs = optimizer_box(RunConfig::for_case(CaseId::Case1), 3, nullptr, 1);
  CHECK(abs.box(3).first == std::vector<double>(3, -0.85));
}

#include "rtdtr/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace rtdtr {

using nlohmann::json;

namespace {

constexpr const char* kCohortFormat = "rtdtr-cohort";
constexpr int kCohortVersion = 1;

json unit_to_json(const UnitRecord& u) {
  json j;
  j["z1"] = u.z1;
  j["z2"] = u.z2;
  j["z3_path"] = u.z3_path;
  j["switch_times"] = u.switch_times;
  j["a0"] = u.a0;
  j["t_max"] = u.t_max;
  j["y"] = u.y;
  if (u.z_bmi) j["z_bmi"] = *u.z_bmi;
  return j;
}

UnitRecord unit_from_json(const json& j) {
  if (!j.is_object()) throw DataError("unit record must be a JSON object");
  if (j.contains("u")) throw DataError("redaction violation: latent field \"u\" present");
  static const char* const kKnown[] = {"z1", "z2", "z3_path", "switch_times", "a0", "t_max", "y", "z_bmi"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
      throw DataError("unknown field \"" + key + "\"");
  }
  UnitRecord u;
  u.z1 = j.at("z1").get<std::vector<double>>();
  u.z2 = j.at("z2").get<std::vector<double>>();
  u.z3_path = j.at("z3_path").get<std::vector<double>>();
  u.switch_times = j.at("switch_times").get<std::vector<double>>();
  u.a0 = j.at("a0").get<int>();
  u.t_max = j.at("t_max").get<double>();
  u.y = j.at("y").get<double>();
  if (auto it = j.find("z_bmi"); it != j.end()) u.z_bmi = it->get<double>();
  return u;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.precision(17);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

}  // namespace

void write_cohort(const Cohort& cohort, std::ostream& out) {
  json header;
  header["format"] = kCohortFormat;
  header["version"] = kCohortVersion;
  header["case"] = std::string(case_name(cohort.case_id));
  header["seed"] = cohort.seed;
  header["n"] = cohort.n();
  header["grid"] = {{"t_end", cohort.grid.t_end()},
                    {"dt", cohort.grid.dt()},
                    {"covariate_dt", cohort.grid.covariate_dt()}};
  out << header.dump() << '\n';
  for (const auto& u : cohort.units) out << unit_to_json(u).dump() << '\n';
  if (!out) throw DataError("failed writing cohort");
}

void write_cohort(const Cohort& cohort, const std::string& path) {
  auto out = open_out(path);
  write_cohort(cohort, out);
}

Cohort read_cohort(std::istream& in) {
  Cohort cohort;
  std::string line;
  std::size_t lineno = 0;
  std::size_t expected = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != kCohortFormat) throw DataError("missing cohort header");
        if (j.value("version", 0) != kCohortVersion) throw DataError("unsupported cohort version");
        cohort.case_id = parse_case(j.at("case").get<std::string>());
        cohort.seed = j.at("seed").get<std::uint64_t>();
        expected = j.at("n").get<std::size_t>();
        const auto& g = j.at("grid");
        cohort.grid = TimeGrid(g.at("t_end").get<double>(), g.at("dt").get<double>(),
                               g.at("covariate_dt").get<double>());
        have_header = true;
        continue;
      }
      UnitRecord u = unit_from_json(j);
      validate_unit(u, cohort.grid);
      cohort.units.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("empty cohort file");
  if (cohort.n() != expected)
    throw DataError("header declares " + std::to_string(expected) + " units but file has " +
                    std::to_string(cohort.n()));
  return cohort;
}

Cohort read_cohort(const std::string& path) {
  auto in = open_in(path);
  return read_cohort(in);
}

std::string posterior_to_json(const PosteriorDraws& draws) {
  json j;
  j["family"] = std::string(family_name(draws.family));
  j["acceptance_rate"] = draws.acceptance_rate;
  json rows = json::array();
  for (std::size_t i = 0; i < draws.size(); ++i) rows.push_back(draws.row(i));
  j["draws"] = std::move(rows);
  return j.dump();
}

PosteriorDraws posterior_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    PosteriorDraws pd;
    pd.family = parse_family(j.at("family").get<std::string>());
    pd.acceptance_rate = j.value("acceptance_rate", 0.0);
    const auto rows = j.at("draws").get<std::vector<std::vector<double>>>();
    const std::size_t d = family_dimension(pd.family);
    pd.draws.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != d) throw DataError("posterior draw " + std::to_string(i) + " has wrong length");
      for (std::size_t k = 0; k < d; ++k)
        pd.draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return pd;
  } catch (const json::exception& e) {
    throw DataError(std::string("posterior file: ") + e.what());
  }
}

void write_posterior(const PosteriorDraws& draws, const std::string& path) {
  auto out = open_out(path);
  out << posterior_to_json(draws) << '\n';
}

PosteriorDraws read_posterior(const std::string& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return posterior_from_json(ss.str());
}

std::string estimate_to_json(const PolicyEstimate& est, IntensityFamily family) {
  json j;
  j["family"] = std::string(family_name(family));
  j["eta"] = est.eta;
  j["loss"] = std::isfinite(est.loss) ? json(est.loss) : json(nullptr);
  j["ess"] = est.ess;
  j["evaluations"] = est.evaluations;
  j["low_overlap"] = est.low_overlap;
  if (!est.warning.empty()) j["warning"] = est.warning;
  return j.dump();
}

std::pair<IntensityFamily, std::vector<double>> estimate_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const IntensityFamily family = parse_family(j.at("family").get<std::string>());
    auto eta = j.at("eta").get<std::vector<double>>();
    if (eta.size() != family_dimension(family)) throw DataError("estimate: eta has wrong length for its family");
    return {family, std::move(eta)};
  } catch (const json::exception& e) {
    throw DataError(std::string("estimate file: ") + e.what());
  }
}

void write_estimate(const PolicyEstimate& est, IntensityFamily family, const std::string& path) {
  auto out = open_out(path);
  out << estimate_to_json(est, family) << '\n';
}

std::pair<IntensityFamily, std::vector<double>> read_estimate(const std::string& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return estimate_from_json(ss.str());
}

}  // namespace rtdtr

#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtdtr/bpm.hpp"
#include "rtdtr/csl.hpp"
#include "rtdtr/inference.hpp"
#include "rtdtr/policy.hpp"
#include "rtdtr/simgen.hpp"

namespace rtdtr {

enum class Method { Unopt, Bpm, Proposed };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

/// Where the DE bounds are measured from: the origin, or the posterior mean
/// of theta (bounds are then offsets).
enum class BoxAnchor { Absolute, ThetaHat };

/// Everything a replicate needs besides its size and seed.
struct RunConfig {
  CaseId case_id = CaseId::Case1;
  std::uint64_t population_seed = kReferencePopulationSeed;
  CslConfig csl;  // CslLike only
  std::size_t n_eval = 2000;
  McmcConfig mcmc;
  DeConfig de = default_de();
  BoxAnchor box_anchor = BoxAnchor::Absolute;
  std::size_t bpm_draws = 100;
  std::size_t bpm_mc = 20;
  bool self_normalized = false;

  /// DE defaults of the simulation studies: a +-0.85 box around the origin.
  static DeConfig default_de();
  /// Calibrated defaults for a case; CslLike anchors a +-1 box at theta-hat.
  static RunConfig for_case(CaseId id);
};

/// The data-generating world of a run: the case with its reference
/// population, or the CSL-like generator.
std::unique_ptr<World> make_world(const RunConfig& cfg);

/// DE settings of a run with its seed; ThetaHat anchoring shifts the box by
/// theta_hat, which must then be given.
DeConfig optimizer_box(const RunConfig& cfg, std::size_t dim, const std::vector<double>* theta_hat,
                       std::uint64_t seed);

inline constexpr double kNA = std::numeric_limits<double>::quiet_NaN();

struct MethodResult {
  Method method = Method::Unopt;
  bool ok = false;
  std::string error;
  std::string error_kind;  // config, data, diagnostic or internal
  double evaluated_loss = kNA;
  double runtime_seconds = kNA;  // posterior sampling + optimization; NA for Unopt
  std::vector<double> params;    // eta-hat, or theta-hat for Unopt
  double estimated_loss = kNA;   // the method's own objective at params
  double ess = kNA;
  std::string warning;
};

struct ReplicateResult {
  CaseId case_id = CaseId::Case1;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<MethodResult> methods;

  const MethodResult* find(Method m) const;
};

/// One replicate: training cohort from the observational world, each method
/// fitted on it, each learned policy evaluated on n_eval fresh units. A
/// failing method is recorded without aborting the others.
ReplicateResult run_replicate(const RunConfig& cfg, std::size_t n, std::uint64_t seed,
                              std::span<const Method> methods);

/// Seed of replicate r of a study; a pure function of (study_seed, r).
std::uint64_t replicate_seed(std::uint64_t study_seed, std::size_t r);

struct StudyRow {
  CaseId case_id = CaseId::Case1;
  std::size_t n = 0;
  Method method = Method::Unopt;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  double loss_mean = kNA;
  double loss_sd = kNA;
  double rt_mean = kNA;
  double rt_sd = kNA;
};

struct StudyTable {
  std::vector<StudyRow> rows;
  std::vector<ReplicateResult> replicates;
};

/// Rows per (case, n, method) in first-seen order; sds need two successes.
StudyTable aggregate(std::vector<ReplicateResult> replicates);

StudyTable run_study(const RunConfig& cfg, std::span<const std::size_t> n_list, std::size_t n_reps,
                     std::span<const Method> methods, std::uint64_t study_seed, std::size_t workers = 1);

enum class TableFormat { Csv, Markdown };

/// Columns: case, n, method, loss_mean, loss_sd, rt_mean, rt_sd.
std::string report_table(const StudyTable& table, TableFormat format);

struct StudyConfig {
  RunConfig run;
  std::vector<std::size_t> n_list{200};
  std::size_t n_reps = 10;
  std::vector<Method> methods{Method::Unopt, Method::Bpm, Method::Proposed};
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// JSON config; `base_dir` resolves a "csl" entry given as a file path.
StudyConfig study_config_from_json(const std::string& text, const std::string& base_dir = ".");
StudyConfig load_study_config(const std::string& path);
std::string study_config_to_json(const StudyConfig& cfg);

std::string replicate_to_json(const ReplicateResult& r);
/// Throws DataError on malformed input.
ReplicateResult replicate_from_json(const std::string& text);

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDiagnostic = 4;

}  // namespace rtdtr

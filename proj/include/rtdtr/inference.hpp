#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rtdtr/core.hpp"
#include "rtdtr/simgen.hpp"

namespace rtdtr {

/// A unit's treatment path pre-cut into runs of dt steps over which the
/// stratum and Z3 are constant and time-since-change grows by dt per step.
/// Evaluating a likelihood on it visits each run once instead of each step.
class CompiledPath {
 public:
  struct Run {
    std::size_t steps = 0;
    int a_minus = 0;
    double z3 = 0.0;
    double time_since_change = 0.0;  // at the first step of the run
  };

  CompiledPath() = default;
  CompiledPath(const UnitRecord& unit, const TimeGrid& grid);

  std::span<const Run> runs() const { return runs_; }
  /// Histories of the steps that generated each switch.
  std::span<const HistoryView> jumps() const { return jumps_; }
  std::optional<double> z_bmi() const { return z_bmi_; }
  double dt() const { return dt_; }

 private:
  std::vector<Run> runs_;
  std::vector<HistoryView> jumps_;
  std::optional<double> z_bmi_;
  double dt_ = 0.0;
};

/// log of the counting-process density of the switch path:
///   sum_j log lambda(t_j) - sum_{grid t < t_max} lambda(t) dt
/// (left-endpoint Riemann sum on the generating grid).
double path_loglik(IntensityFamily family, std::span<const double> params, const CompiledPath& path);

double switching_loglik(std::span<const double> theta, IntensityFamily family,
                        const UnitRecord& unit, const TimeGrid& grid);

/// Independent N(0, 5^2) prior on every coordinate.
double log_prior(std::span<const double> theta);

struct McmcConfig {
  std::size_t n_iter = 4000;
  std::size_t burn_in = 2000;
  std::size_t thin = 4;
  std::vector<double> proposal_scale;  // empty: 0.1 per coordinate
  bool adapt = true;
  std::uint64_t seed = 0;

  std::size_t retained() const { return (n_iter - burn_in) / thin; }
  void validate() const;
};

struct PosteriorDraws {
  Eigen::MatrixXd draws;  // n_draws x dim
  double acceptance_rate = 0.0;
  IntensityFamily family = IntensityFamily::LinExp;

  std::size_t size() const { return static_cast<std::size_t>(draws.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(draws.cols()); }
  std::vector<double> row(std::size_t i) const;
  std::vector<double> mean() const;

  /// A posterior collapsed onto one point.
  static PosteriorDraws point_mass(std::vector<double> theta, IntensityFamily family);
};

using LogDensity = std::function<double(std::span<const double>)>;

struct MetropolisResult {
  Eigen::MatrixXd draws;
  double acceptance_rate = 0.0;       // after burn-in
  std::vector<double> final_scale;
};

/// Random-walk Metropolis with a Gaussian proposal. During burn-in the
/// proposal is rescaled every 50 iterations toward 30% acceptance. When
/// `proposal_chol` is given the step is scale * L z instead of diagonal.
MetropolisResult metropolis(const LogDensity& log_target, std::vector<double> init,
                            const McmcConfig& cfg,
                            const std::optional<Eigen::MatrixXd>& proposal_chol = std::nullopt);

/// Posterior of theta for the observational switching model.
PosteriorDraws sample_posterior(const Cohort& cohort, IntensityFamily family, const McmcConfig& mc,
                                std::optional<std::vector<double>> init = std::nullopt);

struct CoordinateSummary {
  double mean = 0.0;
  double sd = 0.0;
  double split_r = 1.0;
};

/// Per-coordinate mean, sd and split-half potential scale reduction.
std::vector<CoordinateSummary> posterior_summary(const PosteriorDraws& draws);
double split_r(std::span<const double> chain);

}  // namespace rtdtr

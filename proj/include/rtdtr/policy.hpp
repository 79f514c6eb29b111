#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rtdtr/inference.hpp"

namespace rtdtr {

struct WeightVector {
  std::vector<double> w;
  std::vector<double> log_numerators;
  std::vector<double> log_denominators;
};

struct WeightDiagnostics {
  double ess = 0.0;
  double max_share = 0.0;
  std::size_t n_nonfinite = 0;
  std::size_t n_clamped = 0;  // outcomes that hit the exp overflow guard
};

/// log p_E(a | history, eta): the switching log-likelihood under the policy.
double experimental_logdensity(std::span<const double> eta, IntensityFamily family,
                               const UnitRecord& unit, const TimeGrid& grid);

/// Weights and losses for one training cohort and one posterior. The
/// observational denominators are computed once at construction.
class PolicyObjective {
 public:
  PolicyObjective(const Cohort& cohort, const PosteriorDraws& draws, IntensityFamily exp_family,
                  bool self_normalized = false);

  std::size_t n() const { return paths_.size(); }
  IntensityFamily family() const { return family_; }
  std::span<const double> log_denominators() const { return log_den_; }

  /// Throws DiagnosticFailure if any weight is non-finite.
  WeightVector weights(std::span<const double> eta) const;
  /// (1/n) sum w_i exp(y_i), or the self-normalised sum w_i exp(y_i) / sum w_i.
  /// Non-finite weights give +inf instead of throwing.
  double loss(std::span<const double> eta) const;
  std::size_t clamped_outcomes() const { return clamped_; }

 private:
  std::vector<CompiledPath> paths_;
  std::vector<double> exp_y_;
  std::vector<double> log_den_;
  IntensityFamily family_;
  bool self_normalized_;
  std::size_t clamped_ = 0;
};

WeightVector compute_weights(std::span<const double> eta, const Cohort& cohort,
                             const PosteriorDraws& draws, IntensityFamily exp_family);

double posterior_predictive_loss(std::span<const double> eta, const Cohort& cohort,
                                 const PosteriorDraws& draws, IntensityFamily exp_family,
                                 bool self_normalized = false);

WeightDiagnostics weight_diagnostics(const WeightVector& w);
WeightDiagnostics weight_diagnostics(std::span<const double> w);

struct DeConfig {
  std::size_t population_size = 40;
  std::size_t generations = 100;
  double F = 0.8;
  double CR = 0.9;
  std::vector<double> lower;  // empty: -5 per coordinate
  std::vector<double> upper;  // empty: +5 per coordinate
  std::uint64_t seed = 0;

  /// Box bounds expanded to `dim` coordinates; throws ConfigError if invalid.
  std::pair<std::vector<double>, std::vector<double>> box(std::size_t dim) const;
};

struct DeResult {
  std::vector<double> x;
  double f = 0.0;
  std::size_t evaluations = 0;
  std::vector<std::vector<double>> population;
  std::vector<double> fitness;
};

using Objective = std::function<double(std::span<const double>)>;

/// DE/rand/1/bin with synchronous generations. Out-of-box mutant coordinates
/// are redrawn uniformly inside the box; a trial replaces its parent only on
/// strict improvement; non-finite objective values count as +inf.
DeResult de_minimize(const Objective& objective, std::size_t dim, const DeConfig& cfg);

struct PolicyEstimate {
  std::vector<double> eta;
  double loss = 0.0;
  double ess = 0.0;
  std::size_t evaluations = 0;
  bool low_overlap = false;
  std::string warning;
};

inline constexpr double kLowEssThreshold = 5.0;

PolicyEstimate optimize_eta(const Cohort& cohort, const PosteriorDraws& draws,
                            IntensityFamily exp_family, const DeConfig& de);
PolicyEstimate optimize_eta(const PolicyObjective& objective, const DeConfig& de);

struct UnoptBaseline {
  std::vector<double> theta_hat;
  double observed_loss = 0.0;
};

UnoptBaseline unopt_baseline(const Cohort& cohort, const PosteriorDraws& draws);
double observed_mean_loss(const Cohort& cohort);

}  // namespace rtdtr

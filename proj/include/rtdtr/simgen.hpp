#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtdtr/core.hpp"

namespace rtdtr {

enum class CaseId { Case1, Case2, Case3, Case4, CslLike };

std::string_view case_name(CaseId id);
CaseId parse_case(std::string_view name);

/// Which part of [0, t_end] the outcome's integral of Z3 runs over.
enum class Z3Window { Full, Treatment };

/// Fixed coefficients of one simulation case. The outcome is
///   Y = y0 + (switch + switch_by_z2 * z2bar) J + z3_integral * int Z3
///       + (treat_sigmoid + treat_sigmoid_by_z2 * z2bar) int A (2S(Z3; k) - 1)
///       + phi_Y1 . Z1 + phi_Y2 . Z2 + latent * U + N(0, sd^2).
struct OutcomeCoefficients {
  double y0 = 0.0;
  double switch_count = 0.0;
  double switch_by_z2 = 0.0;
  double z3_integral = 0.0;
  double treat_sigmoid = 0.0;
  double treat_sigmoid_by_z2 = 0.0;
  double sigmoid_k = 1.5;
  double latent = 0.0;
  double sd = 0.5;
  bool uses_phi_y2 = true;
};

/// Z3(t) ~ N(intercept + treatment * int_0^{t-} A + ar * Z3(t-) + z1 * z1bar
///           + z2 * z2bar + latent * U, sd^2) on the covariate grid.
struct CovariateCoefficients {
  double intercept = 1.0;
  double treatment = 0.1;
  double ar = 0.025;
  double z1 = 0.01;
  double z2 = 0.01;
  double latent = 0.0;
  double sd = 1.0;
  double initial_prev = 0.0;  // Z3(0-)
};

/// log lambda^{T_max} = intercept + a * A(t-) + z1 * z1bar + z2 * z2bar
///                      + z3 * Z3(t-) + latent * U.
struct CompletionCoefficients {
  double intercept = 0.1;
  double a = 0.05;
  double z1 = 0.06;
  double z2 = -0.1;
  double z3 = -0.05;
  double latent = 0.0;
};

struct CaseConfig {
  CaseId case_id = CaseId::Case1;
  TimeGrid grid;
  int p1 = 30;
  int p2 = 10;
  bool has_latent = false;
  CovariateCoefficients covariate;
  CompletionCoefficients completion;
  OutcomeCoefficients outcome;
  IntensitySpec observational;  // true lambda^A_O
  IntensityFamily policy_family = IntensityFamily::LinExp;
  Z3Window z3_window = Z3Window::Full;

  /// Coefficients of one of Case1..Case4.
  static CaseConfig for_case(CaseId id);
};

/// Per-population hyperdraws (Bernoulli rates, covariate laws, outcome
/// coefficients).
struct ReplicateParams {
  std::vector<double> p;      // Bernoulli rates of Z1
  std::vector<double> mu;     // Cases 1-2: Z2 means
  std::vector<double> alpha;  // Cases 3-4: Z2 intercepts
  std::vector<double> beta;   // Cases 3-4: Z2 loadings on U
  std::vector<double> sigma;  // Z2 standard deviations
  std::vector<double> phi_y1;
  std::vector<double> phi_y2;  // empty when the outcome has no Z2 term

  bool operator==(const ReplicateParams&) const = default;
};

ReplicateParams draw_replicate_params(const CaseConfig& cfg, std::uint64_t seed);

/// Hyperparameter seed of the reference population. Study replicates share
/// one population and differ in their training and evaluation draws.
inline constexpr std::uint64_t kReferencePopulationSeed = 281;

/// A simulated unit plus the quantities the outcome was computed from.
struct SimulatedUnit {
  UnitRecord record;
  double z3_integral = 0.0;          // over the configured window
  double treat_sigmoid_integral = 0.0;
  double z1_mean = 0.0;
  double z2_mean = 0.0;
};

struct Cohort {
  std::vector<UnitRecord> units;
  CaseId case_id = CaseId::Case1;
  std::uint64_t seed = 0;
  TimeGrid grid;

  std::size_t n() const { return units.size(); }
};

/// A data-generating mechanism with a pluggable switching intensity. Every
/// draw except the switching and completion uniforms comes from the unit's
/// covariate stream, so two worlds that realise the same treatment path
/// produce the same covariates and outcome.
class World {
 public:
  virtual ~World() = default;
  virtual CaseId case_id() const = 0;
  virtual const TimeGrid& grid() const = 0;
  virtual const IntensitySpec& observational() const = 0;
  virtual IntensityFamily policy_family() const = 0;
  virtual SimulatedUnit simulate(const IntensitySpec& switching, std::uint64_t seed) const = 0;
  /// A unit of the observational world.
  virtual SimulatedUnit simulate_observed(std::uint64_t seed) const {
    return simulate(observational(), seed);
  }
};

class CaseWorld final : public World {
 public:
  CaseWorld(CaseConfig cfg, ReplicateParams rp);

  CaseId case_id() const override { return cfg_.case_id; }
  const TimeGrid& grid() const override { return cfg_.grid; }
  const IntensitySpec& observational() const override { return cfg_.observational; }
  IntensityFamily policy_family() const override { return cfg_.policy_family; }
  SimulatedUnit simulate(const IntensitySpec& switching, std::uint64_t seed) const override;

  const CaseConfig& config() const { return cfg_; }
  const ReplicateParams& params() const { return rp_; }

 private:
  CaseConfig cfg_;
  ReplicateParams rp_;
};

UnitRecord simulate_unit(const CaseConfig& cfg, const ReplicateParams& rp,
                         const IntensitySpec& switching, std::uint64_t seed);

/// n units with sub-seeds derived from `seed`. Latent values are kept on the
/// returned records; cohort_io strips them on write.
Cohort generate_cohort(const World& world, const IntensitySpec& switching, std::size_t n,
                       std::uint64_t seed);
/// Observational cohort of `world`.
Cohort generate_observed_cohort(const World& world, std::size_t n, std::uint64_t seed);
Cohort generate_cohort(const CaseConfig& cfg, const ReplicateParams& rp,
                       const IntensitySpec& switching, std::size_t n, std::uint64_t seed);

/// Returns a copy with every latent value removed.
Cohort redact_latent(Cohort cohort);

/// exp(y) with y clamped at 700; increments *clamped when the guard fires.
double guarded_exp(double y, std::size_t* clamped = nullptr);

/// Mean exp(Y) over n_eval fresh units whose switching follows
/// IntensitySpec(family, eta).
double evaluate_policy_loss(const World& world, std::span<const double> eta,
                            IntensityFamily family, std::size_t n_eval, std::uint64_t seed);
double evaluate_policy_loss(const World& world, std::span<const double> eta, std::size_t n_eval,
                            std::uint64_t seed);

}  // namespace rtdtr

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rtdtr/inference.hpp"
#include "rtdtr/policy.hpp"
#include "rtdtr/simgen.hpp"

namespace rtdtr {

/// Treatment terms of the BPM outcome model besides int Z3 dt and the
/// individual Z1, Z2 coefficients.
enum class BpmOutcomeForm {
  SwitchCount,     // J, J * z2bar
  SigmoidExposure  // G, G * z2bar with G = int A (2S(Z3; k) - 1) dt
};

/// Structure of the case that BPM takes as known: grid, policy class and
/// which outcome terms are present. Coefficients are left to the fit.
struct BpmSkeleton {
  TimeGrid grid;
  IntensityFamily policy_family = IntensityFamily::LinExp;
  BpmOutcomeForm form = BpmOutcomeForm::SwitchCount;
  bool treatment_term = true;
  bool treatment_by_z2 = false;
  bool z3_integral_term = true;
  bool z2_terms = true;
  double sigmoid_k = 1.5;
  double z3_initial_prev = 0.0;
  /// The outcome integrates Z3 over all of [0, t_end]; the unobserved part
  /// after completion is imputed from the fitted Z3 model.
  bool z3_full_window = true;

  static BpmSkeleton for_case(const CaseConfig& cfg);
};

/// Observable per-unit quantities the BPM models are fitted on.
struct BpmFeatures {
  double J = 0.0;
  double z3_integral = 0.0;  // observed part, over [0, t_max)
  double treat_sigmoid = 0.0;
  double z1_mean = 0.0;
  double z2_mean = 0.0;
};

BpmFeatures bpm_features(const UnitRecord& unit, const BpmSkeleton& skel);

/// Posterior draws of the non-interventional models, row m of every matrix
/// belonging to the same joint draw. Columns:
///   outcome:    [1, T, T * z2bar, int Z3, Z1..., Z2...]   (T = J or G;
///               terms absent from the skeleton are fixed at 0)
///   covariate:  [1, int_0^t A, Z3(t-), z1bar, z2bar]
///   completion: [1, A(t-), z1bar, z2bar, Z3(t-)]
struct BpmPosterior {
  BpmSkeleton skeleton;
  Eigen::MatrixXd outcome;
  Eigen::VectorXd outcome_sd;
  Eigen::MatrixXd covariate;
  Eigen::VectorXd covariate_sd;
  Eigen::MatrixXd completion;
  double completion_acceptance = 0.0;
  /// Baseline covariates of the training units, resampled in forward runs.
  std::vector<std::vector<double>> z1;
  std::vector<std::vector<double>> z2;

  std::size_t size() const { return static_cast<std::size_t>(outcome.rows()); }
  /// Posterior mean of the outcome residual variance.
  double mean_outcome_variance() const;
};

struct BpmConfig {
  McmcConfig mcmc;             // completion-intensity sampler
  std::size_t n_draws = 100;   // joint posterior draws kept
  std::size_t n_mc = 20;       // forward trajectories per draw
  std::uint64_t seed = 0;
};

/// Fits the outcome and Z3 transition models by exact conjugate draws and the
/// completion intensity with the shared Metropolis sampler. With a full Z3
/// window each outcome draw conditions on Z3 tails imputed from the matching
/// Z3 draw. Latent values on the cohort are never read.
BpmPosterior fit_bpm(const Cohort& cohort, const BpmSkeleton& skeleton, const BpmConfig& cfg);
BpmPosterior fit_bpm(const Cohort& cohort, CaseId case_id, const BpmConfig& cfg);

/// Forward Monte Carlo estimate of E[exp(Y)] under lambda_E(eta) with common
/// random numbers: the baseline resamples and every uniform and normal depend
/// only on (seed, draw, trajectory), never on eta.
class BpmObjective {
 public:
  BpmObjective(const BpmPosterior& posterior, std::size_t n_mc, std::uint64_t seed);

  double loss(std::span<const double> eta) const;
  std::size_t trajectories() const { return paths_.size(); }

 private:
  struct Path {
    std::size_t draw = 0;
    double z1_mean = 0.0;
    double z2_mean = 0.0;
    double baseline = 0.0;  // outcome contribution of the resampled Z1, Z2
    double outcome_noise = 0.0;
    std::vector<double> z3_noise;
    std::vector<double> log_u_switch;
    std::vector<double> log_u_completion;
  };

  double simulate(const Path& p, std::span<const double> eta) const;

  const BpmPosterior& post_;
  std::vector<Path> paths_;
};

double bpm_expected_loss(std::span<const double> eta, const BpmPosterior& posterior, std::size_t n_mc,
                         std::uint64_t seed);

PolicyEstimate bpm_optimize(const BpmPosterior& posterior, const DeConfig& de, std::size_t n_mc = 20,
                            std::uint64_t seed = 0);

}  // namespace rtdtr

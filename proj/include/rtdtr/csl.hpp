#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtdtr/simgen.hpp"

namespace rtdtr {

/// Synthetic labour-ward generator standing in for confidential oxytocin
/// records. Coefficients are versioned in config/csl_like_v1.json; the
/// defaults here mirror that file.
struct CslConfig {
  std::string version = "csl_like_v1";
  TimeGrid grid{24.0, 0.05, 0.5};

  // Dose levels (mU/min) and stratification.
  double dose_lo = 0.0;
  double dose_hi = 8.0;
  double dose_step = 1.0;
  double delta = 4.0;

  // Baseline BMI ~ N(mean, sd^2) truncated to [lo, hi]; standardised for the
  // intensity model as (bmi - mean) / sd.
  double bmi_mean = 30.0;
  double bmi_sd = 6.0;
  double bmi_lo = 17.0;
  double bmi_hi = 50.0;

  // Observed practice: dose changes occur at OxytocinLinExp intensity with
  // these parameters, time measured since the last dose change, and move to
  // a uniformly chosen other level. Strata follow by thresholding at delta.
  std::vector<double> observational = {-1.2, 0.390, -0.466, 0.382};

  // Cervical dilation (cm) on the covariate grid: starts U(init_lo, init_hi),
  // then grows by covariate_dt * (rate + rate_dose * dose / dose_hi
  // + rate_latent * U) plus N(0, noise_sd^2) noise; nondecreasing, capped at 10.
  double dilation_init_lo = 1.0;
  double dilation_init_hi = 4.0;
  double dilation_rate = 0.55;
  double dilation_rate_dose = 0.35;
  double dilation_rate_latent = 0.1;
  double dilation_noise_sd = 0.25;

  // Delivery intensity exp(c0 + c_dil * Z3 / 10 + c_dose * dose / dose_hi).
  std::vector<double> completion = {-4.2, 3.2, 0.2};

  // log EBLoss = y0 + delay * max(0, z_bmi - delay_pivot) * F
  //   + per_change * max(0, change_pivot - z_bmi) * (number of dose changes)
  //   + latent * U + N(0, sd^2),
  // F = fraction of [0, t_max] spent below dose_adequate with the last dose
  // change at least long_interval hours ago.
  double y0 = 4.286;
  double delay = 2.0;
  double delay_pivot = -1.0;
  double dose_adequate = 4.0;
  double long_interval = 1.0;
  double per_change = 0.05;
  double change_pivot = 1.0;
  double latent = 0.25;
  double sd = 0.35;

  bool operator==(const CslConfig&) const = default;
};

/// Reads a CslConfig from a JSON document; absent keys keep their defaults.
CslConfig load_csl_config(const std::string& path);
CslConfig csl_config_from_json(const std::string& json_text);
std::string csl_config_to_json(const CslConfig& cfg);

/// Throws ConfigError if delta lies outside the dose range or the range is
/// empty.
void validate_csl_config(const CslConfig& cfg);

/// Piecewise-constant dose: doses[i] holds from times[i] until times[i+1].
/// times[0] is 0.
struct DosePath {
  std::vector<double> times;
  std::vector<double> doses;
};

/// Upper stratum: dose >= delta, or dose > 0 when delta == 0.
int dose_stratum(double dose, double delta);

/// Dilation one covariate step after `prev` given the current dose, the
/// latent value and a standard normal draw.
double csl_next_dilation(const CslConfig& cfg, double prev, double dose, double u, double noise);
/// Delivery (completion) intensity at dilation z3 and the current dose.
double csl_delivery_intensity(const CslConfig& cfg, double z3, double dose);

struct StrataPath {
  int a0 = 0;
  std::vector<double> switch_times;
};

/// Thresholds a dose path and returns the times the stratum flips.
StrataPath strata_from_dose(const DosePath& path, double delta);

class CslWorld final : public World {
 public:
  explicit CslWorld(CslConfig cfg);

  CaseId case_id() const override { return CaseId::CslLike; }
  const TimeGrid& grid() const override { return cfg_.grid; }
  const IntensitySpec& observational() const override { return observational_; }
  IntensityFamily policy_family() const override { return IntensityFamily::OxytocinLinExp; }
  /// Policy world: strata switch at `switching`; within a stratum the dose
  /// is retitrated as in observed practice.
  SimulatedUnit simulate(const IntensitySpec& switching, std::uint64_t seed) const override;
  /// Observed practice, thresholded at cfg.delta.
  SimulatedUnit simulate_observed(std::uint64_t seed) const override;

  /// Observed-practice unit together with its dose trajectory.
  std::pair<UnitRecord, DosePath> simulate_with_dose(std::uint64_t seed) const;
  std::pair<UnitRecord, DosePath> simulate_with_dose(const IntensitySpec& switching,
                                                     std::uint64_t seed) const;

  const CslConfig& config() const { return cfg_; }

 private:
  struct Trajectory;
  Trajectory run(const IntensitySpec* switching, std::uint64_t seed, bool record_dose) const;

  CslConfig cfg_;
  IntensitySpec observational_;
  std::vector<double> levels_;
};

/// Observational cohort: dose trajectories under observed practice,
/// thresholded at cfg.delta. The dose paths do not depend on delta.
Cohort generate_csl_like_cohort(const CslConfig& cfg, std::size_t n, std::uint64_t seed);

}  // namespace rtdtr

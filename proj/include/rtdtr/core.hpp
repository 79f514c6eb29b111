#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rtdtr {

/// Invalid configuration or inputs that do not match a family/contract.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An argument outside the domain of an operation (e.g. a time past t_max).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed or invariant-violating data read from disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sampler or estimator produced an unusable result (all-rejected chain,
/// non-finite importance weights, ...).
class DiagnosticFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kIntensityFloor = 1e-10;
inline constexpr double kIntensityCeiling = 1e6;

/// Discretisation of [0, t_end]. All event times produced by the simulator are
/// integer multiples of dt; covariates change only every covariate_dt.
class TimeGrid {
 public:
  TimeGrid() : TimeGrid(3.0, 0.01, 0.1) {}
  TimeGrid(double t_end, double dt, double covariate_dt);

  double t_end() const { return t_end_; }
  double dt() const { return dt_; }
  double covariate_dt() const { return covariate_dt_; }

  /// Number of dt steps covering [0, t_end).
  std::size_t steps() const { return steps_; }
  /// dt steps per covariate interval.
  std::size_t steps_per_covariate() const { return per_cov_; }
  /// Index of the dt step that ends at time t (t rounded to the grid).
  std::size_t step_index(double t) const;
  /// Number of covariate grid values needed to describe [0, t].
  std::size_t covariate_points(double t) const;

  double time_at(std::size_t step) const { return static_cast<double>(step) * dt_; }

  bool operator==(const TimeGrid&) const = default;

 private:
  double t_end_;
  double dt_;
  double covariate_dt_;
  std::size_t steps_;
  std::size_t per_cov_;
};

/// One subject's logged trajectory.
struct UnitRecord {
  std::vector<double> z1;            // binary baseline covariates
  std::vector<double> z2;            // continuous baseline covariates
  std::vector<double> z3_path;       // covariate-grid values of Z3 on [0, t_max]
  std::vector<double> switch_times;  // strictly increasing, in (0, t_max]
  int a0 = 0;
  double t_max = 0.0;
  double y = 0.0;
  std::optional<double> z_bmi;  // standardised BMI (CSL-like data only)
  std::optional<double> u;      // latent; simulated data only, never read downstream

  std::size_t switch_count() const { return switch_times.size(); }
  /// Stratum in force on (t - eps, t]: a0 xor parity of switches <= t.
  int stratum_at(double t) const;

  bool operator==(const UnitRecord&) const = default;
};

/// Throws DataError naming the first violated UnitRecord invariant.
void validate_unit(const UnitRecord& unit, const TimeGrid& grid);

/// H^A_t as seen by a switching intensity.
struct HistoryView {
  int a_minus = 0;
  double z3_now = 0.0;
  double time_since_change = 0.0;
  std::optional<double> z_bmi;
  double t = 0.0;
};

enum class IntensityFamily { LinExp, SigmoidSwitch, OxytocinLinExp, CompletionLinExp };

std::string_view family_name(IntensityFamily family);
IntensityFamily parse_family(std::string_view name);
/// Parameter count of a switching family; CompletionLinExp is variable length.
std::size_t family_dimension(IntensityFamily family);
/// True when log(lambda) is affine in time_since_change on intervals where the
/// stratum and Z3 are constant.
bool family_is_log_affine_in_time(IntensityFamily family);

struct IntensitySpec {
  IntensityFamily family = IntensityFamily::LinExp;
  std::vector<double> params;

  IntensitySpec() = default;
  IntensitySpec(IntensityFamily f, std::vector<double> p);
};

/// S(z; k) = 1 / (1 + exp(-10 (z - k))).
double sigmoid(double z, double k);

/// Unclamped log-intensity. CompletionLinExp is not a switching family and is
/// rejected here; see completion_log_intensity.
double log_intensity(IntensityFamily family, std::span<const double> params,
                     const HistoryView& h);

/// Clamps a log-intensity to [log 1e-10, log 1e6].
double clamp_log_intensity(double log_lambda);

/// Positive, finite switching intensity clamped to [1e-10, 1e6].
double intensity_eval(const IntensitySpec& spec, const HistoryView& h);

/// Linear-exponential completion intensity exp(params . covariates), clamped.
double completion_intensity(std::span<const double> params, std::span<const double> covariates);

/// Reconstructs H^A_t from a stored unit. a_minus and the last change time use
/// switches strictly before t; Z3 is carried forward from the grid point at or
/// before t.
HistoryView history_at(const UnitRecord& unit, double t, const TimeGrid& grid);

/// History governing the dt step [t_k, t_k + dt): the stratum includes every
/// switch at or before t_k. Switches at t_k + dt were generated by this step.
HistoryView step_history(const UnitRecord& unit, std::size_t step, const TimeGrid& grid);

}  // namespace rtdtr

#include "rtdtr/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rtdtr {

namespace {

constexpr double kTimeEps = 1e-9;

bool is_integer_multiple(double value, double unit) {
  const double ratio = value / unit;
  return std::abs(ratio - std::round(ratio)) < 1e-6 && std::round(ratio) >= 1.0;
}

}  // namespace

TimeGrid::TimeGrid(double t_end, double dt, double covariate_dt)
    : t_end_(t_end), dt_(dt), covariate_dt_(covariate_dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("TimeGrid: dt must be positive");
  if (!is_integer_multiple(covariate_dt, dt))
    throw ConfigError("TimeGrid: covariate_dt must be an integer multiple of dt");
  if (!is_integer_multiple(t_end, covariate_dt))
    throw ConfigError("TimeGrid: t_end must be an integer multiple of covariate_dt");
  steps_ = static_cast<std::size_t>(std::llround(t_end / dt));
  per_cov_ = static_cast<std::size_t>(std::llround(covariate_dt / dt));
}

std::size_t TimeGrid::step_index(double t) const {
  const auto k = std::llround(t / dt_);
  return k < 0 ? 0 : static_cast<std::size_t>(k);
}

std::size_t TimeGrid::covariate_points(double t) const {
  return static_cast<std::size_t>(std::floor(t / covariate_dt_ + kTimeEps)) + 1;
}

int UnitRecord::stratum_at(double t) const {
  const auto n = std::upper_bound(switch_times.begin(), switch_times.end(), t + kTimeEps) -
                 switch_times.begin();
  return a0 ^ static_cast<int>(n & 1);
}

void validate_unit(const UnitRecord& unit, const TimeGrid& grid) {
  if (unit.a0 != 0 && unit.a0 != 1) throw DataError("a0 must be 0 or 1");
  if (!(unit.t_max > 0.0) || unit.t_max > grid.t_end() + kTimeEps)
    throw DataError("t_max must lie in (0, t_end]");
  if (!std::isfinite(unit.y)) throw DataError("y must be finite");
  double prev = 0.0;
  for (double s : unit.switch_times) {
    if (!(s > prev)) throw DataError("switch_times must be strictly increasing and positive");
    prev = s;
  }
  if (!unit.switch_times.empty() && unit.switch_times.back() > unit.t_max + kTimeEps)
    throw DataError("switch_times must not exceed t_max");
  if (unit.z3_path.size() != grid.covariate_points(unit.t_max))
    throw DataError("z3_path length does not match t_max on the covariate grid");
}

std::string_view family_name(IntensityFamily family) {
  switch (family) {
    case IntensityFamily::LinExp: return "LinExp";
    case IntensityFamily::SigmoidSwitch: return "SigmoidSwitch";
    case IntensityFamily::OxytocinLinExp: return "OxytocinLinExp";
    case IntensityFamily::CompletionLinExp: return "CompletionLinExp";
  }
  return "?";
}

IntensityFamily parse_family(std::string_view name) {
  for (auto f : {IntensityFamily::LinExp, IntensityFamily::SigmoidSwitch,
                 IntensityFamily::OxytocinLinExp, IntensityFamily::CompletionLinExp}) {
    if (family_name(f) == name) return f;
  }
  throw ConfigError("unknown intensity family: " + std::string(name));
}

std::size_t family_dimension(IntensityFamily family) {
  switch (family) {
    case IntensityFamily::LinExp: return 3;
    case IntensityFamily::SigmoidSwitch: return 3;
    case IntensityFamily::OxytocinLinExp: return 4;
    case IntensityFamily::CompletionLinExp: return 0;
  }
  return 0;
}

bool family_is_log_affine_in_time(IntensityFamily family) {
  return family == IntensityFamily::LinExp || family == IntensityFamily::OxytocinLinExp;
}

IntensitySpec::IntensitySpec(IntensityFamily f, std::vector<double> p)
    : family(f), params(std::move(p)) {
  const auto dim = family_dimension(f);
  if (dim != 0 && params.size() != dim)
    throw ConfigError(std::string(family_name(f)) + " expects " + std::to_string(dim) +
                      " parameters, got " + std::to_string(params.size()));
}

double sigmoid(double z, double k) { return 1.0 / (1.0 + std::exp(-10.0 * (z - k))); }

double log_intensity(IntensityFamily family, std::span<const double> p, const HistoryView& h) {
  switch (family) {
    case IntensityFamily::LinExp:
      return p[0] + p[1] * h.z3_now + p[2] * h.time_since_change;
    case IntensityFamily::SigmoidSwitch: {
      const double slope = h.a_minus == 1 ? p[0] : p[1];
      return slope * (2.0 * sigmoid(h.z3_now, p[2]) - 1.0);
    }
    case IntensityFamily::OxytocinLinExp:
      if (!h.z_bmi) throw ConfigError("OxytocinLinExp requires z_bmi in the history");
      return p[0] + p[1] * *h.z_bmi + p[2] * h.z3_now / 10.0 + p[3] * h.time_since_change / 20.0;
    case IntensityFamily::CompletionLinExp:
      break;
  }
  throw ConfigError("CompletionLinExp is not a switching family");
}

double clamp_log_intensity(double log_lambda) {
  static const double lo = std::log(kIntensityFloor);
  static const double hi = std::log(kIntensityCeiling);
  if (std::isnan(log_lambda)) return hi;
  return std::clamp(log_lambda, lo, hi);
}

namespace {

// exp of a clamped log-intensity that lands exactly on the bounds.
double bounded_exp(double log_lambda) {
  const double c = clamp_log_intensity(log_lambda);
  return std::clamp(std::exp(c), kIntensityFloor, kIntensityCeiling);
}

}  // namespace

double intensity_eval(const IntensitySpec& spec, const HistoryView& h) {
  const auto dim = family_dimension(spec.family);
  if (dim == 0 || spec.params.size() != dim)
    throw ConfigError("intensity_eval: parameter vector does not match family");
  return bounded_exp(log_intensity(spec.family, spec.params, h));
}

double completion_intensity(std::span<const double> params, std::span<const double> covariates) {
  if (params.size() != covariates.size())
    throw ConfigError("completion_intensity: params/covariates size mismatch");
  const double eta = std::inner_product(params.begin(), params.end(), covariates.begin(), 0.0);
  return bounded_exp(eta);
}

HistoryView history_at(const UnitRecord& unit, double t, const TimeGrid& grid) {
  if (t < -kTimeEps || t > unit.t_max + kTimeEps)
    throw DomainError("history_at: t outside [0, t_max]");
  HistoryView h;
  h.t = t;
  h.z_bmi = unit.z_bmi;
  const auto before = std::lower_bound(unit.switch_times.begin(), unit.switch_times.end(),
                                       t - kTimeEps) -
                      unit.switch_times.begin();
  h.a_minus = unit.a0 ^ static_cast<int>(before & 1);
  const double last = before > 0 ? unit.switch_times[static_cast<std::size_t>(before - 1)] : 0.0;
  h.time_since_change = std::max(0.0, t - last);
  if (!unit.z3_path.empty()) {
    auto idx = static_cast<std::size_t>(std::floor(t / grid.covariate_dt() + kTimeEps));
    h.z3_now = unit.z3_path[std::min(idx, unit.z3_path.size() - 1)];
  }
  return h;
}

HistoryView step_history(const UnitRecord& unit, std::size_t step, const TimeGrid& grid) {
  const double t = grid.time_at(step);
  HistoryView h;
  h.t = t;
  h.z_bmi = unit.z_bmi;
  const auto upto = std::upper_bound(unit.switch_times.begin(), unit.switch_times.end(),
                                     t + kTimeEps) -
                    unit.switch_times.begin();
  h.a_minus = unit.a0 ^ static_cast<int>(upto & 1);
  const double last = upto > 0 ? unit.switch_times[static_cast<std::size_t>(upto - 1)] : 0.0;
  h.time_since_change = std::max(0.0, t - last);
  if (!unit.z3_path.empty()) {
    const std::size_t idx = step / grid.steps_per_covariate();
    h.z3_now = unit.z3_path[std::min(idx, unit.z3_path.size() - 1)];
  }
  return h;
}

}  // namespace rtdtr

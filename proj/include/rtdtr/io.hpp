#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rtdtr/inference.hpp"
#include "rtdtr/policy.hpp"
#include "rtdtr/simgen.hpp"

namespace rtdtr {

/// Cohort files are line-delimited JSON: a header line with the case, seed and
/// grid, then one unit per line. Latent values are never written; a unit line
/// carrying "u" is rejected on read.
void write_cohort(const Cohort& cohort, std::ostream& out);
void write_cohort(const Cohort& cohort, const std::string& path);
/// Throws DataError with the 1-based line number on malformed input.
Cohort read_cohort(std::istream& in);
Cohort read_cohort(const std::string& path);

void write_posterior(const PosteriorDraws& draws, const std::string& path);
PosteriorDraws read_posterior(const std::string& path);
std::string posterior_to_json(const PosteriorDraws& draws);
PosteriorDraws posterior_from_json(const std::string& text);

/// Learned policy parameters with their family.
std::string estimate_to_json(const PolicyEstimate& est, IntensityFamily family);
std::pair<IntensityFamily, std::vector<double>> estimate_from_json(const std::string& text);
void write_estimate(const PolicyEstimate& est, IntensityFamily family, const std::string& path);
std::pair<IntensityFamily, std::vector<double>> read_estimate(const std::string& path);

}  // namespace rtdtr

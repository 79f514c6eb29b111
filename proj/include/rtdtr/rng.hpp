#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rtdtr {

using Engine = std::mt19937_64;

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based sub-seed: a pure function of the root seed and a path of
/// stream labels, so any sub-stream can be regenerated in isolation.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(root);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

/// Stream labels. Keeping the covariate/outcome stream separate from the
/// switching stream is what lets two worlds share every non-treatment draw.
namespace stream {
inline constexpr std::uint64_t kReplicateParams = 1;
inline constexpr std::uint64_t kUnit = 2;
inline constexpr std::uint64_t kCovariates = 3;
inline constexpr std::uint64_t kSwitching = 4;
inline constexpr std::uint64_t kCompletion = 5;
inline constexpr std::uint64_t kTraining = 6;
inline constexpr std::uint64_t kEvaluation = 7;
inline constexpr std::uint64_t kMcmc = 8;
inline constexpr std::uint64_t kOptimizer = 9;
inline constexpr std::uint64_t kBpm = 10;
inline constexpr std::uint64_t kReplicate = 11;
inline constexpr std::uint64_t kSession = 12;
}  // namespace stream

inline Engine make_engine(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  return Engine(derive_seed(root, path));
}

inline double uniform01(Engine& eng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(eng);
}

inline double normal(Engine& eng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(eng);
}

}  // namespace rtdtr

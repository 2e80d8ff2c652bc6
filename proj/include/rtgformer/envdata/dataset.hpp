#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rtgformer/envdata/catch.hpp"

namespace rtgf::envdata {

/// One episode: states s_t (the image the action was taken in), actions a_t and
/// rewards r_t, all of length N. Step N-1 is the terminal step.
struct Trajectory {
  std::vector<StateImage> states;
  std::vector<int> action_ids;
  std::vector<double> rewards;

  std::size_t length() const { return action_ids.size(); }
  bool is_terminal(std::size_t t) const { return t + 1 == length(); }
  double total_return() const;
  bool operator==(const Trajectory&) const = default;
};

inline constexpr int kDatasetFormatVersion = 1;

// Episodes simulated per reference policy when filling in metadata returns.
inline constexpr std::size_t kReferenceEpisodes = 10000;

struct OfflineDataset {
  CatchConfig env;
  Policy policy = Policy::expert;
  std::uint64_t seed = 0;
  std::vector<Trajectory> episodes;
  double mean_return = 0.0;
  // Mean returns of the reference expert and random policies on this env.
  double expert_return = 0.0;
  double random_return = 0.0;

  bool operator==(const OfflineDataset&) const = default;
};

/// Rolls out one episode of a base policy (random, medium or expert).
Trajectory run_episode(const CatchConfig& env, Policy policy, std::uint64_t seed, std::uint64_t episode_index);

/// Mean return of a base policy over n seeded episodes.
double reference_return(const CatchConfig& env, Policy policy, std::uint64_t seed, std::size_t n_episodes);

/// medium_replay mixes random and medium episodes 50/50; medium_expert mixes
/// medium and expert 50/50. The choice per episode comes from the seed.
OfflineDataset generate_dataset(const CatchConfig& env, Policy policy, std::size_t n_episodes, std::uint64_t seed);

std::string serialize_dataset(const OfflineDataset& dataset);
OfflineDataset parse_dataset(const std::string& text);

void write_dataset(const OfflineDataset& dataset, const std::filesystem::path& path);
OfflineDataset read_dataset(const std::filesystem::path& path);

}  // namespace rtgf::envdata

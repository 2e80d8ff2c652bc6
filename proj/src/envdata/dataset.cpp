#include "rtgformer/envdata/dataset.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rtgformer/seeding.hpp"

namespace rtgf::envdata {

using Json = nlohmann::ordered_json;

double Trajectory::total_return() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

Trajectory run_episode(const CatchConfig& env, Policy policy, std::uint64_t seed, std::uint64_t episode_index) {
  CatchState state = reset(env, derive_seed(seed, {stream::episode_reset, episode_index}));
  std::mt19937_64 rng(derive_seed(seed, {stream::episode_policy, episode_index}));
  Trajectory traj;
  while (!state.done) {
    const StateImage image = state.image();
    const int action = act(policy, state, rng);
    const auto result = step(state, action);
    traj.states.push_back(image);
    traj.action_ids.push_back(action);
    traj.rewards.push_back(result.reward);
  }
  return traj;
}

double reference_return(const CatchConfig& env, Policy policy, std::uint64_t seed, std::size_t n_episodes) {
  double total = 0.0;
  for (std::size_t i = 0; i < n_episodes; ++i) total += run_episode(env, policy, seed, i).total_return();
  return total / static_cast<double>(n_episodes);
}

namespace {

double mean_of(const std::vector<Trajectory>& episodes) {
  double total = 0.0;
  for (const auto& e : episodes) total += e.total_return();
  return total / static_cast<double>(episodes.size());
}

}  // namespace

OfflineDataset generate_dataset(const CatchConfig& env, Policy policy, std::size_t n_episodes, std::uint64_t seed) {
  env.validate();
  if (n_episodes == 0) throw EnvError("generate_dataset: n_episodes must be at least 1");
  OfflineDataset ds;
  ds.env = env;
  ds.policy = policy;
  ds.seed = seed;
  ds.episodes.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    Policy p = policy;
    if (policy == Policy::medium_replay || policy == Policy::medium_expert) {
      std::mt19937_64 coin_rng(derive_seed(seed, {stream::tier_mixture, i}));
      const bool first = std::uniform_int_distribution<int>(0, 1)(coin_rng) == 0;
      if (policy == Policy::medium_replay) p = first ? Policy::random : Policy::medium;
      else p = first ? Policy::medium : Policy::expert;
    }
    ds.episodes.push_back(run_episode(env, p, seed, i));
  }
  ds.mean_return = mean_of(ds.episodes);
  ds.expert_return =
      reference_return(env, Policy::expert, derive_seed(seed, {stream::expert_reference}), kReferenceEpisodes);
  ds.random_return =
      reference_return(env, Policy::random, derive_seed(seed, {stream::random_reference}), kReferenceEpisodes);
  return ds;
}

std::string serialize_dataset(const OfflineDataset& ds) {
  Json doc;
  doc["format"] = "rtgformer-dataset";
  doc["version"] = kDatasetFormatVersion;
  doc["env_config"] = {{"grid_width", ds.env.grid_width}, {"grid_height", ds.env.grid_height}};
  doc["policy"] = to_string(ds.policy);
  doc["seed"] = ds.seed;
  doc["n_episodes"] = ds.episodes.size();
  doc["mean_return"] = ds.mean_return;
  doc["expert_return"] = ds.expert_return;
  doc["random_return"] = ds.random_return;
  Json episodes = Json::array();
  for (const auto& e : ds.episodes) {
    Json states = Json::array();
    for (const auto& s : e.states) states.push_back(s.cells);
    episodes.push_back({{"states", std::move(states)}, {"actions", e.action_ids}, {"rewards", e.rewards}});
  }
  doc["episodes"] = std::move(episodes);
  return doc.dump() + "\n";
}

OfflineDataset parse_dataset(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw EnvError(std::string("dataset: malformed JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "rtgformer-dataset") throw EnvError("dataset: not an rtgformer dataset file");
    if (doc.at("version").get<int>() != kDatasetFormatVersion) {
      throw EnvError("dataset: unsupported format version " + doc.at("version").dump());
    }
    OfflineDataset ds;
    ds.env.grid_width = doc.at("env_config").at("grid_width").get<int>();
    ds.env.grid_height = doc.at("env_config").at("grid_height").get<int>();
    ds.env.validate();
    ds.policy = parse_policy(doc.at("policy").get<std::string>());
    ds.seed = doc.at("seed").get<std::uint64_t>();
    ds.mean_return = doc.at("mean_return").get<double>();
    ds.expert_return = doc.at("expert_return").get<double>();
    ds.random_return = doc.at("random_return").get<double>();
    const auto n_cells = static_cast<std::size_t>(ds.env.cells());
    for (const auto& e : doc.at("episodes")) {
      Trajectory t;
      t.action_ids = e.at("actions").get<std::vector<int>>();
      t.rewards = e.at("rewards").get<std::vector<double>>();
      for (const auto& s : e.at("states")) {
        StateImage img{ds.env.grid_height, ds.env.grid_width, s.get<std::vector<std::uint8_t>>()};
        if (img.cells.size() != n_cells) throw EnvError("dataset: state image size does not match env_config");
        t.states.push_back(std::move(img));
      }
      if (t.states.size() != t.action_ids.size() || t.rewards.size() != t.action_ids.size() || t.length() == 0) {
        throw EnvError("dataset: episode " + std::to_string(ds.episodes.size()) + " has mismatched lengths");
      }
      ds.episodes.push_back(std::move(t));
    }
    if (ds.episodes.size() != doc.at("n_episodes").get<std::size_t>() || ds.episodes.empty()) {
      throw EnvError("dataset: n_episodes does not match the episode list");
    }
    if (mean_of(ds.episodes) != ds.mean_return) {
      throw EnvError("dataset: mean_return in the header does not match the stored episodes");
    }
    return ds;
  } catch (const Json::exception& e) {
    throw EnvError(std::string("dataset: ") + e.what());
  }
}

void write_dataset(const OfflineDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path.string());
  out << serialize_dataset(dataset);
  if (!out) throw std::runtime_error("failed writing dataset file " + path.string());
}

OfflineDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace rtgf::envdata

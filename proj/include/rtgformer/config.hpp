#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rtgformer/eval.hpp"
#include "rtgformer/train.hpp"

namespace rtgf::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset generation settings for gen-data.
struct DataConfig {
  std::vector<envdata::Policy> tiers{envdata::Policy::random, envdata::Policy::medium, envdata::Policy::expert};
  std::size_t episodes = 5000;
  std::uint64_t seed = 0;
  bool operator==(const DataConfig&) const = default;
};

/// Everything a command can be configured with. Sections and keys:
///
///   env       grid_width 7, grid_height 7
///   data      tiers ["random","medium","expert"], episodes 5000, seed 0
///   encoder   d_action 0 (0 = d_model / 2; the state half takes the rest)
///   model     d_model 128, n_heads 1, n_layers 6, context_len 6,
///             rtg_mode "condition", memory_segments 2, dropout 0,
///             max_position 0 (0 = context_len)
///   train     steps 5000, lr_peak 3e-4, warmup_steps 500, batch_tokens 256,
///             seed 0, eval_every 0, clip_norm 1, adam_beta1 0.9,
///             adam_beta2 0.999, adam_eps 1e-8, weight_decay 1e-4,
///             prompt_variant "original", dataset_path "", checkpoint_path ""
///   rollout   target_return null (= dataset expert mean), episodes 10,
///             seed 0, query_mode "rtg_only", first_step "consistency",
///             step_cap 0 (= 4 x episode length)
///   ablation  axis "rtg_mode", levels [] (= axis defaults), seeds [0,1,2],
///             dataset_episodes 2000, dataset_policy "expert", dataset_seed 0,
///             eval_episodes 100, jobs 1, and "train"/"model" blocks with the
///             keys above (defaults: d_model 64, n_layers 2, steps 1500,
///             warmup_steps 150, lr_peak 1e-3)
///
/// Unknown keys anywhere are rejected.
struct RunConfig {
  envdata::CatchConfig env;
  DataConfig data;
  train::TrainConfig train;
  eval::RolloutConfig rollout;
  eval::AblationSpec ablation;

  RunConfig();
};

/// The ablation base used when the config does not override it.
train::TrainConfig default_ablation_base();

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::ordered_json& j);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& cfg);

bool same(const RunConfig& a, const RunConfig& b);

}  // namespace rtgf::config

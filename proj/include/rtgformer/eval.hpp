#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rtgformer/encoder.hpp"
#include "rtgformer/envdata/catch.hpp"
#include "rtgformer/model.hpp"
#include "rtgformer/train.hpp"

namespace rtgf::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Nearest catalog action to pred (the action half of a predicted step);
/// ties go to the smallest id.
int decode_action(std::span<const double> pred, const encoder::Encoder& enc, envdata::PromptVariant variant);

/// Distance to the second-nearest action minus distance to the nearest.
double decode_gap(std::span<const double> pred, const encoder::Encoder& enc, envdata::PromptVariant variant);

/// 100 * (mean - random) / (expert - random).
double normalized_score(double mean_return, double random_return, double expert_return);

enum class QueryMode { rtg_only, masked_state };
std::string to_string(QueryMode mode);
QueryMode parse_query_mode(const std::string& name);

/// How the first action is chosen in rtg_only mode, where no history exists
/// yet to predict from.
///   noop              no prediction; act noop.
///   masked_query      decode the action half predicted for Concat(0, E(s_0)).
///   inverse_dynamics  take that prediction's state half and pick the action
///                     whose successor state encodes closest to it.
///   consistency       query each candidate token E_step(a, s_0) and pick the
///                     action whose predicted state half lies closest to the
///                     encoding of its true successor.
enum class FirstStep { noop, masked_query, inverse_dynamics, consistency };
std::string valid_first_steps();
std::string to_string(FirstStep rule);
FirstStep parse_first_step(const std::string& name);

struct RolloutConfig {
  // Defaults to the dataset's expert return.
  std::optional<double> target_return;
  int n_episodes = 10;
  std::uint64_t seed = 0;
  QueryMode query_mode = QueryMode::rtg_only;
  FirstStep first_step = FirstStep::consistency;
  envdata::PromptVariant variant = envdata::PromptVariant::original;
  // 0 means 4 x episode length.
  int step_cap = 0;

  void validate() const;
};

/// What a predictor sees before step t is taken.
struct StepView {
  std::size_t t = 0;
  // O_0 .. O_{t-1}, row-major, and the running return-to-go at each.
  std::span<const double> history;
  std::span<const double> history_rtg;
  double current_rtg = 0.0;
  // Concat(0, E(s_t)) in masked_state mode (and for a masked first step),
  // otherwise empty.
  std::span<const double> query;
  // Ground truth, for the scripted stubs only.
  const envdata::CatchState* env_state = nullptr;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual void begin_episode() {}
  /// Predicted encoded step whose action half is decoded; nullopt when there
  /// is nothing to predict from.
  virtual std::optional<std::vector<double>> predict(const StepView& view) = 0;
  /// Forward passes that read cached memory so far.
  virtual std::uint64_t cache_uses() const { return 0; }
};

/// The trained sequence model. Without memory it attends over the most recent
/// K tokens; with memory, history is cut into K-aligned segments and up to M
/// completed ones are cached.
class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const model::ModelParams& params, const model::ModelConfig& cfg);
  void begin_episode() override;
  std::optional<std::vector<double>> predict(const StepView& view) override;
  std::uint64_t cache_uses() const override { return cache_.uses() + uses_before_; }

 private:
  const model::ModelParams* params_;
  model::ModelConfig cfg_;
  model::MemoryCache cache_;
  std::size_t pushed_ = 0;
  std::uint64_t uses_before_ = 0;
};

/// Emits [E(expert action) | E(expert successor of s_t)] from the true
/// environment state.
class OraclePredictor : public Predictor {
 public:
  OraclePredictor(const encoder::Encoder& enc, envdata::PromptVariant variant);
  std::optional<std::vector<double>> predict(const StepView& view) override;

 private:
  const encoder::Encoder* enc_;
  envdata::PromptVariant variant_;
};

/// Always emits [E(action) | 0].
class ConstantPredictor : public Predictor {
 public:
  ConstantPredictor(const encoder::Encoder& enc, envdata::PromptVariant variant, int action);
  std::optional<std::vector<double>> predict(const StepView& view) override;

 private:
  std::vector<double> out_;
};

struct EvalReport {
  std::vector<double> returns;
  std::vector<std::uint8_t> failed;
  std::vector<std::vector<int>> actions;
  // Running return-to-go at every step of every episode.
  std::vector<std::vector<double>> rtg_trace;
  double mean_return = 0.0;
  double std_return = 0.0;
  double normalized = 0.0;
  double random_return = 0.0;
  double expert_return = 0.0;
  double target_return = 0.0;
  double decode_gap_min = 0.0;
  double decode_gap_mean = 0.0;
  std::size_t defaulted_steps = 0;
  double state_error_mean = 0.0;
  std::uint64_t cache_uses = 0;
  int n_episodes = 0;
  std::uint64_t seed = 0;
  QueryMode query_mode = QueryMode::rtg_only;
  FirstStep first_step = FirstStep::consistency;
  envdata::PromptVariant variant = envdata::PromptVariant::original;
};

/// Episode i starts from reset(env, derive_seed(seed, {evaluation, i})).
std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode);

EvalReport rollout(Predictor& predictor, const encoder::Encoder& enc, const envdata::CatchConfig& env,
                   const RolloutConfig& cfg, double random_return, double expert_return);

/// Model loaded from a checkpoint; env must match the encoder's grid.
EvalReport rollout(const train::Checkpoint& ckpt, const envdata::CatchConfig& env, const RolloutConfig& cfg);

nlohmann::ordered_json to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path);

// ---- ablations ----

enum class AblationAxis { rtg_mode, memory, prompt_variant, model_size, trajectory_length };
std::string to_string(AblationAxis axis);
AblationAxis parse_axis(const std::string& name);
std::string valid_axes();

struct AblationSpec {
  AblationAxis axis = AblationAxis::rtg_mode;
  // Empty means the axis defaults.
  std::vector<std::string> levels;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  train::TrainConfig base;
  envdata::CatchConfig env;
  std::size_t dataset_episodes = 2000;
  envdata::Policy dataset_policy = envdata::Policy::expert;
  std::uint64_t dataset_seed = 0;
  RolloutConfig rollout;
  int jobs = 1;
};

/// Level labels used when spec.levels is empty.
std::vector<std::string> default_levels(AblationAxis axis);
/// The environment an axis runs on. trajectory_length and memory use taller
/// grids: max(K) + 1 rows and 2K + 1 rows respectively.
envdata::CatchConfig axis_env(const AblationSpec& spec);
/// Applies one level to the shared configuration.
train::TrainConfig level_config(const AblationSpec& spec, const std::string& level);

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double normalized = 0.0;
  double mean_return = 0.0;
  double final_loss = 0.0;
  std::uint64_t train_cache_uses = 0;
  std::uint64_t eval_cache_uses = 0;
  double seconds = 0.0;
};

struct AblationRow {
  std::string level;
  std::size_t parameters = 0;
  std::vector<SeedResult> seeds;
  bool failed = false;
  double mean = 0.0;
  double std = 0.0;
  std::uint64_t cache_uses = 0;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::rtg_mode;
  std::vector<AblationRow> rows;
};

/// Trains and evaluates one (config, seed) pair. Swappable for tests.
using LevelRunner = std::function<SeedResult(const train::TrainConfig&, const envdata::OfflineDataset&,
                                             const RolloutConfig&, std::uint64_t seed)>;
SeedResult train_and_evaluate(const train::TrainConfig& cfg, const envdata::OfflineDataset& data,
                              const RolloutConfig& rollout_cfg, std::uint64_t seed);

AblationTable run_ablation(const AblationSpec& spec, const LevelRunner& runner = train_and_evaluate,
                           const std::function<void(const std::string&)>& log = {});

std::string format_table(const AblationTable& table);
void write_table_csv(const AblationTable& table, const std::filesystem::path& path);
nlohmann::ordered_json to_json(const AblationTable& table);

// ---- plots ----

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const double> xs, std::span<const double> ys);
std::string svg_bar_chart(const std::string& title, const std::string& y_label, std::span<const std::string> labels,
                          std::span<const double> values, std::span<const double> errors = {});

}  // namespace rtgf::eval

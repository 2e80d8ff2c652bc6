#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rtgformer/encoder.hpp"
#include "rtgformer/envdata/dataset.hpp"
#include "rtgformer/model.hpp"
#include "rtgformer/numeric/optim.hpp"
#include "rtgformer/trajectory.hpp"

namespace rtgf::train {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::int64_t steps = 5000;
  double lr_peak = 3e-4;
  // Large-scale runs use 10,000 warmup steps and 65,536-token batches.
  std::int64_t warmup_steps = 500;
  std::int64_t batch_tokens = 256;
  std::uint64_t seed = 0;
  // 0 disables the periodic evaluation hook.
  std::int64_t eval_every = 0;
  double clip_norm = 1.0;
  numeric::AdamWConfig optimizer;
  model::ModelConfig model;
  // 0 means d_model / 2; the state half takes the rest.
  int d_action = 0;
  envdata::PromptVariant variant = envdata::PromptVariant::original;
  std::string dataset_path;
  std::string checkpoint_path;

  void validate() const;
  int action_width() const { return d_action > 0 ? d_action : model.d_model / 2; }
  int state_width() const { return model.d_model - action_width(); }
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::ordered_json to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const envdata::CatchConfig& cfg);
envdata::CatchConfig catch_config_from_json(const nlohmann::ordered_json& j);

/// Linear ramp from 0 at step 0 to lr_peak at warmup_steps, then constant.
double lr_schedule(std::int64_t step, const TrainConfig& cfg);

/// One metrics line; eval_score is NaN on steps without an evaluation.
struct MetricRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double eval_score = 0.0;
  bool operator==(const MetricRow&) const = default;
};

inline constexpr const char* kMetricsHeader = "step,loss,lr,grad_norm,eval_score";
std::string format_metric(const MetricRow& row);
std::vector<MetricRow> read_metrics(const std::filesystem::path& path);

/// What a checkpoint records about its dataset.
struct DatasetInfo {
  std::string path;
  std::string sha256;
  envdata::CatchConfig env;
  envdata::Policy policy = envdata::Policy::expert;
  std::uint64_t n_episodes = 0;
  double mean_return = 0.0;
  double expert_return = 0.0;
  double random_return = 0.0;
  bool operator==(const DatasetInfo&) const = default;
};

DatasetInfo describe_dataset(const envdata::OfflineDataset& data, std::string path, std::string sha256);

inline constexpr std::uint64_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  DatasetInfo dataset;
  model::ModelParams params;
  encoder::EncoderParams encoder;
  numeric::OptimizerState optimizer;
  std::int64_t step = 0;
  std::string stream_state;
  std::vector<MetricRow> metrics;
};

/// Binary container: magic, format version, then named sections each stored
/// with its SHA-256.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// If expected_model is given, its digest must match the stored one.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<model::ModelConfig>& expected_model = std::nullopt);

class Trainer;
/// Periodic evaluation; returns the normalized score.
using EvalHook = std::function<double(const Trainer&)>;

class Trainer {
 public:
  Trainer(TrainConfig cfg, envdata::OfflineDataset data, DatasetInfo info);
  /// Continues from a checkpoint; data must be the dataset it was trained on.
  Trainer(const Checkpoint& ckpt, envdata::OfflineDataset data);

  /// Draws a batch, logs the loss at the current parameters, updates them.
  MetricRow step(const EvalHook& hook = {});
  /// Steps until steps_done() == cfg.steps (or until), calling on_row per step.
  void run(const std::function<void(const MetricRow&)>& on_row = {}, const EvalHook& hook = {},
           std::optional<std::int64_t> until = std::nullopt);

  std::int64_t steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  const model::ModelParams& params() const { return params_; }
  const encoder::Encoder& encoder() const { return encoder_; }
  const envdata::OfflineDataset& dataset() const { return data_; }
  const DatasetInfo& dataset_info() const { return info_; }
  const std::vector<MetricRow>& metrics() const { return metrics_; }
  const trajectory::EncodedDataset& encoded() const { return *encoded_; }
  std::uint64_t cache_uses() const { return cache_uses_; }

  /// The batch the next step() will draw, without advancing the stream.
  trajectory::Batch peek_batch() const;

  Checkpoint checkpoint() const;

 private:
  TrainConfig cfg_;
  envdata::OfflineDataset data_;
  DatasetInfo info_;
  encoder::Encoder encoder_;
  // Heap-held so the stream's pointer survives moves of the trainer.
  std::shared_ptr<const trajectory::EncodedDataset> encoded_;
  model::ModelParams params_;
  numeric::OptimizerState optimizer_;
  trajectory::BatchStream stream_;
  std::int64_t step_ = 0;
  std::vector<MetricRow> metrics_;
  std::uint64_t cache_uses_ = 0;
};

}  // namespace rtgf::train

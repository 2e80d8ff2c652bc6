#include "rtgformer/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "rtgformer/io/binary.hpp"
#include "rtgformer/io/digest.hpp"
#include "rtgformer/numeric/ops.hpp"
#include "rtgformer/seeding.hpp"

namespace rtgf::train {

using Json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  model.validate();
  if (steps < 0) throw TrainError("train config: steps must be >= 0");
  if (warmup_steps < 0) throw TrainError("train config: warmup_steps must be >= 0");
  if (!(lr_peak > 0.0)) throw TrainError("train config: lr_peak must be positive");
  if (batch_tokens < model.context_len) throw TrainError("train config: batch_tokens must be at least context_len");
  if (eval_every < 0) throw TrainError("train config: eval_every must be >= 0");
  if (!(clip_norm > 0.0)) throw TrainError("train config: clip_norm must be positive");
  if (action_width() < 8 || state_width() < 8) {
    throw TrainError("train config: encoder halves must each be at least 8 wide (d_model " +
                     std::to_string(model.d_model) + ", d_action " + std::to_string(action_width()) + ")");
  }
}

Json to_json(const model::ModelConfig& c) {
  return Json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},
              {"context_len", c.context_len},
              {"rtg_mode", model::to_string(c.rtg_mode)},
              {"memory_segments", c.memory_segments},
              {"dropout", c.dropout},
              {"max_position", c.max_position}};
}

namespace {

template <typename T>
void read_key(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw TrainError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw TrainError(where + ": unknown key '" + k + "'");
  }
}

}  // namespace

model::ModelConfig model_config_from_json(const Json& j) {
  reject_unknown(j,
                 {"d_model", "n_heads", "n_layers", "context_len", "rtg_mode", "memory_segments", "dropout",
                  "max_position"},
                 "model");
  model::ModelConfig c;
  read_key(j, "d_model", c.d_model);
  read_key(j, "n_heads", c.n_heads);
  read_key(j, "n_layers", c.n_layers);
  read_key(j, "context_len", c.context_len);
  if (j.contains("rtg_mode")) c.rtg_mode = model::parse_rtg_mode(j.at("rtg_mode").get<std::string>());
  read_key(j, "memory_segments", c.memory_segments);
  read_key(j, "dropout", c.dropout);
  read_key(j, "max_position", c.max_position);
  return c;
}

Json to_json(const envdata::CatchConfig& c) { return Json{{"grid_width", c.grid_width}, {"grid_height", c.grid_height}}; }

envdata::CatchConfig catch_config_from_json(const Json& j) {
  reject_unknown(j, {"grid_width", "grid_height"}, "env");
  envdata::CatchConfig c;
  read_key(j, "grid_width", c.grid_width);
  read_key(j, "grid_height", c.grid_height);
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"steps", c.steps},
              {"lr_peak", c.lr_peak},
              {"warmup_steps", c.warmup_steps},
              {"batch_tokens", c.batch_tokens},
              {"seed", c.seed},
              {"eval_every", c.eval_every},
              {"clip_norm", c.clip_norm},
              {"adam_beta1", c.optimizer.beta1},
              {"adam_beta2", c.optimizer.beta2},
              {"adam_eps", c.optimizer.eps},
              {"weight_decay", c.optimizer.weight_decay},
              {"model", to_json(c.model)},
              {"d_action", c.d_action},
              {"prompt_variant", envdata::to_string(c.variant)},
              {"dataset_path", c.dataset_path},
              {"checkpoint_path", c.checkpoint_path}};
}

TrainConfig train_config_from_json(const Json& j) {
  reject_unknown(j,
                 {"steps", "lr_peak", "warmup_steps", "batch_tokens", "seed", "eval_every", "clip_norm", "adam_beta1",
                  "adam_beta2", "adam_eps", "weight_decay", "model", "d_action", "prompt_variant", "dataset_path",
                  "checkpoint_path"},
                 "train");
  TrainConfig c;
  read_key(j, "steps", c.steps);
  read_key(j, "lr_peak", c.lr_peak);
  read_key(j, "warmup_steps", c.warmup_steps);
  read_key(j, "batch_tokens", c.batch_tokens);
  read_key(j, "seed", c.seed);
  read_key(j, "eval_every", c.eval_every);
  read_key(j, "clip_norm", c.clip_norm);
  read_key(j, "adam_beta1", c.optimizer.beta1);
  read_key(j, "adam_beta2", c.optimizer.beta2);
  read_key(j, "adam_eps", c.optimizer.eps);
  read_key(j, "weight_decay", c.optimizer.weight_decay);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  read_key(j, "d_action", c.d_action);
  if (j.contains("prompt_variant")) c.variant = envdata::parse_variant(j.at("prompt_variant").get<std::string>());
  read_key(j, "dataset_path", c.dataset_path);
  read_key(j, "checkpoint_path", c.checkpoint_path);
  return c;
}

double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0) throw TrainError("lr_schedule: negative step");
  if (step >= cfg.warmup_steps) return cfg.lr_peak;
  return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

std::string format_metric(const MetricRow& r) {
  char buf[256];
  if (std::isnan(r.eval_score)) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,", static_cast<long long>(r.step), r.loss, r.lr,
                  r.grad_norm);
  } else {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g", static_cast<long long>(r.step), r.loss, r.lr,
                  r.grad_norm, r.eval_score);
  }
  return buf;
}

std::vector<MetricRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TrainError("cannot read metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw TrainError("metrics file " + path.string() + ": bad header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() == 4) f.emplace_back();
    if (f.size() != 5) throw TrainError("metrics file " + path.string() + ": malformed line '" + line + "'");
    MetricRow r;
    r.step = std::stoll(f[0]);
    r.loss = std::stod(f[1]);
    r.lr = std::stod(f[2]);
    r.grad_norm = std::stod(f[3]);
    r.eval_score = f[4].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[4]);
    rows.push_back(r);
  }
  return rows;
}

DatasetInfo describe_dataset(const envdata::OfflineDataset& data, std::string path, std::string sha256) {
  DatasetInfo info;
  info.path = std::move(path);
  info.sha256 = std::move(sha256);
  info.env = data.env;
  info.policy = data.policy;
  info.n_episodes = data.episodes.size();
  info.mean_return = data.mean_return;
  info.expert_return = data.expert_return;
  info.random_return = data.random_return;
  return info;
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[] = "RTGFCKPT";

std::string optimizer_bytes(const numeric::OptimizerState& s) {
  io::BinaryWriter w;
  w.f64(s.config.beta1);
  w.f64(s.config.beta2);
  w.f64(s.config.eps);
  w.f64(s.config.weight_decay);
  w.i64(s.step);
  w.f64(s.last_lr);
  w.u64(s.first_moment.size());
  for (std::size_t i = 0; i < s.first_moment.size(); ++i) {
    w.f64s(s.first_moment[i]);
    w.f64s(s.second_moment[i]);
  }
  return w.bytes();
}

numeric::OptimizerState parse_optimizer(const std::string& bytes) {
  io::BinaryReader r(bytes);
  numeric::OptimizerState s;
  s.config.beta1 = r.f64();
  s.config.beta2 = r.f64();
  s.config.eps = r.f64();
  s.config.weight_decay = r.f64();
  s.step = r.i64();
  s.last_lr = r.f64();
  const auto n = r.u64();
  if (n > bytes.size()) throw io::FormatError("optimizer: implausible tensor count");
  for (std::uint64_t i = 0; i < n; ++i) {
    s.first_moment.push_back(r.f64s());
    s.second_moment.push_back(r.f64s());
  }
  if (!r.done()) throw io::FormatError("optimizer: trailing bytes");
  return s;
}

std::string metrics_bytes(const std::vector<MetricRow>& rows) {
  io::BinaryWriter w;
  w.u64(rows.size());
  for (const auto& r : rows) {
    w.i64(r.step);
    w.f64(r.loss);
    w.f64(r.lr);
    w.f64(r.grad_norm);
    w.f64(r.eval_score);
  }
  return w.bytes();
}

std::vector<MetricRow> parse_metrics_bytes(const std::string& bytes) {
  io::BinaryReader r(bytes);
  const auto n = r.u64();
  if (n > bytes.size()) throw io::FormatError("metrics: implausible row count");
  std::vector<MetricRow> rows(n);
  for (auto& row : rows) {
    row.step = r.i64();
    row.loss = r.f64();
    row.lr = r.f64();
    row.grad_norm = r.f64();
    row.eval_score = r.f64();
  }
  if (!r.done()) throw io::FormatError("metrics: trailing bytes");
  return rows;
}

Json dataset_json(const DatasetInfo& d) {
  return Json{{"path", d.path},
              {"sha256", d.sha256},
              {"env", to_json(d.env)},
              {"policy", envdata::to_string(d.policy)},
              {"n_episodes", d.n_episodes},
              {"mean_return", d.mean_return},
              {"expert_return", d.expert_return},
              {"random_return", d.random_return}};
}

DatasetInfo dataset_from_json(const Json& j) {
  DatasetInfo d;
  d.path = j.at("path").get<std::string>();
  d.sha256 = j.at("sha256").get<std::string>();
  d.env = catch_config_from_json(j.at("env"));
  d.policy = envdata::parse_policy(j.at("policy").get<std::string>());
  d.n_episodes = j.at("n_episodes").get<std::uint64_t>();
  d.mean_return = j.at("mean_return").get<double>();
  d.expert_return = j.at("expert_return").get<double>();
  d.random_return = j.at("random_return").get<double>();
  return d;
}

const char* kSections[] = {"config", "dataset", "model", "encoder", "optimizer", "rng", "metrics"};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  io::BinaryWriter model_w;
  model_w.str(model::config_digest(c.config.model));
  model_w.str(model::serialize_params(c.params));

  io::BinaryWriter rng_w;
  rng_w.i64(c.step);
  rng_w.str(c.stream_state);

  const std::string payloads[] = {to_json(c.config).dump(),
                                  dataset_json(c.dataset).dump(),
                                  model_w.bytes(),
                                  encoder::serialize_encoder(c.encoder),
                                  optimizer_bytes(c.optimizer),
                                  rng_w.bytes(),
                                  metrics_bytes(c.metrics)};
  io::BinaryWriter w;
  w.str(kMagic);
  w.u64(kCheckpointVersion);
  w.u64(std::size(kSections));
  for (std::size_t i = 0; i < std::size(kSections); ++i) {
    w.str(kSections[i]);
    w.str(io::sha256_hex(payloads[i]));
    w.str(payloads[i]);
  }
  return w.bytes();
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  try {
    io::BinaryReader r(bytes);
    if (r.str() != kMagic) throw TrainError("checkpoint: not a checkpoint file (bad magic)");
    const auto version = r.u64();
    if (version != kCheckpointVersion) {
      throw TrainError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
    }
    const auto n = r.u64();
    if (n != std::size(kSections)) throw TrainError("checkpoint: unexpected section count " + std::to_string(n));
    std::vector<std::string> payload(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto name = r.str();
      if (name != kSections[i]) throw TrainError("checkpoint: expected section '" + std::string(kSections[i]) + "'");
      const auto digest = r.str();
      payload[i] = r.str();
      if (io::sha256_hex(payload[i]) != digest) throw TrainError("checkpoint: section '" + name + "' is corrupted");
    }
    if (!r.done()) throw TrainError("checkpoint: trailing bytes");

    Checkpoint c;
    c.config = train_config_from_json(Json::parse(payload[0]));
    c.dataset = dataset_from_json(Json::parse(payload[1]));
    io::BinaryReader mr(payload[2]);
    const auto stored_digest = mr.str();
    if (stored_digest != model::config_digest(c.config.model)) {
      throw TrainError("checkpoint: model section digest does not match its config");
    }
    c.params = model::parse_params(mr.str(), c.config.model);
    c.encoder = encoder::parse_encoder(payload[3]);
    c.optimizer = parse_optimizer(payload[4]);
    io::BinaryReader rr(payload[5]);
    c.step = rr.i64();
    c.stream_state = rr.str();
    c.metrics = parse_metrics_bytes(payload[6]);
    return c;
  } catch (const io::FormatError& e) {
    throw TrainError(std::string("checkpoint: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw TrainError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TrainError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TrainError("cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<model::ModelConfig>& expected_model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainError("cannot read checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto c = parse_checkpoint(bytes);
  if (expected_model && model::config_digest(*expected_model) != model::config_digest(c.config.model)) {
    throw TrainError("checkpoint " + path.string() + ": model config digest " +
                     model::config_digest(c.config.model).substr(0, 12) + " does not match requested " +
                     model::config_digest(*expected_model).substr(0, 12) + " (" + model::canonical(*expected_model) +
                     " vs " + model::canonical(c.config.model) + ")");
  }
  return c;
}

// ---- trainer ----

namespace {

encoder::Encoder make_encoder(const TrainConfig& cfg, const envdata::CatchConfig& env) {
  return encoder::build_encoder(env, cfg.seed, cfg.action_width(), cfg.state_width());
}

std::shared_ptr<const trajectory::EncodedDataset> encode_all(const envdata::OfflineDataset& data,
                                                             const encoder::Encoder& enc,
                                                             envdata::PromptVariant variant) {
  return std::make_shared<const trajectory::EncodedDataset>(trajectory::encode_dataset(data, enc, variant));
}

std::size_t history_depth(const TrainConfig& cfg) { return static_cast<std::size_t>(cfg.model.memory_segments); }

}  // namespace

Trainer::Trainer(TrainConfig cfg, envdata::OfflineDataset data, DatasetInfo info)
    : cfg_((cfg.validate(), std::move(cfg))),
      data_(std::move(data)),
      info_(std::move(info)),
      encoder_(make_encoder(cfg_, data_.env)),
      encoded_(encode_all(data_, encoder_, cfg_.variant)),
      params_(model::init_params(cfg_.model, cfg_.seed)),
      optimizer_(numeric::make_optimizer_state(params_.list(), cfg_.optimizer)),
      stream_(*encoded_, static_cast<std::size_t>(cfg_.model.context_len), history_depth(cfg_),
              static_cast<std::size_t>(cfg_.batch_tokens), cfg_.seed) {}

Trainer::Trainer(const Checkpoint& ckpt, envdata::OfflineDataset data)
    : cfg_((ckpt.config.validate(), ckpt.config)),
      data_(std::move(data)),
      info_(ckpt.dataset),
      encoder_(ckpt.encoder),
      encoded_(encode_all(data_, encoder_, cfg_.variant)),
      params_(model::clone(ckpt.params)),
      optimizer_(ckpt.optimizer),
      stream_(*encoded_, static_cast<std::size_t>(cfg_.model.context_len), history_depth(cfg_),
              static_cast<std::size_t>(cfg_.batch_tokens), cfg_.seed),
      step_(ckpt.step),
      metrics_(ckpt.metrics) {
  if (data_.env != info_.env || data_.episodes.size() != info_.n_episodes || data_.policy != info_.policy ||
      data_.mean_return != info_.mean_return) {
    throw TrainError("resume: dataset does not match the one recorded in the checkpoint (" + info_.path + ")");
  }
  if (optimizer_.first_moment.size() != params_.list().size()) {
    throw TrainError("resume: optimizer state does not match the parameter list");
  }
  stream_.restore(ckpt.stream_state);
}

trajectory::Batch Trainer::peek_batch() const {
  auto copy = stream_;
  return copy.next();
}

MetricRow Trainer::step(const EvalHook& hook) {
  const auto batch = stream_.next();
  auto list = params_.list();
  params_.zero_grad();
  const double lr = lr_schedule(step_, cfg_);
  model::ForwardOptions opts;
  opts.training = true;
  opts.dropout_seed = derive_seed(cfg_.seed, {stream::dropout, static_cast<std::uint64_t>(step_)});

  MetricRow row;
  row.step = step_;
  row.lr = lr;
  row.eval_score = std::numeric_limits<double>::quiet_NaN();
  {
    numeric::Tape tape;
    numeric::Tape::Scope scope(&tape);
    std::uint64_t uses = 0;
    const auto loss = model::batch_loss(params_, cfg_.model, batch, opts, &uses);
    cache_uses_ += uses;
    row.loss = loss.item();
    if (!std::isfinite(row.loss)) {
      std::string ids;
      for (std::size_t i = 0; i < batch.episode_ids.size() && i < 16; ++i) {
        ids += (i ? " " : "") + std::to_string(batch.episode_ids[i]) + "@" + std::to_string(batch.offsets[i]);
      }
      std::string where;
      if (!cfg_.checkpoint_path.empty()) {
        const auto dump = cfg_.checkpoint_path + ".nonfinite";
        save_checkpoint(checkpoint(), dump);
        where = "; checkpoint dumped to " + dump;
      }
      throw TrainError("non-finite loss at step " + std::to_string(step_) + " (batch " +
                       std::to_string(stream_.drawn() - 1) + ", episode@offset: " + ids + ")" + where);
    }
    tape.backward(loss);
  }
  row.grad_norm = numeric::clip_grad_norm(list, cfg_.clip_norm);
  numeric::adamw_step(list, optimizer_, lr);
  ++step_;
  if (hook && cfg_.eval_every > 0 && (step_ % cfg_.eval_every == 0 || step_ == cfg_.steps)) {
    row.eval_score = hook(*this);
  }
  metrics_.push_back(row);
  return row;
}

void Trainer::run(const std::function<void(const MetricRow&)>& on_row, const EvalHook& hook,
                  std::optional<std::int64_t> until) {
  const auto stop = until ? std::min(*until, cfg_.steps) : cfg_.steps;
  while (step_ < stop) {
    const auto row = step(hook);
    if (on_row) on_row(row);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = cfg_;
  c.dataset = info_;
  c.params = model::clone(params_);
  c.encoder = encoder_.params();
  c.optimizer = optimizer_;
  c.step = step_;
  c.stream_state = stream_.state();
  c.metrics = metrics_;
  return c;
}

}  // namespace rtgf::train

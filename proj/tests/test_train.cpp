#include "doctest.h"

#include "rtgformer/io/digest.hpp"
#include "rtgformer/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rtgf;
using namespace rtgf::train;

namespace {

const envdata::OfflineDataset& tiny_data() {
  static const auto data = envdata::generate_dataset(envdata::CatchConfig{}, envdata::Policy::medium, 60, 5);
  return data;
}

TrainConfig tiny_config(std::int64_t steps = 30) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.warmup_steps = 5;
  cfg.lr_peak = 1e-3;
  cfg.batch_tokens = 36;
  cfg.seed = 7;
  cfg.model.d_model = 16;
  cfg.model.n_layers = 2;
  cfg.model.context_len = 3;
  cfg.model.memory_segments = 2;
  return cfg;
}

Trainer make_trainer(const TrainConfig& cfg) { return Trainer(cfg, tiny_data(), describe_dataset(tiny_data(), "", "")); }

std::string metrics_text(const std::vector<MetricRow>& rows) {
  std::string s = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) s += format_metric(r) + "\n";
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "rtgf_test_train";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("lr schedule ramps linearly then holds") {
  TrainConfig cfg;
  cfg.lr_peak = 3e-4;
  cfg.warmup_steps = 500;
  CHECK(lr_schedule(0, cfg) == 0.0);
  CHECK(lr_schedule(250, cfg) == doctest::Approx(1.5e-4).epsilon(1e-15));
  CHECK(lr_schedule(500, cfg) == 3e-4);
  CHECK(lr_schedule(4999, cfg) == 3e-4);
  cfg.warmup_steps = 0;
  CHECK(lr_schedule(0, cfg) == 3e-4);
  CHECK_THROWS_AS(lr_schedule(-1, cfg), TrainError);
}

TEST_CASE("config validation") {
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.warmup_steps = -1;
  CHECK_THROWS_AS(cfg.validate(), TrainError);
  cfg = tiny_config();
  cfg.batch_tokens = 2;
  CHECK_THROWS_AS(cfg.validate(), TrainError);
  cfg = tiny_config();
  cfg.d_action = 4;
  CHECK_THROWS_AS(cfg.validate(), TrainError);
  cfg = tiny_config();
  CHECK(cfg.action_width() == 8);
  CHECK(cfg.state_width() == 8);
}

TEST_CASE("config json round trips and rejects unknown keys") {
  auto cfg = tiny_config();
  cfg.model.rtg_mode = model::RtgMode::linear;
  cfg.variant = envdata::PromptVariant::contextual;
  cfg.dataset_path = "data/expert.ds";
  const auto j = to_json(cfg);
  CHECK(train_config_from_json(j) == cfg);
  CHECK(to_json(train_config_from_json(j)).dump() == j.dump());

  auto bad = j;
  bad["learning_rate"] = 0.1;
  CHECK_THROWS_AS(train_config_from_json(bad), TrainError);
  auto bad_model = j;
  bad_model["model"]["heads"] = 2;
  CHECK_THROWS_AS(train_config_from_json(bad_model), TrainError);

  envdata::CatchConfig env{5, 9};
  CHECK(catch_config_from_json(to_json(env)) == env);
}

TEST_CASE("metrics format round trips through a file") {
  std::vector<MetricRow> rows{{0, 0.25, 0.0, 1.5, NAN}, {1, 1.0 / 3.0, 1e-4, 0.1, 42.5}};
  const auto path = scratch("metrics.csv");
  {
    std::ofstream out(path);
    out << metrics_text(rows);
  }
  const auto back = read_metrics(path);
  REQUIRE(back.size() == 2);
  CHECK(std::isnan(back[0].eval_score));
  CHECK(back[1] == rows[1]);
  CHECK(back[0].loss == rows[0].loss);
  CHECK(format_metric(rows[0]).back() == ',');
}

TEST_CASE("step 0 logs the loss at the initial parameters with lr 0") {
  auto cfg = tiny_config(3);
  auto tr = make_trainer(cfg);
  const auto batch = tr.peek_batch();
  const auto init = model::clone(tr.params());
  double expected = 0.0;
  {
    numeric::NoTape nt;
    model::ForwardOptions opts;
    opts.training = true;
    expected = model::batch_loss(init, cfg.model, batch, opts).item();
  }
  const auto row = tr.step();
  CHECK(row.step == 0);
  CHECK(row.lr == 0.0);
  CHECK(row.loss == expected);
  CHECK(std::isfinite(row.grad_norm));
  CHECK(row.grad_norm > 0.0);
  // lr(0) = 0 leaves the parameters unchanged apart from decoupled decay, which
  // is scaled by lr as well.
  CHECK(model::params_digest(tr.params()) == model::params_digest(init));
}

TEST_CASE("overfits a single batch") {
  auto cfg = tiny_config(500);
  cfg.warmup_steps = 20;
  cfg.lr_peak = 3e-3;
  cfg.model.memory_segments = 0;
  auto tr = make_trainer(cfg);
  const auto batch = tr.peek_batch();
  auto params = model::clone(tr.params());
  auto list = params.list();
  auto state = numeric::make_optimizer_state(list, cfg.optimizer);
  double first = 0.0, last = 0.0;
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    params.zero_grad();
    numeric::Tape tape;
    numeric::Tape::Scope scope(&tape);
    model::ForwardOptions opts;
    opts.training = true;
    const auto loss = model::batch_loss(params, cfg.model, batch, opts);
    if (s == 0) first = loss.item();
    last = loss.item();
    tape.backward(loss);
    numeric::clip_grad_norm(list, cfg.clip_norm);
    numeric::adamw_step(list, state, lr_schedule(s, cfg));
  }
  CHECK(last < 0.01 * first);
}

TEST_CASE("same seed gives bit-identical metrics; finite grad norms") {
  const auto cfg = tiny_config(25);
  auto a = make_trainer(cfg);
  auto b = make_trainer(cfg);
  a.run();
  b.run();
  CHECK(metrics_text(a.metrics()) == metrics_text(b.metrics()));
  for (const auto& r : a.metrics()) {
    CHECK(std::isfinite(r.loss));
    CHECK(std::isfinite(r.grad_norm));
  }
  CHECK(a.metrics().back().loss < a.metrics().front().loss);
  CHECK(a.cache_uses() > 0);
  auto other = cfg;
  other.seed = 8;
  auto c = make_trainer(other);
  c.run();
  CHECK(metrics_text(c.metrics()) != metrics_text(a.metrics()));
}

TEST_CASE("training leaves the encoder and the dataset untouched") {
  const auto cfg = tiny_config(10);
  auto tr = make_trainer(cfg);
  const auto enc_before = tr.encoder().digest();
  const auto data_before = io::sha256_hex(envdata::serialize_dataset(tr.dataset()));
  tr.run();
  CHECK(tr.encoder().digest() == enc_before);
  CHECK(io::sha256_hex(envdata::serialize_dataset(tr.dataset())) == data_before);
  CHECK(encoder::Encoder(tr.checkpoint().encoder).digest() == enc_before);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  auto tr = make_trainer(tiny_config(8));
  tr.run();
  const auto path = scratch("a.ckpt");
  save_checkpoint(tr.checkpoint(), path);
  const auto loaded = load_checkpoint(path);
  CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(tr.checkpoint()));
  CHECK(loaded.step == 8);
  CHECK(metrics_text(loaded.metrics) == metrics_text(tr.metrics()));
  CHECK(model::params_digest(loaded.params) == model::params_digest(tr.params()));
}

TEST_CASE("resume reproduces the uninterrupted metric stream") {
  for (int memory : {0, 2}) {
    auto cfg = tiny_config(24);
    cfg.model.memory_segments = memory;
    cfg.eval_every = 5;
    int calls = 0;
    EvalHook hook = [&](const Trainer& t) {
      ++calls;
      return static_cast<double>(t.steps_done());
    };
    auto full = make_trainer(cfg);
    full.run({}, hook);

    auto first = make_trainer(cfg);
    first.run({}, hook, 11);
    const auto path = scratch("resume.ckpt");
    save_checkpoint(first.checkpoint(), path);
    Trainer second(load_checkpoint(path), tiny_data());
    CHECK(second.steps_done() == 11);
    second.run({}, hook);
    CHECK(metrics_text(second.metrics()) == metrics_text(full.metrics()));
    CHECK(model::params_digest(second.params()) == model::params_digest(full.params()));
    CHECK(calls == 10);
  }
}

TEST_CASE("eval hook fires every eval_every steps and at the end") {
  auto cfg = tiny_config(12);
  cfg.eval_every = 5;
  auto tr = make_trainer(cfg);
  std::vector<std::int64_t> at;
  tr.run({}, [&](const Trainer& t) {
    at.push_back(t.steps_done());
    return 1.0;
  });
  CHECK(at == std::vector<std::int64_t>{5, 10, 12});
  int with_score = 0;
  for (const auto& r : tr.metrics()) with_score += std::isnan(r.eval_score) ? 0 : 1;
  CHECK(with_score == 3);
}

TEST_CASE("loading against a different model config fails with both digests") {
  auto tr = make_trainer(tiny_config(2));
  tr.run();
  const auto path = scratch("mismatch.ckpt");
  save_checkpoint(tr.checkpoint(), path);
  auto other = tiny_config().model;
  other.n_layers = 3;
  try {
    load_checkpoint(path, other);
    FAIL("expected a mismatch");
  } catch (const TrainError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(model::config_digest(other).substr(0, 12)) != std::string::npos);
    CHECK(msg.find(model::config_digest(tiny_config().model).substr(0, 12)) != std::string::npos);
  }
  CHECK_NOTHROW(load_checkpoint(path, tiny_config().model));
}

TEST_CASE("corrupted, truncated and future-version checkpoints are rejected") {
  auto tr = make_trainer(tiny_config(2));
  tr.run();
  const auto bytes = serialize_checkpoint(tr.checkpoint());
  CHECK_NOTHROW(parse_checkpoint(bytes));

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(parse_checkpoint(flipped), TrainError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), TrainError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 8) + "RTGFCKPZ" + bytes.substr(16)), TrainError);
  CHECK_THROWS_AS(parse_checkpoint(""), TrainError);

  // The version follows the magic string's length-prefixed encoding.
  auto future = bytes;
  const std::size_t version_at = 8 + 8;
  future[version_at] = static_cast<char>(kCheckpointVersion + 1);
  try {
    parse_checkpoint(future);
    FAIL("expected a version error");
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("resume refuses a different dataset") {
  auto tr = make_trainer(tiny_config(2));
  tr.run();
  const auto other = envdata::generate_dataset(envdata::CatchConfig{}, envdata::Policy::medium, 61, 5);
  CHECK_THROWS_AS(Trainer(tr.checkpoint(), other), TrainError);
}

TEST_CASE("linear mode trains too") {
  auto cfg = tiny_config(20);
  cfg.model.rtg_mode = model::RtgMode::linear;
  cfg.model.memory_segments = 0;
  auto tr = make_trainer(cfg);
  tr.run();
  CHECK(tr.metrics().back().loss < tr.metrics().front().loss);
  CHECK(tr.cache_uses() == 0);
}

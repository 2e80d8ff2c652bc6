// rtgformer command-line tool: gen-data, train, eval, ablate, gradcheck.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rtgformer/config.hpp"
#include "rtgformer/eval.hpp"
#include "rtgformer/io/digest.hpp"
#include "rtgformer/numeric/ops.hpp"
#include "rtgformer/train.hpp"
#include "rtgformer/verify.hpp"
#include "run_dir.hpp"

namespace fs = std::filesystem;
using namespace rtgf;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --seed, else RTGFORMER_SEED, else whatever the config holds.
std::optional<std::uint64_t> resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("RTGFORMER_SEED"); env && *env) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw UsageError(std::string("RTGFORMER_SEED is not an unsigned integer: '") + env + "'");
    return v;
  }
  return std::nullopt;
}

config::RunConfig load_config(const std::string& path, cli::RunDir* run) {
  if (path.empty()) return config::RunConfig{};
  if (run) run->add_input(path);
  return config::load_run_config(path);
}

std::string svg_loss(const std::vector<train::MetricRow>& rows) {
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    xs.push_back(static_cast<double>(r.step));
    ys.push_back(r.loss > 0 ? std::log10(r.loss) : NAN);
  }
  return eval::svg_line_chart("training loss", "step", "log10 loss", xs, ys);
}

// ---- gen-data ----

struct GenDataArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> episodes;
};

int gen_data(const GenDataArgs& a) {
  cli::RunDir run(a.out, "gen-data");
  auto cfg = load_config(a.config, &run);
  if (auto s = resolve_seed(a.seed)) cfg.data.seed = *s;
  if (a.episodes) cfg.data.episodes = *a.episodes;
  run.write_text("config.json", config::dump_run_config(cfg));
  for (auto tier : cfg.data.tiers) {
    const auto ds = envdata::generate_dataset(cfg.env, tier, cfg.data.episodes, cfg.data.seed);
    const auto name = envdata::to_string(tier) + ".json";
    cli::write_atomic(run.file(name), envdata::serialize_dataset(ds));
    std::printf("%-14s %zu episodes  mean return %+.4f  (random %+.4f, expert %+.4f)\n", envdata::to_string(tier).c_str(),
                ds.episodes.size(), ds.mean_return, ds.random_return, ds.expert_return);
  }
  run.finish();
  std::printf("wrote %s\n", run.path().c_str());
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::string rtg_mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  std::int64_t checkpoint_every = 500;
  std::optional<std::int64_t> stop_after;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a) {
  cli::RunDir run(a.out, "train");
  auto cfg = load_config(a.config, &run);
  run.add_input(a.data);
  const auto data_sha = io::sha256_file(a.data);
  auto data = envdata::read_dataset(a.data);
  if (data.env != cfg.env) {
    // The dataset fixes the grid.
    cfg.env = data.env;
  }

  std::optional<train::Trainer> trainer;
  if (!a.resume.empty()) {
    run.add_input(a.resume);
    auto ckpt = train::load_checkpoint(a.resume);
    if (ckpt.dataset.sha256 != data_sha) {
      throw std::runtime_error("resume: " + a.data + " (sha256 " + data_sha.substr(0, 12) +
                               ") is not the dataset the checkpoint was trained on (sha256 " +
                               ckpt.dataset.sha256.substr(0, 12) + ")");
    }
    if (!a.rtg_mode.empty() && model::parse_rtg_mode(a.rtg_mode) != ckpt.config.model.rtg_mode) {
      throw UsageError("--rtg-mode cannot change the model of a resumed run");
    }
    if (a.steps) ckpt.config.steps = *a.steps;
    cfg.train = ckpt.config;
    trainer.emplace(ckpt, std::move(data));
  } else {
    if (!a.rtg_mode.empty()) cfg.train.model.rtg_mode = model::parse_rtg_mode(a.rtg_mode);
    if (auto s = resolve_seed(a.seed)) cfg.train.seed = *s;
    if (a.steps) cfg.train.steps = *a.steps;
    cfg.train.dataset_path = fs::absolute(a.data).string();
    cfg.train.checkpoint_path = run.file("checkpoint.ckpt").string();
    cfg.train.validate();
    auto info = train::describe_dataset(data, cfg.train.dataset_path, data_sha);
    trainer.emplace(cfg.train, std::move(data), std::move(info));
  }
  run.write_text("config.json", config::dump_run_config(cfg));

  auto& tr = *trainer;
  const auto ckpt_path = run.file("checkpoint.ckpt");
  std::ofstream metrics(run.file("metrics.csv"));
  metrics << train::kMetricsHeader << '\n';
  for (const auto& r : tr.metrics()) metrics << train::format_metric(r) << '\n';
  metrics.flush();

  train::EvalHook hook = [&](const train::Trainer& t) {
    auto rc = cfg.rollout;
    rc.variant = t.config().variant;
    eval::ModelPredictor p(t.params(), t.config().model);
    return eval::rollout(p, t.encoder(), t.dataset().env, rc, t.dataset().random_return, t.dataset().expert_return)
        .normalized;
  };
  const auto total = tr.config().steps;
  const auto stop = a.stop_after ? std::min(*a.stop_after, total) : total;
  while (tr.steps_done() < stop) {
    const auto row = tr.step(hook);
    metrics << train::format_metric(row) << '\n';
    metrics.flush();
    const auto done = tr.steps_done();
    if (!a.quiet && (done % 100 == 0 || done == stop || !std::isnan(row.eval_score))) {
      std::printf("step %6lld  loss %.6g  lr %.3g  grad %.3g", static_cast<long long>(row.step), row.loss, row.lr,
                  row.grad_norm);
      if (!std::isnan(row.eval_score)) std::printf("  eval %.1f", row.eval_score);
      std::printf("\n");
      std::fflush(stdout);
    }
    if (a.checkpoint_every > 0 && done % a.checkpoint_every == 0) {
      cli::write_atomic(ckpt_path, train::serialize_checkpoint(tr.checkpoint()));
    }
  }
  metrics.close();
  cli::write_atomic(ckpt_path, train::serialize_checkpoint(tr.checkpoint()));
  run.write_text("loss.svg", svg_loss(tr.metrics()));
  run.finish();
  const auto& m = tr.metrics();
  if (!m.empty()) {
    std::printf("loss %.6g -> %.6g over %lld steps\n", m.front().loss, m.back().loss,
                static_cast<long long>(tr.steps_done()));
  }
  std::printf("wrote %s\n", run.path().c_str());
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string out = "runs";
  std::optional<int> episodes;
  std::optional<std::uint64_t> seed;
  bool oracle = false;
  std::string query_mode;
  std::string first_step;
  std::optional<double> target_return;
};

int eval_cmd(const EvalArgs& a) {
  cli::RunDir run(a.out, "eval");
  auto cfg = load_config(a.config, &run);
  run.add_input(a.checkpoint);
  const auto ckpt = train::load_checkpoint(a.checkpoint);
  cfg.env = ckpt.dataset.env;
  cfg.train = ckpt.config;
  if (a.episodes) cfg.rollout.n_episodes = *a.episodes;
  if (auto s = resolve_seed(a.seed)) cfg.rollout.seed = *s;
  if (!a.query_mode.empty()) cfg.rollout.query_mode = eval::parse_query_mode(a.query_mode);
  if (!a.first_step.empty()) cfg.rollout.first_step = eval::parse_first_step(a.first_step);
  if (a.target_return) cfg.rollout.target_return = a.target_return;
  cfg.rollout.variant = ckpt.config.variant;
  run.write_text("config.json", config::dump_run_config(cfg));

  const encoder::Encoder enc(ckpt.encoder);
  eval::EvalReport rep;
  if (a.oracle) {
    eval::OraclePredictor p(enc, cfg.rollout.variant);
    rep = eval::rollout(p, enc, cfg.env, cfg.rollout, ckpt.dataset.random_return, ckpt.dataset.expert_return);
  } else {
    rep = eval::rollout(ckpt, cfg.env, cfg.rollout);
  }
  eval::write_report(rep, run.file("eval.json"), run.file("eval.csv"));

  std::vector<std::string> labels;
  for (std::size_t i = 0; i < rep.returns.size(); ++i) labels.push_back(std::to_string(i));
  run.write_text("returns.svg", eval::svg_bar_chart("episode returns", "return", labels, rep.returns));
  if (!rep.rtg_trace.empty()) {
    std::vector<double> xs;
    for (std::size_t t = 0; t < rep.rtg_trace[0].size(); ++t) xs.push_back(static_cast<double>(t));
    run.write_text("rtg.svg", eval::svg_line_chart("running return-to-go, episode 0", "t", "rtg", xs, rep.rtg_trace[0]));
  }
  run.finish();
  std::printf("%s%d episodes  mean return %+.4f +/- %.4f  normalized %.2f\n", a.oracle ? "oracle: " : "",
              rep.n_episodes, rep.mean_return, rep.std_return, rep.normalized);
  std::printf("wrote %s\n", run.path().c_str());
  return 0;
}

// ---- ablate ----

struct AblateArgs {
  std::string config;
  std::string axis;
  std::string out = "runs";
  std::vector<std::string> levels;
  std::vector<std::uint64_t> seeds;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
};

int ablate_cmd(const AblateArgs& a) {
  eval::AblationAxis axis;
  try {
    axis = eval::parse_axis(a.axis);
  } catch (const eval::EvalError& e) {
    throw UsageError(e.what());
  }
  cli::RunDir run(a.out, "ablate-" + a.axis);
  auto cfg = load_config(a.config, &run);
  auto& spec = cfg.ablation;
  spec.axis = axis;
  if (!a.levels.empty()) spec.levels = a.levels;
  if (!a.seeds.empty()) spec.seeds = a.seeds;
  if (a.jobs) spec.jobs = *a.jobs;
  if (auto s = resolve_seed(a.seed)) spec.dataset_seed = *s;
  run.write_text("config.json", config::dump_run_config(cfg));

  const auto table = eval::run_ablation(spec, eval::train_and_evaluate, [](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  });
  eval::write_table_csv(table, run.file("table.csv"));
  run.write_text("table.json", eval::to_json(table).dump(2) + "\n");
  const auto md = eval::format_table(table);
  run.write_text("table.md", md);
  std::vector<std::string> labels;
  std::vector<double> means, stds;
  for (const auto& r : table.rows) {
    labels.push_back(r.level);
    means.push_back(r.failed ? NAN : r.mean);
    stds.push_back(r.failed ? 0.0 : r.std);
  }
  run.write_text("scores.svg",
                 eval::svg_bar_chart("normalized score by " + a.axis, "normalized score", labels, means, stds));
  run.finish();
  std::printf("%s", md.c_str());
  std::printf("wrote %s\n", run.path().c_str());
  for (const auto& r : table.rows) {
    if (r.failed) return kExitRuntime;
  }
  return 0;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string inject_fault;
};

int gradcheck_cmd(const GradcheckArgs& a) {
  if (!a.inject_fault.empty()) numeric::testing::inject_gradient_fault(a.inject_fault.c_str(), 1.1);
  const auto rep = verify::run_gradcheck_suite(a.seed);
  std::printf("%-28s %-14s %s\n", "component", "worst rel err", "at");
  for (const auto& c : rep.components) {
    std::printf("%-28s %-14.3e %s%s\n", c.name.c_str(), c.worst, c.worst_parameter.c_str(),
                c.worst < rep.threshold ? "" : "  <-- FAIL");
  }
  std::printf("%.1f s, threshold %.0e\n", rep.seconds, rep.threshold);
  if (!rep.passed()) {
    const auto& w = rep.worst();
    std::fprintf(stderr, "gradcheck FAILED: worst parameter %s in %s (relative error %.3e)\n",
                 w.worst_parameter.c_str(), w.name.c_str(), w.worst);
    return kExitRuntime;
  }
  std::printf("gradcheck passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Return-conditioned transformer with memory, trained offline on Catch"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Generate offline datasets, one file per tier");
  c_gen->add_option("--config", gd.config, "Run config (JSON)")->check(CLI::ExistingFile);
  c_gen->add_option("--out", gd.out, "Parent directory for the run directory")->required();
  c_gen->add_option("--seed", gd.seed, "Dataset seed (default: RTGFORMER_SEED, then config)");
  c_gen->add_option("--episodes", gd.episodes, "Episodes per tier");

  TrainArgs ta;
  auto* c_train = app.add_subcommand("train", "Train a model on a dataset");
  c_train->add_option("--config", ta.config, "Run config (JSON)")->check(CLI::ExistingFile);
  c_train->add_option("--data", ta.data, "Dataset file from gen-data")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", ta.out, "Parent directory for the run directory")->required();
  c_train->add_option("--resume", ta.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  c_train->add_option("--rtg-mode", ta.rtg_mode, "condition or linear")->check(CLI::IsMember({"condition", "linear"}));
  c_train->add_option("--seed", ta.seed, "Training seed (default: RTGFORMER_SEED, then config)");
  c_train->add_option("--steps", ta.steps, "Total optimizer steps");
  c_train->add_option("--checkpoint-every", ta.checkpoint_every, "Steps between checkpoints (0: only at the end)");
  c_train->add_option("--stop-after", ta.stop_after, "Stop after this many total steps, leaving a resumable run");
  c_train->add_flag("--quiet", ta.quiet, "Only print the summary");

  EvalArgs ea;
  auto* c_eval = app.add_subcommand("eval", "Roll out a checkpoint in the environment");
  c_eval->add_option("--config", ea.config, "Run config (JSON); only the rollout section is used")
      ->check(CLI::ExistingFile);
  c_eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint from train")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--episodes", ea.episodes, "Evaluation episodes (default: config, else 10)")
      ->check(CLI::PositiveNumber);
  c_eval->add_option("--seed", ea.seed, "Evaluation seed (default: RTGFORMER_SEED, then config)");
  c_eval->add_flag("--oracle", ea.oracle, "Replace the model with the expert stub");
  c_eval->add_option("--query-mode", ea.query_mode, "rtg_only or masked_state")
      ->check(CLI::IsMember({"rtg_only", "masked_state"}));
  c_eval->add_option("--first-step", ea.first_step, "First action rule: " + eval::valid_first_steps())
      ->check(CLI::IsMember({"noop", "masked_query", "inverse_dynamics", "consistency"}));
  c_eval->add_option("--target-return", ea.target_return, "Initial return-to-go (default: dataset expert mean)");
  c_eval->add_option("--out", ea.out, "Parent directory for the run directory")->capture_default_str();

  AblateArgs aa;
  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate every level of one axis over several seeds");
  c_ablate->add_option("--axis", aa.axis, "One of: " + eval::valid_axes())->required();
  c_ablate->add_option("--config", aa.config, "Run config (JSON)")->check(CLI::ExistingFile);
  c_ablate->add_option("--levels", aa.levels, "Override the axis levels")->delimiter(',');
  c_ablate->add_option("--seeds", aa.seeds, "Override the training seeds")->delimiter(',');
  c_ablate->add_option("--jobs", aa.jobs, "Parallel training runs")->check(CLI::PositiveNumber);
  c_ablate->add_option("--seed", aa.seed, "Dataset seed (default: RTGFORMER_SEED, then config)");
  c_ablate->add_option("--out", aa.out, "Parent directory for the run directory")->capture_default_str();

  GradcheckArgs ga;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient in float64");
  c_grad->add_option("--seed", ga.seed, "Seed for the random instances")->capture_default_str();
  c_grad->add_option("--inject-fault", ga.inject_fault, "Corrupt the backward rule of an op")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_gen) return gen_data(gd);
    if (*c_train) return train_cmd(ta);
    if (*c_eval) return eval_cmd(ea);
    if (*c_ablate) return ablate_cmd(aa);
    if (*c_grad) return gradcheck_cmd(ga);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

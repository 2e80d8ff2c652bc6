// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.
//
//   acceptance [--only 1,2,5] [--report <file.md>]
//
// Criteria 7 and 8 train real models and take most of the runtime.

#include <time.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rtgformer/config.hpp"
#include "rtgformer/eval.hpp"
#include "rtgformer/model.hpp"
#include "rtgformer/train.hpp"
#include "rtgformer/trajectory.hpp"
#include "rtgformer/verify.hpp"
#include "support/reference_transformer.hpp"

using namespace rtgf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

std::string metrics_text(const std::vector<train::MetricRow>& rows) {
  std::string s;
  for (const auto& r : rows) s += train::format_metric(r) + "\n";
  return s;
}

std::vector<double> normals(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

void perturb(model::ModelParams& p, std::mt19937_64& rng, double sd) {
  for (auto& prm : p.list()) {
    auto v = prm.tensor.data_mut();
    const auto noise = normals(rng, v.size(), sd);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
  }
}

void zero(numeric::Tensor& t) {
  for (auto& x : t.data_mut()) x = 0.0;
}

std::string report;  // markdown appended by criteria 7 and 8

// ---- 1 ----

Outcome gradient_oracle() {
  const double t0 = cpu_seconds();
  const auto rep = verify::run_gradcheck_suite(0);
  const double cpu = cpu_seconds() - t0;
  const auto& w = rep.worst();
  std::size_t checked = 0;
  for (const auto& c : rep.components) checked += c.checked;
  return {rep.passed() && cpu < 120.0,
          fmt("%zu components, %zu gradient entries, worst %.2e at %s in %s, %.1f s CPU", rep.components.size(),
              checked, w.worst, w.worst_parameter.c_str(), w.name.c_str(), cpu)};
}

// ---- 2 ----

Outcome stop_gradient_law() {
  const auto rep = verify::check_stop_gradient_law(20, 0);
  const bool ok = rep.instances.size() == 20 && rep.max_autodiff_through_cache == 0.0 && rep.max_fd_gap < 1e-8 &&
                  rep.min_cache_sensitivity > 0.0;
  return {ok, fmt("%zu instances: autodiff through cache max %.1e, |autodiff - FD(frozen cache)| max %.2e, "
                  "cache sensitivity min %.2e",
                  rep.instances.size(), rep.max_autodiff_through_cache, rep.max_fd_gap, rep.min_cache_sensitivity)};
}

// ---- 3 ----

Outcome reduction_identity() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  int inputs = 0;
  for (int i = 0; i < 100; ++i, ++inputs) {
    model::ModelConfig cc;
    cc.d_model = 16;
    cc.n_heads = 1 + i % 2;
    cc.n_layers = 2;
    cc.context_len = 6;
    cc.memory_segments = 0;
    cc.rtg_mode = model::RtgMode::condition;
    auto cl = cc;
    cl.rtg_mode = model::RtgMode::linear;

    auto pc = model::init_params(cc, static_cast<std::uint64_t>(i));
    perturb(pc, rng, 0.3);
    for (auto& l : pc.layers) {
      zero(l.rtg_k);
      zero(l.rtg_v);
    }
    auto pl = model::clone(pc);
    for (auto& l : pl.layers) l.rtg_k = l.rtg_v = numeric::Tensor();
    pl.rtg_pe = model::init_params(cl, 0).rtg_pe;
    zero(pl.rtg_pe);

    const std::size_t L = 1 + static_cast<std::size_t>(i % 6);
    auto in = model::make_input(1, L, normals(rng, L * 16), normals(rng, L, 2.0));
    const auto a = model::forward(pc, cc, in).predictions;
    const auto b = model::forward(pl, cl, in).predictions;
    testsupport::Matrix x(L, std::vector<double>(16));
    for (std::size_t r = 0; r < L; ++r) {
      for (std::size_t c = 0; c < 16; ++c) x[r][c] = in.steps.at(r, c);
    }
    const auto ref = testsupport::vanilla_forward(pc, cc, x);
    for (std::size_t r = 0; r < L; ++r) {
      for (std::size_t c = 0; c < 16; ++c) {
        worst = std::max({worst, std::abs(a.at(r, c) - ref[r][c]), std::abs(b.at(r, c) - ref[r][c]),
                          std::abs(a.at(r, c) - b.at(r, c))});
      }
    }
  }
  return {worst < 1e-12, fmt("%d random inputs (1-2 heads, lengths 1-6, nonzero RTG): max pairwise |diff| %.2e",
                             inputs, worst)};
}

// ---- 4 ----

Outcome causality() {
  std::mt19937_64 rng(4);
  int violations = 0, unchanged_at_target = 0;
  for (int trial = 0; trial < 100; ++trial) {
    model::ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 1 + trial % 2;
    cfg.n_layers = 2;
    cfg.context_len = 6;
    cfg.rtg_mode = trial % 4 < 2 ? model::RtgMode::condition : model::RtgMode::linear;
    cfg.memory_segments = trial % 3 == 0 ? 2 : 0;
    auto p = model::init_params(cfg, static_cast<std::uint64_t>(trial));
    perturb(p, rng, 0.3);

    model::MemoryCache cache(static_cast<std::size_t>(cfg.memory_segments), 2);
    if (cfg.memory_segments > 0) {
      for (int s = 0; s < 2; ++s) model::forward(p, cfg, model::make_input(1, 6, normals(rng, 96), normals(rng, 6)), &cache);
    }
    model::ForwardOptions keep;
    keep.update_cache = false;
    auto* mem = cfg.memory_segments > 0 ? &cache : nullptr;

    const auto steps = normals(rng, 96);
    const auto rtg = normals(rng, 6);
    const auto base = model::forward(p, cfg, model::make_input(1, 6, steps, rtg), mem, keep).predictions;
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
    auto s2 = steps;
    auto r2 = rtg;
    const auto kind = trial % 3;  // step token, return-to-go, or both
    if (kind != 1) {
      const auto noise = normals(rng, 16, 5.0);
      for (std::size_t c = 0; c < 16; ++c) s2[j * 16 + c] += noise[c];
    }
    if (kind != 0) r2[j] += normals(rng, 1, 5.0)[0];
    const auto moved = model::forward(p, cfg, model::make_input(1, 6, s2, r2), mem, keep).predictions;
    for (std::size_t i = 0; i < j; ++i) {
      for (std::size_t c = 0; c < 16; ++c) violations += moved.at(i, c) != base.at(i, c) ? 1 : 0;
    }
    bool changed = false;
    for (std::size_t c = 0; c < 16; ++c) changed = changed || moved.at(j, c) != base.at(j, c);
    unchanged_at_target += changed ? 0 : 1;
  }
  return {violations == 0 && unchanged_at_target == 0,
          fmt("100 trials (both modes, M in {0,2}): %d earlier entries changed; %d perturbations had no effect at "
              "their own position",
              violations, unchanged_at_target)};
}

// ---- 5 ----

Outcome returns_to_go() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(1, 40), val(-1, 1);
  std::uniform_int_distribution<int> ticks(-4096, 4096);
  std::size_t bad = 0, pairs = 0;
  for (int s = 0; s < 1000; ++s) {
    std::vector<double> r(static_cast<std::size_t>(len(rng)));
    // Half Catch rewards, half multiples of 1/1024 in [-4, 4]; both sum exactly.
    for (auto& x : r) x = s % 2 == 0 ? val(rng) : ticks(rng) / 1024.0;
    const auto g = trajectory::compute_rtg(r);
    if (g.size() != r.size() || g.back() != r.back()) ++bad;
    for (std::size_t i = 0; i + 1 < r.size(); ++i, ++pairs) bad += g[i] - g[i + 1] == r[i] ? 0 : 1;
  }
  const std::vector<double> fixed{1.0, 0.0, 2.0};
  const bool example = trajectory::compute_rtg(fixed) == std::vector<double>{3.0, 2.0, 2.0};
  return {bad == 0 && example,
          fmt("1000 sequences, %zu adjacent pairs, %zu mismatches; rtg([1,0,2]) = [3,2,2]: %s", pairs, bad,
              example ? "yes" : "no")};
}

// ---- 6 ----

Outcome harness_oracle() {
  int runs = 0, below = 0;
  double lowest = 1e9;
  for (int height : {7, 13}) {
    envdata::CatchConfig env;
    env.grid_height = height;
    const auto ref_random = envdata::reference_return(env, envdata::Policy::random, 0, envdata::kReferenceEpisodes);
    const auto ref_expert = envdata::reference_return(env, envdata::Policy::expert, 0, envdata::kReferenceEpisodes);
    const auto enc = encoder::build_encoder(env, 0, 16, 16);
    for (auto variant : envdata::kAllVariants) {
      for (std::uint64_t seed = 0; seed < 10; ++seed, ++runs) {
        eval::OraclePredictor oracle(enc, variant);
        eval::RolloutConfig rc;
        rc.n_episodes = 100;
        rc.seed = seed;
        rc.variant = variant;
        const auto rep = eval::rollout(oracle, enc, env, rc, ref_random, ref_expert);
        lowest = std::min(lowest, rep.normalized);
        below += rep.normalized == 100.0 ? 0 : 1;
      }
    }
  }
  // Identities on the 7x7 reference returns and on dyadic values.
  envdata::CatchConfig env;
  const auto r = envdata::reference_return(env, envdata::Policy::random, 0, envdata::kReferenceEpisodes);
  const auto e = envdata::reference_return(env, envdata::Policy::expert, 0, envdata::kReferenceEpisodes);
  bool ids = eval::normalized_score(e, r, e) == 100.0 && eval::normalized_score(r, r, e) == 0.0 &&
             eval::normalized_score(0.25, -0.5, 1.0) == 50.0 && eval::normalized_score(1.0, -1.0, 1.0) == 100.0 &&
             eval::normalized_score(0.0, -1.0, 1.0) == 50.0;
  const double mid = eval::normalized_score(0.5 * (r + e), r, e);
  ids = ids && mid == 50.0;
  return {below == 0 && ids,
          fmt("expert stub: %d rollouts (2 grids x 3 variants x 10 seeds x 100 episodes), lowest %.2f; identities "
              "expert->100, random->0, midpoint->%.17g on random %.4f / expert %.4f",
              runs, lowest, mid, r, e)};
}

// ---- 7 and 10 ----

struct LearningRun {
  std::uint64_t seed = 0;
  double normalized = 0.0;
  double cpu = 0.0;
  double first_loss = 0.0, last_loss = 0.0;
  std::string enc_fresh, enc_start, enc_end, enc_ckpt;
};

std::vector<LearningRun> learning_runs;

void run_learning() {
  if (!learning_runs.empty()) return;
  const envdata::CatchConfig env;
  const auto data = envdata::generate_dataset(env, envdata::Policy::expert, 5000, 0);
  const auto info = train::describe_dataset(data, "expert.json", "");
  for (std::uint64_t seed : {0, 1, 2}) {
    train::TrainConfig cfg;  // d 128, 1 head, 6 layers, K 6, condition, 5000 steps
    cfg.model.memory_segments = 0;
    cfg.seed = seed;
    LearningRun run;
    run.seed = seed;
    run.enc_fresh = encoder::build_encoder(env, seed, cfg.action_width(), cfg.state_width()).digest();
    const double t0 = cpu_seconds();
    train::Trainer tr(cfg, data, info);
    run.enc_start = tr.encoder().digest();
    tr.run();
    run.enc_end = tr.encoder().digest();
    run.enc_ckpt = encoder::Encoder(train::parse_checkpoint(train::serialize_checkpoint(tr.checkpoint())).encoder).digest();
    eval::RolloutConfig rc;
    rc.n_episodes = 100;
    rc.seed = seed;
    eval::ModelPredictor p(tr.params(), cfg.model);
    const auto rep = eval::rollout(p, tr.encoder(), env, rc, data.random_return, data.expert_return);
    run.cpu = cpu_seconds() - t0;
    run.normalized = rep.normalized;
    run.first_loss = tr.metrics().front().loss;
    run.last_loss = tr.metrics().back().loss;
    std::printf("  seed %llu: normalized %.1f, loss %.4g -> %.4g, %.0f s CPU\n", static_cast<unsigned long long>(seed),
                run.normalized, run.first_loss, run.last_loss, run.cpu);
    std::fflush(stdout);
    learning_runs.push_back(run);
  }
  report += "## Learning at desk scale\n\n| seed | normalized | initial loss | final loss | CPU s |\n|---|---|---|---|---|\n";
  for (const auto& r : learning_runs) {
    report += fmt("| %llu | %.1f | %.4g | %.4g | %.0f |\n", static_cast<unsigned long long>(r.seed), r.normalized,
                  r.first_loss, r.last_loss, r.cpu);
  }
  report += "\n";
}

Outcome learning() {
  run_learning();
  bool ok = learning_runs.size() == 3;
  std::string scores;
  for (const auto& r : learning_runs) {
    ok = ok && r.normalized >= 80.0 && r.cpu <= 1800.0;
    scores += fmt("%s%.1f (%.0f s)", scores.empty() ? "" : ", ", r.normalized, r.cpu);
  }
  return {ok, "normalized score per seed over 100 episodes: " + scores + "; need >= 80 and <= 1800 s CPU each"};
}

Outcome freeze_contract() {
  run_learning();
  bool ok = learning_runs.size() == 3;
  for (const auto& r : learning_runs) {
    ok = ok && r.enc_fresh == r.enc_start && r.enc_start == r.enc_end && r.enc_end == r.enc_ckpt;
  }
  const auto& r0 = learning_runs.front();
  return {ok, fmt("3 runs: encoder digest unchanged from construction through training and checkpoint (seed 0: "
                  "%.16s...)",
                  r0.enc_end.c_str())};
}

// ---- 8 ----

Outcome ablation_parity() {
  const config::RunConfig defaults;
  struct Expect {
    eval::AblationAxis axis;
    std::size_t rows;
  };
  const std::vector<Expect> axes{{eval::AblationAxis::rtg_mode, 2},
                                 {eval::AblationAxis::memory, 2},
                                 {eval::AblationAxis::prompt_variant, 3},
                                 {eval::AblationAxis::model_size, 3},
                                 {eval::AblationAxis::trajectory_length, 3}};
  bool ok = true;
  std::string detail;
  report += "## Ablations (mean +/- population std over 3 seeds)\n\n";
  for (const auto& [axis, rows] : axes) {
    auto spec = defaults.ablation;
    spec.axis = axis;
    const double t0 = cpu_seconds();
    const auto table = eval::run_ablation(spec, eval::train_and_evaluate, [](const std::string& line) {
      std::printf("  %s\n", line.c_str());
      std::fflush(stdout);
    });
    const double cpu = cpu_seconds() - t0;
    bool axis_ok = table.rows.size() == rows;
    double low = 1e9;
    for (const auto& r : table.rows) {
      axis_ok = axis_ok && !r.failed && r.seeds.size() == 3 && r.mean >= 60.0;
      low = std::min(low, r.mean);
    }
    if (axis == eval::AblationAxis::memory && table.rows.size() == 2) {
      const auto& off = table.rows[0];
      const auto& on = table.rows[1];
      bool engaged = on.level != "0" && on.cache_uses > 0 && off.cache_uses == 0;
      for (const auto& s : on.seeds) engaged = engaged && s.eval_cache_uses > 0;
      axis_ok = axis_ok && engaged;
      detail += fmt("%smemory cache uses %llu/%llu", detail.empty() ? "" : "; ",
                    static_cast<unsigned long long>(off.cache_uses), static_cast<unsigned long long>(on.cache_uses));
      detail += fmt(", lowest level %.1f", low);
    } else {
      detail += fmt("%s%s %zu rows, lowest level %.1f", detail.empty() ? "" : "; ", eval::to_string(axis).c_str(),
                    table.rows.size(), low);
    }
    ok = ok && axis_ok;
    report += "### " + eval::to_string(axis) + fmt(" (%.0f s CPU)\n\n", cpu) + eval::format_table(table) + "\n";
    std::printf("%s\n", eval::format_table(table).c_str());
    std::fflush(stdout);
  }
  return {ok, detail + "; need every level >= 60"};
}

// ---- 9 ----

Outcome determinism_and_resume() {
  const envdata::CatchConfig env;
  const auto data = envdata::generate_dataset(env, envdata::Policy::expert, 300, 9);
  const auto info = train::describe_dataset(data, "expert.json", "");
  int cases = 0, mismatches = 0;
  for (int memory : {0, 2}) {
    for (auto mode : {model::RtgMode::condition, model::RtgMode::linear}) {
      train::TrainConfig cfg;
      cfg.model.d_model = 32;
      cfg.model.n_layers = 2;
      cfg.model.context_len = 3;
      cfg.model.memory_segments = memory;
      cfg.model.rtg_mode = mode;
      cfg.steps = 120;
      cfg.warmup_steps = 10;
      cfg.eval_every = 40;
      cfg.seed = 21;
      const train::EvalHook hook = [&](const train::Trainer& t) {
        eval::ModelPredictor p(t.params(), t.config().model);
        eval::RolloutConfig rc;
        rc.n_episodes = 3;
        return eval::rollout(p, t.encoder(), env, rc, data.random_return, data.expert_return).normalized;
      };
      train::Trainer a(cfg, data, info), b(cfg, data, info), c(cfg, data, info);
      a.run({}, hook);
      b.run({}, hook);
      c.run({}, hook, 50);
      const auto bytes = train::serialize_checkpoint(c.checkpoint());
      train::Trainer resumed(train::parse_checkpoint(bytes), data);
      resumed.run({}, hook);
      ++cases;
      mismatches += metrics_text(a.metrics()) == metrics_text(b.metrics()) ? 0 : 1;
      mismatches += metrics_text(a.metrics()) == metrics_text(resumed.metrics()) ? 0 : 1;
      mismatches += train::serialize_checkpoint(a.checkpoint()) == train::serialize_checkpoint(resumed.checkpoint()) ? 0 : 1;
    }
  }
  return {mismatches == 0, fmt("%d configurations (M in {0,2} x both modes, eval hook on): %d mismatches between "
                               "repeat runs, resumed metric streams and final checkpoints",
                               cases, mismatches)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string report_path = "acceptance_report.md";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else if (a == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--report file.md]\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"stop-gradient law", stop_gradient_law},
      {"reduction identity", reduction_identity},
      {"causality", causality},
      {"returns-to-go", returns_to_go},
      {"harness oracle", harness_oracle},
      {"learning at desk scale", learning},
      {"ablation apparatus parity", ablation_parity},
      {"determinism and resume", determinism_and_resume},
      {"freeze contract", freeze_contract},
  };

  int failed = 0;
  std::string summary;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto& [name, fn] = criteria[i];
    std::printf("criterion %d (%s): running\n", n, name);
    std::fflush(stdout);
    const auto wall0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    const auto line = fmt("criterion %d %s: %s", n, o.pass ? "PASS" : "FAIL", name) + " -- " + o.detail +
                      fmt(" [%.1f s]", wall);
    std::printf("criterion %d finished\n", n);
    std::fflush(stdout);
    summary += line + "\n";
    failed += o.pass ? 0 : 1;
  }
  std::printf("\n%s", summary.c_str());
  std::fflush(stdout);
  if (!report.empty()) {
    std::ofstream(report_path) << "# Acceptance measurements\n\n" << report;
  }
  return failed == 0 ? 0 : 1;
}

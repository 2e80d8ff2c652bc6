#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "rtgformer/eval.hpp"

namespace rtgf::eval {

using Json = nlohmann::ordered_json;

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::rtg_mode: return "rtg_mode";
    case AblationAxis::memory: return "memory";
    case AblationAxis::prompt_variant: return "prompt_variant";
    case AblationAxis::model_size: return "model_size";
    case AblationAxis::trajectory_length: return "trajectory_length";
  }
  return "?";
}

std::string valid_axes() { return "rtg_mode, memory, prompt_variant, model_size, trajectory_length"; }

AblationAxis parse_axis(const std::string& name) {
  for (auto a : {AblationAxis::rtg_mode, AblationAxis::memory, AblationAxis::prompt_variant, AblationAxis::model_size,
                 AblationAxis::trajectory_length}) {
    if (to_string(a) == name) return a;
  }
  throw EvalError("unknown ablation axis '" + name + "'; valid axes: " + valid_axes());
}

std::vector<std::string> default_levels(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::rtg_mode: return {"condition", "linear"};
    case AblationAxis::memory: return {"0", "2"};
    case AblationAxis::prompt_variant: return {"original", "synonyms", "contextual"};
    case AblationAxis::model_size: return {"64", "128", "256"};
    case AblationAxis::trajectory_length: return {"6", "12", "24"};
  }
  return {};
}

namespace {

int parse_int_level(const std::string& level, AblationAxis axis) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(level, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != level.size() || v < 0) {
    throw EvalError("ablation level '" + level + "' is not a non-negative integer (axis " + to_string(axis) + ")");
  }
  return v;
}

std::vector<std::string> levels_of(const AblationSpec& spec) {
  return spec.levels.empty() ? default_levels(spec.axis) : spec.levels;
}

}  // namespace

envdata::CatchConfig axis_env(const AblationSpec& spec) {
  auto env = spec.env;
  if (spec.axis == AblationAxis::trajectory_length) {
    int longest = 0;
    for (const auto& l : levels_of(spec)) longest = std::max(longest, parse_int_level(l, spec.axis));
    env.grid_height = std::max(env.grid_height, longest + 1);
  }
  if (spec.axis == AblationAxis::memory) {
    // Episodes span two segments, so the memory level reads its cache.
    env.grid_height = std::max(env.grid_height, 2 * spec.base.model.context_len + 1);
  }
  env.validate();
  return env;
}

train::TrainConfig level_config(const AblationSpec& spec, const std::string& level) {
  auto cfg = spec.base;
  switch (spec.axis) {
    case AblationAxis::rtg_mode: cfg.model.rtg_mode = model::parse_rtg_mode(level); break;
    case AblationAxis::memory: cfg.model.memory_segments = parse_int_level(level, spec.axis); break;
    case AblationAxis::prompt_variant: cfg.variant = envdata::parse_variant(level); break;
    case AblationAxis::model_size:
      cfg.model.d_model = parse_int_level(level, spec.axis);
      cfg.d_action = 0;
      break;
    case AblationAxis::trajectory_length:
      cfg.model.context_len = parse_int_level(level, spec.axis);
      cfg.model.max_position = 0;
      break;
  }
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw EvalError("ablation level '" + level + "': " + e.what());
  }
  return cfg;
}

SeedResult train_and_evaluate(const train::TrainConfig& base, const envdata::OfflineDataset& data,
                              const RolloutConfig& rollout_cfg, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto cfg = base;
    cfg.seed = seed;
    cfg.checkpoint_path.clear();
    train::Trainer trainer(cfg, data, train::describe_dataset(data, cfg.dataset_path, ""));
    trainer.run();
    r.final_loss = trainer.metrics().empty() ? 0.0 : trainer.metrics().back().loss;
    r.train_cache_uses = trainer.cache_uses();
    auto rc = rollout_cfg;
    rc.variant = cfg.variant;
    ModelPredictor predictor(trainer.params(), cfg.model);
    const auto rep = rollout(predictor, trainer.encoder(), data.env, rc, data.random_return, data.expert_return);
    r.normalized = rep.normalized;
    r.mean_return = rep.mean_return;
    r.eval_cache_uses = rep.cache_uses;
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

AblationTable run_ablation(const AblationSpec& spec, const LevelRunner& runner,
                           const std::function<void(const std::string&)>& log) {
  if (spec.seeds.empty()) throw EvalError("ablation: at least one seed is required");
  spec.rollout.validate();
  const auto env = axis_env(spec);
  const auto levels = levels_of(spec);
  std::vector<train::TrainConfig> configs;
  for (const auto& l : levels) configs.push_back(level_config(spec, l));

  const auto data = envdata::generate_dataset(env, spec.dataset_policy, spec.dataset_episodes, spec.dataset_seed);

  AblationTable table;
  table.axis = spec.axis;
  table.rows.resize(levels.size());
  struct Task {
    std::size_t level;
    std::size_t seed_index;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    table.rows[i].level = levels[i];
    table.rows[i].parameters = model::init_params(configs[i].model, 0).count();
    table.rows[i].seeds.resize(spec.seeds.size());
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) tasks.push_back({i, s});
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const auto k = next.fetch_add(1);
      if (k >= tasks.size()) return;
      const auto& task = tasks[k];
      const auto seed = spec.seeds[task.seed_index];
      auto res = runner(configs[task.level], data, spec.rollout, seed);
      std::lock_guard<std::mutex> lock(mu);
      table.rows[task.level].seeds[task.seed_index] = res;
      if (log) {
        char buf[256];
        if (res.ok) {
          std::snprintf(buf, sizeof buf, "%s=%s seed %llu: normalized %.1f (%.0fs)", to_string(spec.axis).c_str(),
                        levels[task.level].c_str(), static_cast<unsigned long long>(seed), res.normalized,
                        res.seconds);
        } else {
          std::snprintf(buf, sizeof buf, "%s=%s seed %llu: FAILED: %s", to_string(spec.axis).c_str(),
                        levels[task.level].c_str(), static_cast<unsigned long long>(seed), res.error.c_str());
        }
        log(buf);
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(spec.jobs, static_cast<int>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (auto& row : table.rows) {
    std::vector<double> scores;
    for (const auto& s : row.seeds) {
      if (!s.ok) row.failed = true;
      scores.push_back(s.normalized);
      row.cache_uses += s.train_cache_uses + s.eval_cache_uses;
    }
    if (row.failed) continue;
    double mean = 0.0;
    for (double x : scores) mean += x;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double x : scores) var += (x - mean) * (x - mean);
    row.mean = mean;
    row.std = std::sqrt(var / static_cast<double>(scores.size()));
  }
  return table;
}

std::string format_table(const AblationTable& t) {
  std::string out = "| " + to_string(t.axis) + " | parameters | normalized score | per-seed | cache uses |\n";
  out += "|---|---|---|---|---|\n";
  char buf[128];
  for (const auto& r : t.rows) {
    std::string per;
    for (const auto& s : r.seeds) {
      if (!per.empty()) per += " / ";
      if (s.ok) {
        std::snprintf(buf, sizeof buf, "%.1f", s.normalized);
        per += buf;
      } else {
        per += "failed";
      }
    }
    if (r.failed) {
      std::snprintf(buf, sizeof buf, "failed");
    } else {
      std::snprintf(buf, sizeof buf, "%.1f ± %.1f", r.mean, r.std);
    }
    out += "| " + r.level + " | " + std::to_string(r.parameters) + " | " + buf + " | " + per + " | " +
           std::to_string(r.cache_uses) + " |\n";
  }
  return out;
}

void write_table_csv(const AblationTable& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write " + path.string());
  out << "axis,level,parameters,status,mean,std,cache_uses";
  const std::size_t n_seeds = t.rows.empty() ? 0 : t.rows.front().seeds.size();
  for (std::size_t i = 0; i < n_seeds; ++i) out << ",seed" << i;
  out << '\n';
  char buf[64];
  for (const auto& r : t.rows) {
    out << to_string(t.axis) << ',' << r.level << ',' << r.parameters << ',' << (r.failed ? "failed" : "ok") << ',';
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.mean, r.std);
    out << buf << ',' << r.cache_uses;
    for (const auto& s : r.seeds) {
      std::snprintf(buf, sizeof buf, "%.17g", s.normalized);
      out << ',' << (s.ok ? buf : "");
    }
    out << '\n';
  }
}

Json to_json(const AblationTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    Json seeds = Json::array();
    for (const auto& s : r.seeds) {
      seeds.push_back(Json{{"seed", s.seed},
                           {"ok", s.ok},
                           {"error", s.error},
                           {"normalized_score", s.normalized},
                           {"mean_return", s.mean_return},
                           {"final_loss", s.final_loss},
                           {"train_cache_uses", s.train_cache_uses},
                           {"eval_cache_uses", s.eval_cache_uses},
                           {"seconds", s.seconds}});
    }
    rows.push_back(Json{{"level", r.level},
                        {"parameters", r.parameters},
                        {"failed", r.failed},
                        {"mean", r.mean},
                        {"std", r.std},
                        {"cache_uses", r.cache_uses},
                        {"seeds", seeds}});
  }
  return Json{{"format", "rtgformer-ablation"}, {"axis", to_string(t.axis)}, {"rows", rows}};
}

}  // namespace rtgf::eval

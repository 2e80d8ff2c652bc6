#include "rtgformer/config.hpp"

#include <fstream>
#include <sstream>

namespace rtgf::config {

using Json = nlohmann::ordered_json;

namespace {

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read_key(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Json train_section(const train::TrainConfig& t) {
  auto j = train::to_json(t);
  j.erase("model");
  j.erase("d_action");
  return j;
}

// Rebuilds a TrainConfig from split train / model / encoder blocks on top of base.
train::TrainConfig merge_train(const train::TrainConfig& base, const Json* train_j, const Json* model_j,
                               const Json* encoder_j) {
  auto merged = train::to_json(base);
  if (train_j) {
    if (!train_j->is_object()) throw ConfigError("train: expected an object");
    for (const auto& [k, v] : train_j->items()) {
      if (k == "model" || k == "d_action") throw ConfigError("train: unknown key '" + k + "'");
      merged[k] = v;
    }
  }
  if (model_j) {
    if (!model_j->is_object()) throw ConfigError("model: expected an object");
    for (const auto& [k, v] : model_j->items()) merged["model"][k] = v;
  }
  if (encoder_j) {
    reject_unknown(*encoder_j, {"d_action"}, "encoder");
    if (encoder_j->contains("d_action")) merged["d_action"] = encoder_j->at("d_action");
  }
  return train::train_config_from_json(merged);
}

Json rollout_section(const eval::RolloutConfig& r) {
  return Json{{"target_return", r.target_return ? Json(*r.target_return) : Json(nullptr)},
              {"episodes", r.n_episodes},
              {"seed", r.seed},
              {"query_mode", eval::to_string(r.query_mode)},
              {"first_step", eval::to_string(r.first_step)},
              {"step_cap", r.step_cap}};
}

eval::RolloutConfig parse_rollout(const Json& j, eval::RolloutConfig r) {
  reject_unknown(j, {"target_return", "episodes", "seed", "query_mode", "first_step", "step_cap"}, "rollout");
  if (j.contains("target_return")) {
    if (j.at("target_return").is_null()) {
      r.target_return.reset();
    } else {
      r.target_return = j.at("target_return").get<double>();
    }
  }
  read_key(j, "episodes", r.n_episodes);
  read_key(j, "seed", r.seed);
  if (j.contains("query_mode")) r.query_mode = eval::parse_query_mode(j.at("query_mode").get<std::string>());
  if (j.contains("first_step")) r.first_step = eval::parse_first_step(j.at("first_step").get<std::string>());
  read_key(j, "step_cap", r.step_cap);
  return r;
}

}  // namespace

train::TrainConfig default_ablation_base() {
  train::TrainConfig t;
  t.model.d_model = 64;
  t.model.n_layers = 2;
  t.steps = 1500;
  t.warmup_steps = 150;
  t.lr_peak = 1e-3;
  return t;
}

RunConfig::RunConfig() {
  ablation.base = default_ablation_base();
  ablation.rollout.n_episodes = 100;
}

Json to_json(const RunConfig& c) {
  Json tiers = Json::array();
  for (auto p : c.data.tiers) tiers.push_back(envdata::to_string(p));
  auto ab_train = train_section(c.ablation.base);
  ab_train["d_action"] = c.ablation.base.d_action;
  return Json{
      {"env", train::to_json(c.env)},
      {"data", Json{{"tiers", tiers}, {"episodes", c.data.episodes}, {"seed", c.data.seed}}},
      {"encoder", Json{{"d_action", c.train.d_action}}},
      {"model", train::to_json(c.train.model)},
      {"train", train_section(c.train)},
      {"rollout", rollout_section(c.rollout)},
      {"ablation", Json{{"axis", eval::to_string(c.ablation.axis)},
                        {"levels", c.ablation.levels},
                        {"seeds", c.ablation.seeds},
                        {"dataset_episodes", c.ablation.dataset_episodes},
                        {"dataset_policy", envdata::to_string(c.ablation.dataset_policy)},
                        {"dataset_seed", c.ablation.dataset_seed},
                        {"eval_episodes", c.ablation.rollout.n_episodes},
                        {"jobs", c.ablation.jobs},
                        {"model", train::to_json(c.ablation.base.model)},
                        {"train", ab_train}}}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"env", "data", "encoder", "model", "train", "rollout", "ablation"}, "config");
    if (j.contains("env")) c.env = train::catch_config_from_json(j.at("env"));
    c.env.validate();

    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, {"tiers", "episodes", "seed"}, "data");
      if (d.contains("tiers")) {
        c.data.tiers.clear();
        for (const auto& t : d.at("tiers")) c.data.tiers.push_back(envdata::parse_policy(t.get<std::string>()));
        if (c.data.tiers.empty()) throw ConfigError("data: tiers must not be empty");
      }
      read_key(d, "episodes", c.data.episodes);
      read_key(d, "seed", c.data.seed);
      if (c.data.episodes == 0) throw ConfigError("data: episodes must be positive");
    }

    c.train = merge_train(c.train, j.contains("train") ? &j.at("train") : nullptr,
                          j.contains("model") ? &j.at("model") : nullptr,
                          j.contains("encoder") ? &j.at("encoder") : nullptr);
    c.train.validate();

    if (j.contains("rollout")) c.rollout = parse_rollout(j.at("rollout"), c.rollout);
    c.rollout.validate();

    auto& ab = c.ablation;
    ab.env = c.env;
    ab.rollout = c.rollout;
    ab.rollout.n_episodes = 100;
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      reject_unknown(a,
                     {"axis", "levels", "seeds", "dataset_episodes", "dataset_policy", "dataset_seed", "eval_episodes",
                      "jobs", "model", "train"},
                     "ablation");
      if (a.contains("axis")) ab.axis = eval::parse_axis(a.at("axis").get<std::string>());
      read_key(a, "levels", ab.levels);
      read_key(a, "seeds", ab.seeds);
      read_key(a, "dataset_episodes", ab.dataset_episodes);
      if (a.contains("dataset_policy")) ab.dataset_policy = envdata::parse_policy(a.at("dataset_policy").get<std::string>());
      read_key(a, "dataset_seed", ab.dataset_seed);
      read_key(a, "eval_episodes", ab.rollout.n_episodes);
      read_key(a, "jobs", ab.jobs);
      Json ab_train;
      Json ab_encoder;
      if (a.contains("train")) {
        ab_train = a.at("train");
        if (!ab_train.is_object()) throw ConfigError("ablation.train: expected an object");
        if (ab_train.contains("d_action")) {
          ab_encoder["d_action"] = ab_train.at("d_action");
          ab_train.erase("d_action");
        }
      }
      ab.base = merge_train(ab.base, a.contains("train") ? &ab_train : nullptr,
                            a.contains("model") ? &a.at("model") : nullptr, ab_encoder.is_null() ? nullptr : &ab_encoder);
      if (ab.seeds.empty()) throw ConfigError("ablation: seeds must not be empty");
      if (ab.jobs < 1) throw ConfigError("ablation: jobs must be >= 1");
      if (ab.dataset_episodes == 0) throw ConfigError("ablation: dataset_episodes must be positive");
    }
    ab.base.validate();
    ab.rollout.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

bool same(const RunConfig& a, const RunConfig& b) { return to_json(a).dump() == to_json(b).dump(); }

}  // namespace rtgf::config

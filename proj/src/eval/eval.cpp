#include "rtgformer/eval.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "rtgformer/numeric/tensor.hpp"
#include "rtgformer/seeding.hpp"

namespace rtgf::eval {

using Json = nlohmann::ordered_json;
using envdata::PromptVariant;

namespace {

std::vector<double> action_distances(std::span<const double> pred, const encoder::Encoder& enc, PromptVariant variant) {
  if (pred.size() != static_cast<std::size_t>(enc.d_action())) {
    throw EvalError("decode_action: prediction has " + std::to_string(pred.size()) + " entries, action half is " +
                    std::to_string(enc.d_action()));
  }
  for (double x : pred) {
    if (!std::isfinite(x)) throw EvalError("decode_action: non-finite prediction");
  }
  std::vector<double> dist;
  for (int a = 0; a < envdata::kNumActions; ++a) {
    const auto& e = enc.encode_action(a, variant);
    double d2 = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) d2 += (pred[k] - e[k]) * (pred[k] - e[k]);
    dist.push_back(d2);
  }
  if (dist.empty()) throw EvalError("decode_action: empty action catalog");
  return dist;
}

}  // namespace

int decode_action(std::span<const double> pred, const encoder::Encoder& enc, PromptVariant variant) {
  const auto dist = action_distances(pred, enc, variant);
  int best = 0;
  for (int a = 1; a < static_cast<int>(dist.size()); ++a) {
    if (dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(best)]) best = a;
  }
  return best;
}

double decode_gap(std::span<const double> pred, const encoder::Encoder& enc, PromptVariant variant) {
  auto dist = action_distances(pred, enc, variant);
  for (auto& d : dist) d = std::sqrt(d);
  std::sort(dist.begin(), dist.end());
  return dist.size() < 2 ? std::numeric_limits<double>::infinity() : dist[1] - dist[0];
}

double normalized_score(double mean_return, double random_return, double expert_return) {
  if (!(expert_return != random_return) || !std::isfinite(expert_return - random_return)) {
    throw EvalError("normalized_score: expert and random returns coincide (" + std::to_string(expert_return) + ")");
  }
  return 100.0 * (mean_return - random_return) / (expert_return - random_return);
}

std::string to_string(QueryMode mode) { return mode == QueryMode::rtg_only ? "rtg_only" : "masked_state"; }

QueryMode parse_query_mode(const std::string& name) {
  if (name == "rtg_only") return QueryMode::rtg_only;
  if (name == "masked_state") return QueryMode::masked_state;
  throw EvalError("unknown query mode '" + name + "' (expected rtg_only or masked_state)");
}

std::string to_string(FirstStep rule) {
  switch (rule) {
    case FirstStep::noop: return "noop";
    case FirstStep::masked_query: return "masked_query";
    case FirstStep::inverse_dynamics: return "inverse_dynamics";
    case FirstStep::consistency: return "consistency";
  }
  throw EvalError("unknown first-step rule");
}

std::string valid_first_steps() { return "noop, masked_query, inverse_dynamics, consistency"; }

FirstStep parse_first_step(const std::string& name) {
  if (name == "noop") return FirstStep::noop;
  if (name == "masked_query") return FirstStep::masked_query;
  if (name == "inverse_dynamics") return FirstStep::inverse_dynamics;
  if (name == "consistency") return FirstStep::consistency;
  throw EvalError("unknown first-step rule '" + name + "' (expected " + valid_first_steps() + ")");
}

void RolloutConfig::validate() const {
  if (n_episodes < 1) throw EvalError("rollout: n_episodes must be >= 1");
  if (step_cap < 0) throw EvalError("rollout: step_cap must be >= 0");
  if (target_return && !std::isfinite(*target_return)) throw EvalError("rollout: target_return must be finite");
}

// ---- predictors ----

ModelPredictor::ModelPredictor(const model::ModelParams& params, const model::ModelConfig& cfg)
    : params_(&params), cfg_(cfg),
      cache_(static_cast<std::size_t>(cfg.memory_segments), static_cast<std::size_t>(cfg.n_layers)) {}

void ModelPredictor::begin_episode() {
  uses_before_ += cache_.uses();
  cache_ = model::MemoryCache(static_cast<std::size_t>(cfg_.memory_segments), static_cast<std::size_t>(cfg_.n_layers));
  pushed_ = 0;
}

std::optional<std::vector<double>> ModelPredictor::predict(const StepView& view) {
  const auto w = static_cast<std::size_t>(cfg_.d_model);
  const auto K = static_cast<std::size_t>(cfg_.context_len);
  const bool with_query = !view.query.empty();
  const std::size_t n = view.t + (with_query ? 1 : 0);
  if (n == 0) return std::nullopt;
  if (view.history.size() != view.t * w || view.history_rtg.size() != view.t) {
    throw EvalError("model predictor: history width does not match d_model");
  }
  if (with_query && view.query.size() != w) throw EvalError("model predictor: query width does not match d_model");

  auto token = [&](std::size_t i) {
    return i < view.t ? view.history.subspan(i * w, w) : view.query;
  };
  auto token_rtg = [&](std::size_t i) { return i < view.t ? view.history_rtg[i] : view.current_rtg; };
  auto segment = [&](std::size_t begin, std::size_t end) {
    std::vector<double> steps;
    std::vector<double> rtg;
    for (std::size_t i = begin; i < end; ++i) {
      auto tok = token(i);
      steps.insert(steps.end(), tok.begin(), tok.end());
      rtg.push_back(token_rtg(i));
    }
    return model::make_input(1, end - begin, std::move(steps), std::move(rtg));
  };

  numeric::NoTape no_tape;
  model::ForwardResult out;
  if (cfg_.memory_segments == 0) {
    const std::size_t L = std::min(n, K);
    out = model::forward(*params_, cfg_, segment(n - L, n));
  } else {
    const std::size_t s = (n - 1) / K;
    while (pushed_ < s) {
      model::forward(*params_, cfg_, segment(pushed_ * K, (pushed_ + 1) * K), &cache_);
      ++pushed_;
    }
    model::ForwardOptions opts;
    opts.update_cache = false;
    out = model::forward(*params_, cfg_, segment(s * K, n), &cache_, opts);
  }
  const auto last = out.predictions.rows() - 1;
  auto data = out.predictions.data().subspan(last * w, w);
  return std::vector<double>(data.begin(), data.end());
}

OraclePredictor::OraclePredictor(const encoder::Encoder& enc, PromptVariant variant) : enc_(&enc), variant_(variant) {}

std::optional<std::vector<double>> OraclePredictor::predict(const StepView& view) {
  if (!view.env_state) throw EvalError("oracle predictor needs the environment state");
  const int action = envdata::expert_policy(*view.env_state);
  auto next = *view.env_state;
  return enc_->encode_step(action, envdata::step(next, action).image, variant_);
}

ConstantPredictor::ConstantPredictor(const encoder::Encoder& enc, PromptVariant variant, int action) {
  out_ = enc.encode_action(action, variant);
  out_.resize(static_cast<std::size_t>(enc.width()), 0.0);
}

std::optional<std::vector<double>> ConstantPredictor::predict(const StepView&) { return out_; }

// ---- rollout ----

std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode) {
  return derive_seed(seed, {stream::evaluation, episode});
}

namespace {

double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double half_sq_error(std::span<const double> pred, std::span<const double> truth) {
  double s = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) s += (pred[k] - truth[k]) * (pred[k] - truth[k]);
  return s / static_cast<double>(truth.size());
}

// Squared distance from a predicted state half to the encoding of each
// successor of state, indexed by action id.
std::array<double, envdata::kNumActions> successor_distances(std::span<const double> pred_state,
                                                             const envdata::CatchState& state,
                                                             const encoder::Encoder& enc) {
  std::array<double, envdata::kNumActions> d{};
  for (int a = 0; a < envdata::kNumActions; ++a) {
    auto next = state;
    const auto es = enc.encode_state(envdata::step(next, a).image);
    d[static_cast<std::size_t>(a)] = half_sq_error(pred_state, es);
  }
  return d;
}

// Second-smallest minus smallest.
double sorted_gap(std::array<double, envdata::kNumActions> d) {
  std::sort(d.begin(), d.end());
  return d[1] - d[0];
}

}  // namespace

EvalReport rollout(Predictor& predictor, const encoder::Encoder& enc, const envdata::CatchConfig& env,
                   const RolloutConfig& cfg, double random_return, double expert_return) {
  cfg.validate();
  if (env != enc.params().grid) throw EvalError("rollout: environment grid does not match the encoder");
  const auto w = static_cast<std::size_t>(enc.width());
  const auto da = static_cast<std::size_t>(enc.d_action());
  const int cap = cfg.step_cap > 0 ? cfg.step_cap : 4 * env.episode_length();

  EvalReport rep;
  rep.n_episodes = cfg.n_episodes;
  rep.seed = cfg.seed;
  rep.query_mode = cfg.query_mode;
  rep.first_step = cfg.first_step;
  rep.variant = cfg.variant;
  rep.random_return = random_return;
  rep.expert_return = expert_return;
  rep.target_return = cfg.target_return.value_or(expert_return);

  std::vector<double> gaps;
  std::vector<double> state_errors;
  for (int ep = 0; ep < cfg.n_episodes; ++ep) {
    auto state = envdata::reset(env, episode_seed(cfg.seed, static_cast<std::size_t>(ep)));
    predictor.begin_episode();
    std::vector<double> history;
    std::vector<double> history_rtg;
    std::vector<int> actions;
    std::vector<double> trace;
    double running = rep.target_return;
    double total = 0.0;
    bool failed = false;
    for (std::size_t t = 0; !state.done; ++t) {
      if (static_cast<int>(t) >= cap) {
        failed = true;
        break;
      }
      const auto img = state.image();
      const bool first = t == 0 && cfg.query_mode == QueryMode::rtg_only;
      const bool inverse = first && cfg.first_step == FirstStep::inverse_dynamics;
      const bool consistency = first && cfg.first_step == FirstStep::consistency;
      const bool masked = cfg.query_mode == QueryMode::masked_state || inverse ||
                          (t == 0 && cfg.first_step == FirstStep::masked_query);
      std::vector<double> query;
      if (masked) {
        query.assign(w, 0.0);
        const auto es = enc.encode_state(img);
        std::copy(es.begin(), es.end(), query.begin() + static_cast<std::ptrdiff_t>(da));
      }
      StepView view;
      view.t = t;
      view.history = history;
      view.history_rtg = history_rtg;
      view.current_rtg = running;
      view.query = query;
      view.env_state = &state;

      int action = envdata::kNoop;
      std::optional<std::vector<double>> pred;
      if (consistency) {
        std::array<double, envdata::kNumActions> d{};
        bool predicted = true;
        for (int a = 0; a < envdata::kNumActions && predicted; ++a) {
          const auto candidate = enc.encode_step(a, img, cfg.variant);
          view.query = candidate;
          const auto p = predictor.predict(view);
          predicted = p.has_value();
          if (!predicted) break;
          if (p->size() != w) throw EvalError("rollout: predictor returned the wrong width");
          auto next = state;
          d[static_cast<std::size_t>(a)] =
              half_sq_error(std::span<const double>(*p).subspan(da), enc.encode_state(envdata::step(next, a).image));
        }
        if (predicted) {
          action = static_cast<int>(std::min_element(d.begin(), d.end()) - d.begin());
          gaps.push_back(sorted_gap(d));
        } else {
          ++rep.defaulted_steps;
        }
      } else {
        pred = predictor.predict(view);
        if (pred) {
          if (pred->size() != w) throw EvalError("rollout: predictor returned the wrong width");
          const std::span<const double> p(*pred);
          if (inverse) {
            const auto d = successor_distances(p.subspan(da), state, enc);
            action = static_cast<int>(std::min_element(d.begin(), d.end()) - d.begin());
            gaps.push_back(sorted_gap(d));
          } else {
            action = decode_action(p.first(da), enc, cfg.variant);
            gaps.push_back(decode_gap(p.first(da), enc, cfg.variant));
          }
          if (!masked) state_errors.push_back(half_sq_error(p.subspan(da), enc.encode_state(img)));
        } else {
          ++rep.defaulted_steps;
        }
      }
      trace.push_back(running);
      const auto o = enc.encode_step(action, img, cfg.variant);
      history.insert(history.end(), o.begin(), o.end());
      history_rtg.push_back(running);
      actions.push_back(action);
      const auto res = envdata::step(state, action);
      if (pred && masked) state_errors.push_back(half_sq_error(std::span<const double>(*pred).subspan(da), enc.encode_state(res.image)));
      running -= res.reward;
      total += res.reward;
    }
    rep.returns.push_back(total);
    rep.failed.push_back(failed ? 1 : 0);
    rep.actions.push_back(std::move(actions));
    rep.rtg_trace.push_back(std::move(trace));
  }
  rep.mean_return = mean_of(rep.returns);
  rep.std_return = population_std(rep.returns);
  rep.normalized = normalized_score(rep.mean_return, random_return, expert_return);
  rep.decode_gap_min = gaps.empty() ? 0.0 : *std::min_element(gaps.begin(), gaps.end());
  rep.decode_gap_mean = mean_of(gaps);
  rep.state_error_mean = mean_of(state_errors);
  rep.cache_uses = predictor.cache_uses();
  return rep;
}

EvalReport rollout(const train::Checkpoint& ckpt, const envdata::CatchConfig& env, const RolloutConfig& cfg) {
  encoder::Encoder enc(ckpt.encoder);
  ModelPredictor predictor(ckpt.params, ckpt.config.model);
  return rollout(predictor, enc, env, cfg, ckpt.dataset.random_return, ckpt.dataset.expert_return);
}

Json to_json(const EvalReport& r) {
  Json eps = Json::array();
  for (std::size_t i = 0; i < r.returns.size(); ++i) {
    eps.push_back(Json{{"episode", i},
                       {"return", r.returns[i]},
                       {"failed", r.failed[i] != 0},
                       {"actions", r.actions[i]},
                       {"rtg", r.rtg_trace[i]}});
  }
  return Json{{"format", "rtgformer-eval"},
              {"n_episodes", r.n_episodes},
              {"seed", r.seed},
              {"query_mode", to_string(r.query_mode)},
              {"first_step", to_string(r.first_step)},
              {"prompt_variant", envdata::to_string(r.variant)},
              {"target_return", r.target_return},
              {"mean_return", r.mean_return},
              {"std_return", r.std_return},
              {"normalized_score", r.normalized},
              {"random_return", r.random_return},
              {"expert_return", r.expert_return},
              {"decode_gap_min", r.decode_gap_min},
              {"decode_gap_mean", r.decode_gap_mean},
              {"defaulted_steps", r.defaulted_steps},
              {"state_error_mean", r.state_error_mean},
              {"cache_uses", r.cache_uses},
              {"episodes", eps}};
}

void write_report(const EvalReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path) {
  std::ofstream js(json_path);
  if (!js) throw EvalError("cannot write " + json_path.string());
  js << to_json(report).dump(2) << '\n';
  std::ofstream csv(csv_path);
  if (!csv) throw EvalError("cannot write " + csv_path.string());
  csv << "episode,return,failed\n";
  char buf[96];
  for (std::size_t i = 0; i < report.returns.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%d\n", i, report.returns[i], report.failed[i] ? 1 : 0);
    csv << buf;
  }
}

}  // namespace rtgf::eval

#include "rtgformer/envdata/catch.hpp"

#include <algorithm>

namespace rtgf::envdata {

void CatchConfig::validate() const {
  if (grid_width < 3 || grid_height < 3) {
    throw EnvError("catch: grid must be at least 3x3, got " + std::to_string(grid_height) + "x" +
                   std::to_string(grid_width));
  }
}

StateImage CatchState::image() const {
  StateImage img;
  img.height = config.grid_height;
  img.width = config.grid_width;
  img.cells.assign(static_cast<std::size_t>(config.cells()), 0);
  img.cells[static_cast<std::size_t>(ball_row * config.grid_width + ball_col)] = 1;
  img.cells[static_cast<std::size_t>((config.grid_height - 1) * config.grid_width + paddle_col)] = 1;
  return img;
}

CatchState reset(const CatchConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> column(0, config.grid_width - 1);
  CatchState state;
  state.config = config;
  state.ball_row = 0;
  state.ball_col = column(rng);
  state.paddle_col = config.grid_width / 2;
  return state;
}

StepResult step(CatchState& state, int action_id) {
  if (action_id < 0 || action_id >= kNumActions) {
    throw EnvError("catch: action id " + std::to_string(action_id) + " is not in the catalog {0,1,2}");
  }
  if (state.done) throw EnvError("catch: step called on a finished episode");
  if (action_id == kLeft) state.paddle_col = std::max(0, state.paddle_col - 1);
  if (action_id == kRight) state.paddle_col = std::min(state.config.grid_width - 1, state.paddle_col + 1);
  state.ball_row += 1;

  StepResult out;
  if (state.ball_row == state.config.grid_height - 1) {
    state.done = true;
    out.done = true;
    out.reward = state.ball_col == state.paddle_col ? 1.0 : -1.0;
  }
  out.image = state.image();
  return out;
}

Positions locate(const StateImage& image) {
  Positions p{-1, -1, -1};
  const int bottom = image.height - 1;
  for (int c = 0; c < image.width; ++c) {
    if (image.at(bottom, c)) p.paddle_col = c;
  }
  for (int r = 0; r < bottom; ++r) {
    for (int c = 0; c < image.width; ++c) {
      if (image.at(r, c)) {
        p.ball_row = r;
        p.ball_col = c;
      }
    }
  }
  if (p.paddle_col < 0 || p.ball_col < 0) throw EnvError("catch: image has no live ball or paddle");
  return p;
}

namespace {
int steer(int ball_col, int paddle_col) {
  if (ball_col < paddle_col) return kLeft;
  if (ball_col > paddle_col) return kRight;
  return kNoop;
}
}  // namespace

int expert_policy(const CatchState& state) { return steer(state.ball_col, state.paddle_col); }

int expert_policy(const StateImage& image) {
  const auto p = locate(image);
  return steer(p.ball_col, p.paddle_col);
}

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::random: return "random";
    case Policy::medium: return "medium";
    case Policy::expert: return "expert";
    case Policy::medium_replay: return "medium_replay";
    case Policy::medium_expert: return "medium_expert";
  }
  return "unknown";
}

Policy parse_policy(const std::string& name) {
  for (auto p : {Policy::random, Policy::medium, Policy::expert, Policy::medium_replay, Policy::medium_expert}) {
    if (to_string(p) == name) return p;
  }
  throw EnvError("unknown policy '" + name + "' (expected random, medium, expert, medium_replay, medium_expert)");
}

int act(Policy policy, const CatchState& state, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> any_action(0, kNumActions - 1);
  switch (policy) {
    case Policy::random: return any_action(rng);
    case Policy::expert: return expert_policy(state);
    case Policy::medium: {
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      if (coin(rng) < kMediumEpsilon) return any_action(rng);
      return expert_policy(state);
    }
    default: throw EnvError("act: " + to_string(policy) + " is a dataset mixture, not a per-step policy");
  }
}

}  // namespace rtgf::envdata

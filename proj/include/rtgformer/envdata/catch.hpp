#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtgf::envdata {

class EnvError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kNoop = 0;
inline constexpr int kLeft = 1;
inline constexpr int kRight = 2;
inline constexpr int kNumActions = 3;

struct CatchConfig {
  int grid_width = 7;
  int grid_height = 7;

  void validate() const;
  int episode_length() const { return grid_height - 1; }
  int cells() const { return grid_width * grid_height; }
  bool operator==(const CatchConfig&) const = default;
};

/// Binary grid, row-major; row 0 is the top.
struct StateImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t at(int row, int col) const { return cells[static_cast<std::size_t>(row * width + col)]; }
  bool operator==(const StateImage&) const = default;
};

struct CatchState {
  CatchConfig config;
  int ball_row = 0;
  int ball_col = 0;
  int paddle_col = 0;
  bool done = false;

  StateImage image() const;
};

struct StepResult {
  StateImage image;
  double reward = 0.0;
  bool done = false;
};

/// Ball on the top row at a seeded-uniform column, paddle bottom-center.
CatchState reset(const CatchConfig& config, std::uint64_t seed);

/// Moves the paddle one cell (clamped), then drops the ball one row. Landing on
/// the bottom row ends the episode with +1 on a catch and -1 otherwise.
StepResult step(CatchState& state, int action_id);

/// Ball and paddle columns read back from an image; throws if either is absent.
struct Positions {
  int ball_row;
  int ball_col;
  int paddle_col;
};
Positions locate(const StateImage& image);

int expert_policy(const CatchState& state);
int expert_policy(const StateImage& image);

enum class Policy { random, medium, expert, medium_replay, medium_expert };

std::string to_string(Policy policy);
Policy parse_policy(const std::string& name);

/// Probability that the medium policy replaces the expert action with a
/// uniformly random one.
inline constexpr double kMediumEpsilon = 0.5;

/// Action chosen by one of the three base policies (random, medium, expert).
int act(Policy policy, const CatchState& state, std::mt19937_64& rng);

}  // namespace rtgf::envdata

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtgformer/encoder.hpp"
#include "rtgformer/envdata/dataset.hpp"

namespace rtgf::trajectory {

class TrajectoryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Suffix sums: rtg[i] = rewards[i] + ... + rewards[N-1].
std::vector<double> compute_rtg(std::span<const double> rewards);

struct AnnotatedTrajectory {
  envdata::Trajectory base;
  std::vector<double> rtg;
};

AnnotatedTrajectory annotate(const envdata::Trajectory& traj);
AnnotatedTrajectory annotate(const AnnotatedTrajectory& traj);

/// Every step of one episode run through the encoder, plus its returns-to-go.
struct EncodedEpisode {
  std::size_t length = 0;
  std::vector<double> steps;  // length x width, row t = O_t
  std::vector<double> rtg;
};

struct EncodedDataset {
  std::size_t width = 0;
  std::vector<EncodedEpisode> episodes;
};

EncodedEpisode encode_episode(const AnnotatedTrajectory& traj, const encoder::Encoder& enc,
                              envdata::PromptVariant variant);
EncodedDataset encode_dataset(const envdata::OfflineDataset& data, const encoder::Encoder& enc,
                              envdata::PromptVariant variant);

/// K consecutive steps starting at offset, right-padded with zeros. targets[j]
/// is the step after steps[j]; mask[j] is false on padding and on the
/// episode's final step.
struct TrainingSample {
  std::size_t K = 0;
  std::size_t width = 0;
  std::size_t offset = 0;
  std::vector<double> steps;    // K x width
  std::vector<double> rtg;      // K
  std::vector<double> targets;  // K x width
  std::vector<std::uint8_t> mask;

  std::size_t valid_count() const;
};

TrainingSample window(const EncodedEpisode& ep, std::size_t width, std::size_t K, std::size_t offset);
TrainingSample window(const AnnotatedTrajectory& traj, const encoder::Encoder& enc, std::size_t K,
                      std::size_t offset, envdata::PromptVariant variant);

/// One stage of memory history for a whole batch: per sample, up to K real
/// steps followed by zero padding.
struct Segment {
  std::vector<double> steps;  // B x K x width
  std::vector<double> rtg;    // B x K
  std::vector<std::size_t> lengths;
};

struct Batch {
  std::size_t batch_size = 0;
  std::size_t K = 0;
  std::size_t width = 0;
  std::vector<double> steps;    // B x K x width
  std::vector<double> rtg;      // B x K
  std::vector<double> targets;  // B x K x width
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> episode_ids;
  std::vector<std::size_t> offsets;
  // Oldest first. Segment m (counting back from the window) covers
  // [max(0, offset - m*K), offset - (m-1)*K) for m = M, ..., 1.
  std::vector<Segment> history;

  std::size_t valid_count() const;
};

struct Pick {
  std::size_t episode;
  std::size_t offset;
};

Batch assemble_batch(const EncodedDataset& data, std::size_t K, std::size_t memory_segments,
                     std::span<const Pick> picks);

/// Number of samples per batch: floor(batch_tokens / K).
std::size_t batch_size_for(std::size_t batch_tokens, std::size_t K);

/// Seeded stream of batches drawn uniformly over (episode, offset) pairs with
/// offset in [0, N-2], so every window has at least one target.
class BatchStream {
 public:
  BatchStream(const EncodedDataset& data, std::size_t K, std::size_t memory_segments, std::size_t batch_tokens,
              std::uint64_t seed);

  Batch next();
  std::vector<Pick> next_picks();

  std::size_t batch_size() const { return batch_size_; }
  std::uint64_t drawn() const { return drawn_; }

  /// Serialized generator position (round-trips through restore()).
  std::string state() const;
  void restore(const std::string& state);

 private:
  const EncodedDataset* data_;
  std::size_t K_;
  std::size_t M_;
  std::size_t batch_size_;
  std::vector<std::size_t> cumulative_;  // valid-offset counts, prefix sums
  std::mt19937_64 rng_;
  std::uint64_t drawn_ = 0;
};

}  // namespace rtgf::trajectory

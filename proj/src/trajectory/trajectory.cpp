#include "rtgformer/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rtgformer/seeding.hpp"

namespace rtgf::trajectory {

std::vector<double> compute_rtg(std::span<const double> rewards) {
  std::vector<double> rtg(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + acc;
    rtg[i] = acc;
  }
  return rtg;
}

AnnotatedTrajectory annotate(const envdata::Trajectory& traj) {
  if (traj.states.size() != traj.length() || traj.rewards.size() != traj.length()) {
    throw TrajectoryError("annotate: states, actions and rewards differ in length");
  }
  return {traj, compute_rtg(traj.rewards)};
}

AnnotatedTrajectory annotate(const AnnotatedTrajectory& traj) { return annotate(traj.base); }

EncodedEpisode encode_episode(const AnnotatedTrajectory& traj, const encoder::Encoder& enc,
                              envdata::PromptVariant variant) {
  const auto w = static_cast<std::size_t>(enc.width());
  EncodedEpisode ep;
  ep.length = traj.base.length();
  ep.rtg = traj.rtg;
  ep.steps.resize(ep.length * w);
  for (std::size_t t = 0; t < ep.length; ++t) {
    enc.encode_step_into(traj.base.action_ids[t], traj.base.states[t], variant,
                         std::span<double>(ep.steps).subspan(t * w, w));
  }
  return ep;
}

EncodedDataset encode_dataset(const envdata::OfflineDataset& data, const encoder::Encoder& enc,
                              envdata::PromptVariant variant) {
  if (data.env != enc.params().grid) throw TrajectoryError("encode_dataset: dataset grid does not match encoder grid");
  EncodedDataset out;
  out.width = static_cast<std::size_t>(enc.width());
  out.episodes.reserve(data.episodes.size());
  for (const auto& traj : data.episodes) out.episodes.push_back(encode_episode(annotate(traj), enc, variant));
  return out;
}

std::size_t TrainingSample::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TrainingSample window(const EncodedEpisode& ep, std::size_t width, std::size_t K, std::size_t offset) {
  if (K == 0) throw TrajectoryError("window: K must be at least 1");
  if (offset >= ep.length) {
    throw TrajectoryError("window: offset " + std::to_string(offset) + " outside episode of length " +
                          std::to_string(ep.length));
  }
  TrainingSample s;
  s.K = K;
  s.width = width;
  s.offset = offset;
  s.steps.assign(K * width, 0.0);
  s.rtg.assign(K, 0.0);
  s.targets.assign(K * width, 0.0);
  s.mask.assign(K, 0);
  for (std::size_t j = 0; j < K && offset + j < ep.length; ++j) {
    const auto t = offset + j;
    std::copy_n(ep.steps.begin() + static_cast<std::ptrdiff_t>(t * width), width,
                s.steps.begin() + static_cast<std::ptrdiff_t>(j * width));
    s.rtg[j] = ep.rtg[t];
    if (t + 1 < ep.length) {
      std::copy_n(ep.steps.begin() + static_cast<std::ptrdiff_t>((t + 1) * width), width,
                  s.targets.begin() + static_cast<std::ptrdiff_t>(j * width));
      s.mask[j] = 1;
    }
  }
  return s;
}

TrainingSample window(const AnnotatedTrajectory& traj, const encoder::Encoder& enc, std::size_t K,
                      std::size_t offset, envdata::PromptVariant variant) {
  if (offset >= traj.base.length()) {
    throw TrajectoryError("window: offset " + std::to_string(offset) + " outside episode of length " +
                          std::to_string(traj.base.length()));
  }
  return window(encode_episode(traj, enc, variant), static_cast<std::size_t>(enc.width()), K, offset);
}

std::size_t Batch::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Batch assemble_batch(const EncodedDataset& data, std::size_t K, std::size_t memory_segments,
                     std::span<const Pick> picks) {
  const auto w = data.width;
  Batch b;
  b.batch_size = picks.size();
  b.K = K;
  b.width = w;
  b.steps.reserve(picks.size() * K * w);
  b.targets.reserve(picks.size() * K * w);
  for (const auto& p : picks) {
    if (p.episode >= data.episodes.size()) throw TrajectoryError("assemble_batch: episode index out of range");
    auto s = window(data.episodes[p.episode], w, K, p.offset);
    b.steps.insert(b.steps.end(), s.steps.begin(), s.steps.end());
    b.rtg.insert(b.rtg.end(), s.rtg.begin(), s.rtg.end());
    b.targets.insert(b.targets.end(), s.targets.begin(), s.targets.end());
    b.mask.insert(b.mask.end(), s.mask.begin(), s.mask.end());
    b.episode_ids.push_back(p.episode);
    b.offsets.push_back(p.offset);
  }
  b.history.resize(memory_segments);
  for (std::size_t idx = 0; idx < memory_segments; ++idx) {
    const std::size_t m = memory_segments - idx;  // oldest first
    auto& seg = b.history[idx];
    seg.steps.assign(picks.size() * K * w, 0.0);
    seg.rtg.assign(picks.size() * K, 0.0);
    seg.lengths.assign(picks.size(), 0);
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const auto off = picks[i].offset;
      if (off <= (m - 1) * K) continue;
      const std::size_t end = off - (m - 1) * K;
      const std::size_t begin = off > m * K ? off - m * K : 0;
      const auto& ep = data.episodes[picks[i].episode];
      seg.lengths[i] = end - begin;
      for (std::size_t t = begin; t < end; ++t) {
        const auto j = t - begin;
        std::copy_n(ep.steps.begin() + static_cast<std::ptrdiff_t>(t * w), w,
                    seg.steps.begin() + static_cast<std::ptrdiff_t>((i * K + j) * w));
        seg.rtg[i * K + j] = ep.rtg[t];
      }
    }
  }
  return b;
}

std::size_t batch_size_for(std::size_t batch_tokens, std::size_t K) {
  if (K == 0) throw TrajectoryError("batch_size_for: K must be at least 1");
  return batch_tokens / K;
}

BatchStream::BatchStream(const EncodedDataset& data, std::size_t K, std::size_t memory_segments,
                         std::size_t batch_tokens, std::uint64_t seed)
    : data_(&data), K_(K), M_(memory_segments), batch_size_(batch_size_for(batch_tokens, K)),
      rng_(derive_seed(seed, {stream::batches})) {
  if (data.episodes.empty()) throw TrajectoryError("make_batches: dataset is empty");
  if (batch_size_ == 0) {
    throw TrajectoryError("make_batches: batch_tokens " + std::to_string(batch_tokens) + " is smaller than K " +
                          std::to_string(K));
  }
  std::size_t longest = 0;
  std::size_t total = 0;
  for (const auto& ep : data.episodes) {
    longest = std::max(longest, ep.length);
    total += ep.length >= 2 ? ep.length - 1 : 0;
    cumulative_.push_back(total);
  }
  if (K > longest) {
    throw TrajectoryError("make_batches: K = " + std::to_string(K) + " exceeds the longest episode (" +
                          std::to_string(longest) + " steps)");
  }
  if (total == 0) throw TrajectoryError("make_batches: no episode has a step with a successor");
}

std::vector<Pick> BatchStream::next_picks() {
  std::uniform_int_distribution<std::size_t> dist(0, cumulative_.back() - 1);
  std::vector<Pick> picks;
  picks.reserve(batch_size_);
  for (std::size_t i = 0; i < batch_size_; ++i) {
    const auto u = dist(rng_);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto ep = static_cast<std::size_t>(it - cumulative_.begin());
    const auto before = ep == 0 ? 0 : cumulative_[ep - 1];
    picks.push_back({ep, u - before});
  }
  ++drawn_;
  return picks;
}

Batch BatchStream::next() {
  const auto picks = next_picks();
  return assemble_batch(*data_, K_, M_, picks);
}

std::string BatchStream::state() const {
  std::ostringstream os;
  os << drawn_ << ' ' << rng_;
  return os.str();
}

void BatchStream::restore(const std::string& state) {
  std::istringstream is(state);
  is >> drawn_ >> rng_;
  if (!is) throw TrajectoryError("BatchStream: malformed generator state");
}

}  // namespace rtgf::trajectory

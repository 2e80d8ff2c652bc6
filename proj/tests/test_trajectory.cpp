#include "doctest.h"

#include "rtgformer/encoder.hpp"
#include "rtgformer/envdata/dataset.hpp"
#include "rtgformer/trajectory.hpp"

#include <random>
#include <set>

using namespace rtgf;
using namespace rtgf::trajectory;
using envdata::PromptVariant;

TEST_CASE("compute_rtg hand examples") {
  CHECK(compute_rtg(std::vector<double>{1, 0, 2}) == std::vector<double>{3, 2, 2});
  CHECK(compute_rtg(std::vector<double>{}).empty());
  CHECK(compute_rtg(std::vector<double>{0, 0, 0, 0, 0, 1}) == std::vector<double>(6, 1.0));
}

TEST_CASE("compute_rtg suffix-sum property on 1,000 random sequences") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> len(1, 40);
  std::uniform_int_distribution<int> small(-8, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(len(rng)));
    // Small integers keep every partial sum exact.
    for (auto& x : r) x = small(rng);
    auto rtg = compute_rtg(r);
    REQUIRE(rtg.size() == r.size());
    double total = 0.0;
    for (double x : r) total += x;
    CHECK(rtg[0] == total);
    CHECK(rtg.back() == r.back());
    for (std::size_t i = 0; i + 1 < r.size(); ++i) CHECK(rtg[i] - rtg[i + 1] == r[i]);
  }
}

TEST_CASE("annotate attaches rtg and is idempotent") {
  envdata::CatchConfig cfg;
  auto traj = envdata::run_episode(cfg, envdata::Policy::random, 3, 0);
  auto a = annotate(traj);
  CHECK(a.base == traj);
  CHECK(a.rtg[0] == traj.total_return());
  auto b = annotate(a);
  CHECK(b.rtg == a.rtg);
  CHECK(b.base == a.base);

  envdata::Trajectory zero = traj;
  std::fill(zero.rewards.begin(), zero.rewards.end(), 0.0);
  CHECK(annotate(zero).rtg == std::vector<double>(zero.length(), 0.0));
}

namespace {

struct Fixture {
  envdata::CatchConfig cfg;
  encoder::Encoder enc = encoder::build_encoder(cfg, 1, 16, 16);
  envdata::OfflineDataset data = envdata::generate_dataset(cfg, envdata::Policy::medium, 40, 5);
  EncodedDataset encoded = encode_dataset(data, enc, PromptVariant::original);
};

}  // namespace

TEST_CASE("window masks and targets") {
  Fixture f;
  auto traj = annotate(f.data.episodes[0]);
  const auto n = traj.base.length();

  auto last = window(traj, f.enc, 1, n - 1, PromptVariant::original);
  CHECK(last.mask == std::vector<std::uint8_t>{0});

  auto full = window(traj, f.enc, n, 0, PromptVariant::original);
  CHECK(full.valid_count() == n - 1);
  CHECK(full.mask.back() == 0);

  auto padded = window(traj, f.enc, n + 5, 2, PromptVariant::original);
  CHECK(padded.valid_count() == n - 3);
  for (std::size_t j = n - 2; j < n + 5; ++j) {
    CHECK(padded.mask[j] == 0);
    if (j >= n - 2 + 1) {
      for (std::size_t k = 0; k < padded.width; ++k) CHECK(padded.steps[j * padded.width + k] == 0.0);
    }
  }
  CHECK_THROWS_AS(window(traj, f.enc, 3, n, PromptVariant::original), TrajectoryError);
  CHECK_THROWS_AS(window(traj, f.enc, 0, 0, PromptVariant::original), TrajectoryError);
}

TEST_CASE("targets at valid positions are the encoding of the real next step") {
  Fixture f;
  for (std::size_t e = 0; e < f.data.episodes.size(); ++e) {
    const auto& traj = f.data.episodes[e];
    for (std::size_t off = 0; off < traj.length(); ++off) {
      auto s = window(f.encoded.episodes[e], f.encoded.width, 4, off);
      for (std::size_t j = 0; j < 4; ++j) {
        if (!s.mask[j]) continue;
        const auto t = off + j;
        auto next = f.enc.encode_step(traj.action_ids[t + 1], traj.states[t + 1], PromptVariant::original);
        CHECK(std::equal(next.begin(), next.end(), s.targets.begin() + static_cast<std::ptrdiff_t>(j * s.width)));
        auto cur = f.enc.encode_step(traj.action_ids[t], traj.states[t], PromptVariant::original);
        CHECK(std::equal(cur.begin(), cur.end(), s.steps.begin() + static_cast<std::ptrdiff_t>(j * s.width)));
        CHECK(s.rtg[j] == compute_rtg(traj.rewards)[t]);
      }
    }
  }
}

TEST_CASE("windows at different offsets agree on shared steps") {
  Fixture f;
  const auto& ep = f.encoded.episodes[3];
  auto a = window(ep, f.encoded.width, 4, 0);
  auto b = window(ep, f.encoded.width, 4, 2);
  const auto w = f.encoded.width;
  for (std::size_t t = 2; t < 4; ++t) {
    for (std::size_t k = 0; k < w; ++k) {
      CHECK(a.steps[t * w + k] == b.steps[(t - 2) * w + k]);
      CHECK(a.targets[t * w + k] == b.targets[(t - 2) * w + k]);
    }
    CHECK(a.rtg[t] == b.rtg[t - 2]);
  }
}

TEST_CASE("batch size follows the token budget") {
  CHECK(batch_size_for(65536, 64) == 1024);
  CHECK(batch_size_for(256, 6) == 42);
}

TEST_CASE("batch stream is seeded, uniform and rejects oversized windows") {
  Fixture f;
  BatchStream s1(f.encoded, 6, 0, 256, 9);
  BatchStream s2(f.encoded, 6, 0, 256, 9);
  for (int i = 0; i < 5; ++i) {
    auto a = s1.next();
    auto b = s2.next();
    CHECK(a.batch_size == 42);
    CHECK(a.episode_ids == b.episode_ids);
    CHECK(a.offsets == b.offsets);
    CHECK(a.steps == b.steps);
    for (auto off : a.offsets) CHECK(off <= 4);
  }
  BatchStream s3(f.encoded, 6, 0, 256, 10);
  CHECK(s3.next().episode_ids != s1.next().episode_ids);
  CHECK_THROWS_AS(BatchStream(f.encoded, 7, 0, 256, 0), TrajectoryError);
  CHECK_THROWS_AS(BatchStream(f.encoded, 6, 0, 5, 0), TrajectoryError);

  // All 40 x 5 valid pairs get drawn with roughly equal frequency.
  BatchStream big(f.encoded, 2, 0, 2000, 1);
  std::vector<int> counts(40 * 5, 0);
  for (int i = 0; i < 20; ++i) {
    for (auto p : big.next_picks()) counts[p.episode * 5 + p.offset] += 1;
  }
  const double expected = 20.0 * 1000 / 200.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Upper 0.1% point of chi-square with 199 degrees of freedom is ~268.
  CHECK(chi2 < 268.0);
}

TEST_CASE("stream state round-trips") {
  Fixture f;
  BatchStream a(f.encoded, 3, 2, 60, 4);
  a.next();
  auto saved = a.state();
  auto expect = a.next();
  BatchStream b(f.encoded, 3, 2, 60, 4);
  b.restore(saved);
  auto got = b.next();
  CHECK(got.episode_ids == expect.episode_ids);
  CHECK(got.offsets == expect.offsets);
  CHECK(b.drawn() == a.drawn());
}

TEST_CASE("history segments reach back in blocks of K") {
  Fixture f;
  std::vector<Pick> picks{{0, 0}, {1, 1}, {2, 4}, {3, 5}};
  auto b = assemble_batch(f.encoded, 2, 2, picks);
  REQUIRE(b.history.size() == 2);
  // Newest segment (m = 1): [max(0, off-2), off).
  CHECK(b.history[1].lengths == std::vector<std::size_t>{0, 1, 2, 2});
  // Oldest segment (m = 2): [max(0, off-4), off-2).
  CHECK(b.history[0].lengths == std::vector<std::size_t>{0, 0, 2, 2});
  const auto w = b.width;
  const auto& ep = f.encoded.episodes[3];
  for (std::size_t k = 0; k < w; ++k) {
    CHECK(b.history[0].steps[(3 * 2 + 0) * w + k] == ep.steps[1 * w + k]);
    CHECK(b.history[1].steps[(3 * 2 + 1) * w + k] == ep.steps[4 * w + k]);
  }
  CHECK(b.history[1].rtg[3 * 2 + 1] == ep.rtg[4]);
}

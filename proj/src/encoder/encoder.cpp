#include "rtgformer/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "rtgformer/io/binary.hpp"
#include "rtgformer/io/digest.hpp"
#include "rtgformer/seeding.hpp"

namespace rtgf::encoder {

using envdata::PromptVariant;

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

std::size_t variant_index(PromptVariant v) { return static_cast<std::size_t>(v); }

}  // namespace

Encoder::Encoder(EncoderParams params) : params_(std::move(params)) {
  const auto& p = params_;
  if (p.d_action < 8 || p.d_state < 8) throw EncoderError("encoder: d_action and d_state must be at least 8");
  if (!p.token_table.defined() || p.token_table.shape() != numeric::Shape{p.vocabulary.size(), std::size_t(p.d_action)}) {
    throw EncoderError("encoder: token table does not match vocabulary x d_action");
  }
  if (!p.state_projection.defined() ||
      p.state_projection.shape() != numeric::Shape{std::size_t(p.grid.cells()), std::size_t(p.d_state)}) {
    throw EncoderError("encoder: state projection does not match grid cells x d_state");
  }
  params_.token_table.set_requires_grad(false);
  params_.state_projection.set_requires_grad(false);
  for (auto v : envdata::kAllVariants) {
    auto& slot = action_cache_[variant_index(v)];
    for (const auto& prompt : envdata::prompt_catalog(v)) {
      try {
        slot.push_back(encode_text(prompt.text));
      } catch (const EncoderError&) {
        // Variant not covered by this vocabulary; encode_action reports it.
        slot.clear();
        break;
      }
    }
  }
}

std::vector<double> Encoder::encode_text(const std::string& text) const {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw EncoderError("encoder: prompt text has no tokens");
  const auto& vocab = params_.vocabulary;
  const auto d = static_cast<std::size_t>(params_.d_action);
  const auto table = params_.token_table.data();
  std::vector<double> out(d, 0.0);
  for (const auto& tok : tokens) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), tok);
    if (it == vocab.end() || *it != tok) throw EncoderError("encoder: token '" + tok + "' is not in the vocabulary");
    const auto row = static_cast<std::size_t>(it - vocab.begin());
    for (std::size_t j = 0; j < d; ++j) out[j] += table[row * d + j];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (auto& x : out) x *= inv;
  return out;
}

const std::vector<double>& Encoder::encode_action(int action_id, PromptVariant variant) const {
  const auto& slot = action_cache_[variant_index(variant)];
  if (slot.empty()) throw EncoderError("encoder: variant " + envdata::to_string(variant) + " is not covered");
  if (action_id < 0 || static_cast<std::size_t>(action_id) >= slot.size()) {
    throw EncoderError("encoder: unknown action id " + std::to_string(action_id));
  }
  return slot[static_cast<std::size_t>(action_id)];
}

std::vector<double> Encoder::encode_state(const envdata::StateImage& image) const {
  if (image.height != params_.grid.grid_height || image.width != params_.grid.grid_width ||
      image.cells.size() != static_cast<std::size_t>(params_.grid.cells())) {
    throw EncoderError("encoder: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                       " does not match grid " + std::to_string(params_.grid.grid_height) + "x" +
                       std::to_string(params_.grid.grid_width));
  }
  const auto d = static_cast<std::size_t>(params_.d_state);
  const auto proj = params_.state_projection.data();
  std::vector<double> out(d, 0.0);
  for (std::size_t cell = 0; cell < image.cells.size(); ++cell) {
    const double v = image.cells[cell];
    if (v == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out[j] += v * proj[cell * d + j];
  }
  return out;
}

std::vector<double> Encoder::encode_step(int action_id, const envdata::StateImage& image,
                                         PromptVariant variant) const {
  std::vector<double> out(static_cast<std::size_t>(width()));
  encode_step_into(action_id, image, variant, out);
  return out;
}

void Encoder::encode_step_into(int action_id, const envdata::StateImage& image, PromptVariant variant,
                               std::span<double> out) const {
  if (out.size() != static_cast<std::size_t>(width())) throw EncoderError("encoder: output span has wrong width");
  const auto& a = encode_action(action_id, variant);
  const auto s = encode_state(image);
  std::copy(a.begin(), a.end(), out.begin());
  std::copy(s.begin(), s.end(), out.begin() + params_.d_action);
}

double Encoder::decode_margin(PromptVariant variant) const {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < envdata::kNumActions; ++i) {
    for (int j = i + 1; j < envdata::kNumActions; ++j) {
      const auto& a = encode_action(i, variant);
      const auto& b = encode_action(j, variant);
      double d2 = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
      best = std::min(best, std::sqrt(d2));
    }
  }
  return best;
}

std::string Encoder::digest() const { return io::sha256_hex(serialize_encoder(params_)); }

double Encoder::max_action_cosine(PromptVariant variant) const {
  double worst = -1.0;
  for (int i = 0; i < envdata::kNumActions; ++i) {
    for (int j = i + 1; j < envdata::kNumActions; ++j) {
      const auto& a = encode_action(i, variant);
      const auto& b = encode_action(j, variant);
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
      }
      worst = std::max(worst, ab / std::sqrt(aa * bb));
    }
  }
  return worst;
}

namespace {

Encoder build_attempt(std::span<const envdata::ActionPrompt> prompts, const envdata::CatchConfig& grid,
                      std::uint64_t seed, std::uint64_t attempt, int d_action, int d_state) {
  if (prompts.empty()) throw EncoderError("build_encoder: empty prompt catalog");
  if (d_action < 8 || d_state < 8) throw EncoderError("build_encoder: d_action and d_state must be at least 8");
  grid.validate();
  std::set<std::string> vocab;
  for (const auto& p : prompts) {
    for (auto& t : tokenize(p.text)) vocab.insert(std::move(t));
  }
  EncoderParams params;
  params.grid = grid;
  params.d_action = d_action;
  params.d_state = d_state;
  params.seed = seed;
  params.attempt = attempt;
  params.vocabulary.assign(vocab.begin(), vocab.end());

  std::mt19937_64 rng(derive_seed(seed, {stream::encoder, attempt}));
  auto draw = [&rng](std::size_t rows, int d) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> v(rows * static_cast<std::size_t>(d));
    for (auto& x : v) x = dist(rng);
    return numeric::Tensor::from_data({rows, static_cast<std::size_t>(d)}, std::move(v));
  };
  params.token_table = draw(params.vocabulary.size(), d_action);
  params.state_projection = draw(static_cast<std::size_t>(grid.cells()), d_state);
  return Encoder(std::move(params));
}

}  // namespace

Encoder build_encoder(std::span<const envdata::ActionPrompt> prompts, const envdata::CatchConfig& grid,
                      std::uint64_t seed, int d_action, int d_state) {
  return build_attempt(prompts, grid, seed, 0, d_action, d_state);
}

Encoder build_encoder(const envdata::CatchConfig& grid, std::uint64_t seed, int d_action, int d_state) {
  std::vector<envdata::ActionPrompt> all;
  for (auto v : envdata::kAllVariants) {
    const auto& cat = envdata::prompt_catalog(v);
    all.insert(all.end(), cat.begin(), cat.end());
  }
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto enc = build_attempt(all, grid, seed, attempt, d_action, d_state);
    if (enc.max_action_cosine(PromptVariant::original) < kMaxActionCosine) return enc;
    if (attempt == 1000) throw EncoderError("build_encoder: no draw separates the action prompts");
  }
}

std::string serialize_encoder(const EncoderParams& p) {
  io::BinaryWriter w;
  w.str("rtgformer-encoder-v1");
  w.i64(p.grid.grid_width);
  w.i64(p.grid.grid_height);
  w.i64(p.d_action);
  w.i64(p.d_state);
  w.u64(p.seed);
  w.u64(p.attempt);
  w.u64(p.vocabulary.size());
  for (const auto& tok : p.vocabulary) w.str(tok);
  w.f64s(p.token_table.data());
  w.f64s(p.state_projection.data());
  return w.bytes();
}

EncoderParams parse_encoder(const std::string& bytes) {
  io::BinaryReader r(bytes);
  if (r.str() != "rtgformer-encoder-v1") throw io::FormatError("encoder: unknown payload tag");
  EncoderParams p;
  p.grid.grid_width = static_cast<int>(r.i64());
  p.grid.grid_height = static_cast<int>(r.i64());
  p.d_action = static_cast<int>(r.i64());
  p.d_state = static_cast<int>(r.i64());
  p.seed = r.u64();
  p.attempt = r.u64();
  const auto n = r.u64();
  if (n > bytes.size()) throw io::FormatError("encoder: implausible vocabulary size");
  for (std::uint64_t i = 0; i < n; ++i) p.vocabulary.push_back(r.str());
  auto table = r.f64s();
  auto proj = r.f64s();
  if (!r.done()) throw io::FormatError("encoder: trailing bytes");
  if (table.size() != n * static_cast<std::size_t>(p.d_action) ||
      proj.size() != static_cast<std::size_t>(p.grid.cells()) * static_cast<std::size_t>(p.d_state)) {
    throw io::FormatError("encoder: table sizes do not match header");
  }
  p.token_table = numeric::Tensor::from_data({n, static_cast<std::size_t>(p.d_action)}, std::move(table));
  p.state_projection = numeric::Tensor::from_data(
      {static_cast<std::size_t>(p.grid.cells()), static_cast<std::size_t>(p.d_state)}, std::move(proj));
  return p;
}

}  // namespace rtgf::encoder

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rtgformer/envdata/catch.hpp"
#include "rtgformer/envdata/prompts.hpp"
#include "rtgformer/numeric/tensor.hpp"

namespace rtgf::encoder {

class EncoderError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Lowercases and splits on anything that is not a letter or digit.
std::vector<std::string> tokenize(const std::string& text);

struct EncoderParams {
  envdata::CatchConfig grid;
  int d_action = 64;
  int d_state = 64;
  std::uint64_t seed = 0;
  std::uint64_t attempt = 0;
  // Sorted; row i of token_table embeds vocabulary[i].
  std::vector<std::string> vocabulary;
  numeric::Tensor token_table;       // |vocab| x d_action
  numeric::Tensor state_projection;  // (height * width) x d_state
};

/// Frozen step encoder: O_t = [mean-pooled prompt token embeddings | projected
/// state image]. Nothing here is ever trained; all tensors have
/// requires_grad = false.
class Encoder {
 public:
  explicit Encoder(EncoderParams params);

  const EncoderParams& params() const { return params_; }
  int d_action() const { return params_.d_action; }
  int d_state() const { return params_.d_state; }
  int width() const { return params_.d_action + params_.d_state; }

  std::vector<double> encode_text(const std::string& text) const;
  const std::vector<double>& encode_action(int action_id, envdata::PromptVariant variant) const;
  std::vector<double> encode_state(const envdata::StateImage& image) const;
  std::vector<double> encode_step(int action_id, const envdata::StateImage& image,
                                  envdata::PromptVariant variant) const;
  /// Writes encode_step into out (width() entries).
  void encode_step_into(int action_id, const envdata::StateImage& image, envdata::PromptVariant variant,
                        std::span<double> out) const;

  /// Smallest Euclidean distance between two distinct action embeddings of a
  /// variant. Nearest-neighbour decoding is exact for any perturbation shorter
  /// than half of it.
  double decode_margin(envdata::PromptVariant variant) const;

  /// Largest cosine similarity between two distinct action embeddings.
  double max_action_cosine(envdata::PromptVariant variant) const;

  /// SHA-256 over dims, vocabulary and both tables.
  std::string digest() const;

 private:
  EncoderParams params_;
  std::array<std::vector<std::vector<double>>, 3> action_cache_;
};

/// Builds the vocabulary from the given prompts and draws both tables from
/// N(0, 1/sqrt(d)) with the given seed.
Encoder build_encoder(std::span<const envdata::ActionPrompt> prompts, const envdata::CatchConfig& grid,
                      std::uint64_t seed, int d_action, int d_state);

inline constexpr double kMaxActionCosine = 0.95;

/// Same, over every prompt of every variant. Redraws the tables (attempt
/// 1, 2, ... mixed into the seed) until the original catalog's actions have
/// pairwise cosine similarity below kMaxActionCosine.
Encoder build_encoder(const envdata::CatchConfig& grid, std::uint64_t seed, int d_action, int d_state);

std::string serialize_encoder(const EncoderParams& params);
EncoderParams parse_encoder(const std::string& bytes);

}  // namespace rtgf::encoder

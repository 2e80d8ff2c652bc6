#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtgformer/numeric/tensor.hpp"
#include "rtgformer/trajectory.hpp"

namespace rtgf::model {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class RtgMode { condition, linear };

std::string to_string(RtgMode mode);
RtgMode parse_rtg_mode(const std::string& name);

struct ModelConfig {
  int d_model = 128;
  int n_heads = 1;
  int n_layers = 6;
  int context_len = 6;
  RtgMode rtg_mode = RtgMode::condition;
  int memory_segments = 2;
  double dropout = 0.0;
  // 0 means context_len.
  int max_position = 0;

  void validate() const;
  int positions() const { return max_position > 0 ? max_position : context_len; }
  bool operator==(const ModelConfig&) const = default;
};

/// Canonical one-line text form; its SHA-256 identifies the architecture.
std::string canonical(const ModelConfig& cfg);
std::string config_digest(const ModelConfig& cfg);

struct LayerParams {
  numeric::Tensor ln1_g, ln1_b;
  numeric::Tensor w_q, w_k, w_v, w_o;
  // Condition mode only: 1 x d maps from the scalar return-to-go into K and V.
  numeric::Tensor rtg_k, rtg_v;
  numeric::Tensor ln2_g, ln2_b;
  numeric::Tensor w_1, w_2;
};

struct ModelParams {
  numeric::Tensor w_in;
  numeric::Tensor pos;
  // Linear mode only.
  numeric::Tensor rtg_pe;
  std::vector<LayerParams> layers;
  numeric::Tensor lnf_g, lnf_b;
  numeric::Tensor w_head;

  /// Every defined tensor with a stable name, in a fixed order.
  std::vector<numeric::Parameter> list() const;
  std::size_t count() const;
  void zero_grad();
};

/// Scaled-normal init: std 0.02, W_o and W_2 at 0.02 / sqrt(2 n_layers), layer
/// norm gain 1 and bias 0. Tensors shared by both modes get identical values
/// for a given seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Deep copy with requires_grad preserved.
ModelParams clone(const ModelParams& params);

std::string serialize_params(const ModelParams& params);
/// Restores values into a freshly initialised structure for cfg.
ModelParams parse_params(const std::string& bytes, const ModelConfig& cfg);
std::string params_digest(const ModelParams& params);

/// Detached keys and values of one processed segment for one layer, with the
/// number of real (unpadded) positions per sample.
struct CacheBlock {
  numeric::Tensor keys;    // (batch * length) x d_model
  numeric::Tensor values;  // (batch * length) x d_model
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::size_t> valid;
};

class MemoryCache {
 public:
  MemoryCache() = default;
  MemoryCache(std::size_t capacity, std::size_t n_layers);

  std::size_t capacity() const { return capacity_; }
  std::size_t blocks() const { return layers_.empty() ? 0 : layers_.front().size(); }
  const std::vector<CacheBlock>& layer(std::size_t l) const { return layers_.at(l); }
  std::vector<CacheBlock>& layer_mut(std::size_t l) { return layers_.at(l); }

  /// Appends one block per layer, evicting the oldest beyond capacity.
  void push(std::vector<CacheBlock> per_layer);
  void clear();

  // Forward passes that attended to at least one cached block.
  std::uint64_t uses() const { return uses_; }
  void note_use() { ++uses_; }

 private:
  std::size_t capacity_ = 0;
  std::vector<std::vector<CacheBlock>> layers_;
  std::uint64_t uses_ = 0;
};

struct SegmentInput {
  std::size_t batch = 0;
  std::size_t length = 0;
  numeric::Tensor steps;    // (batch * length) x d_model
  std::vector<double> rtg;  // batch * length
  // Real positions per sample; padding sits at the end. Empty means all real.
  std::vector<std::size_t> valid;
};

SegmentInput make_input(std::size_t batch, std::size_t length, std::vector<double> steps, std::vector<double> rtg,
                        std::vector<std::size_t> valid = {});

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  bool update_cache = true;
  bool collect_attention = false;
};

struct ForwardResult {
  numeric::Tensor predictions;  // (batch * length) x d_model; row i predicts O_{i+1}
  // [layer][sample * n_heads + head]: rows over [cache ; current] keys.
  std::vector<std::vector<numeric::Tensor>> attention;
};

/// Pre-norm causal transformer over one segment. Position i attends to every
/// real cached entry and to current positions j <= i. When the cache has
/// capacity and update_cache is set, the segment's detached keys and values
/// are pushed after the pass.
ForwardResult forward(const ModelParams& params, const ModelConfig& cfg, const SegmentInput& input,
                      MemoryCache* cache = nullptr, const ForwardOptions& options = {});

/// Sum over weighted rows of squared error, divided by (sum of weights x
/// columns). A zero weight removes a row entirely.
numeric::Tensor mse_loss(const numeric::Tensor& pred, const numeric::Tensor& targets,
                         std::span<const double> row_weights);
numeric::Tensor mse_loss(const numeric::Tensor& pred, const numeric::Tensor& targets,
                         std::span<const std::uint8_t> mask);

/// Builds the batch's memory from its history segments (oldest first, without
/// recording), then runs the current window and returns the masked loss.
/// cache_uses, if given, receives how many forward passes read the cache.
numeric::Tensor batch_loss(const ModelParams& params, const ModelConfig& cfg, const trajectory::Batch& batch,
                           const ForwardOptions& options = {}, std::uint64_t* cache_uses = nullptr);

/// Fills the cache from a batch's history segments without recording.
MemoryCache build_history_cache(const ModelParams& params, const ModelConfig& cfg, const trajectory::Batch& batch);

}  // namespace rtgf::model

#include "rtgformer/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rtgformer/io/binary.hpp"
#include "rtgformer/io/digest.hpp"
#include "rtgformer/numeric/ops.hpp"
#include "rtgformer/seeding.hpp"

namespace rtgf::model {

using numeric::NoTape;
using numeric::Parameter;
using numeric::Shape;
using numeric::Tensor;
namespace ops = numeric;

std::string to_string(RtgMode mode) { return mode == RtgMode::condition ? "condition" : "linear"; }

RtgMode parse_rtg_mode(const std::string& name) {
  if (name == "condition") return RtgMode::condition;
  if (name == "linear") return RtgMode::linear;
  throw ModelError("unknown rtg mode '" + name + "' (expected condition or linear)");
}

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || context_len < 1) {
    throw ModelError("model config: d_model, n_heads, n_layers and context_len must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ModelError("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  }
  if (memory_segments < 0) throw ModelError("model config: memory_segments must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ModelError("model config: dropout must be in [0, 1)");
  if (max_position < 0) throw ModelError("model config: max_position must be >= 0");
  if (positions() < context_len) {
    throw ModelError("model config: context_len " + std::to_string(context_len) + " exceeds max_position " +
                     std::to_string(positions()));
  }
}

std::string canonical(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "d_model=" << c.d_model << ";n_heads=" << c.n_heads << ";n_layers=" << c.n_layers
     << ";context_len=" << c.context_len << ";rtg_mode=" << to_string(c.rtg_mode)
     << ";memory_segments=" << c.memory_segments << ";dropout=" << c.dropout << ";max_position=" << c.positions();
  return os.str();
}

std::string config_digest(const ModelConfig& cfg) { return io::sha256_hex(canonical(cfg)); }

std::vector<Parameter> ModelParams::list() const {
  std::vector<Parameter> out;
  auto add = [&out](std::string name, const Tensor& t) {
    if (t.defined()) out.push_back({std::move(name), t});
  };
  add("w_in", w_in);
  add("pos", pos);
  add("rtg_pe", rtg_pe);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const auto p = "layer" + std::to_string(l) + ".";
    add(p + "ln1_g", L.ln1_g);
    add(p + "ln1_b", L.ln1_b);
    add(p + "w_q", L.w_q);
    add(p + "w_k", L.w_k);
    add(p + "w_v", L.w_v);
    add(p + "w_o", L.w_o);
    add(p + "rtg_k", L.rtg_k);
    add(p + "rtg_v", L.rtg_v);
    add(p + "ln2_g", L.ln2_g);
    add(p + "ln2_b", L.ln2_b);
    add(p + "w_1", L.w_1);
    add(p + "w_2", L.w_2);
  }
  add("lnf_g", lnf_g);
  add("lnf_b", lnf_b);
  add("w_head", w_head);
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& p : list()) n += p.tensor.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& p : list()) p.tensor.zero_grad();
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const double std_base = 0.02;
  const double std_out = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  std::mt19937_64 rng(derive_seed(seed, {stream::model_init}));
  auto normal = [&rng](Shape shape, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(v), true);
  };
  auto ones = [](std::size_t n) { return Tensor::full({1, n}, 1.0, true); };
  auto zeros = [](std::size_t n) { return Tensor::zeros({1, n}, true); };

  // Every tensor is drawn in both modes so shared tensors match across modes;
  // the inactive RTG projections are dropped afterwards.
  ModelParams p;
  p.w_in = normal({d, d}, std_base);
  p.pos = normal({static_cast<std::size_t>(cfg.positions()), d}, std_base);
  Tensor rtg_pe = normal({1, d}, std_base);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams L;
    L.ln1_g = ones(d);
    L.ln1_b = zeros(d);
    L.w_q = normal({d, d}, std_base);
    L.w_k = normal({d, d}, std_base);
    L.w_v = normal({d, d}, std_base);
    L.w_o = normal({d, d}, std_out);
    Tensor rk = normal({1, d}, std_base);
    Tensor rv = normal({1, d}, std_base);
    if (cfg.rtg_mode == RtgMode::condition) {
      L.rtg_k = rk;
      L.rtg_v = rv;
    }
    L.ln2_g = ones(d);
    L.ln2_b = zeros(d);
    L.w_1 = normal({d, 4 * d}, std_base);
    L.w_2 = normal({4 * d, d}, std_out);
    p.layers.push_back(std::move(L));
  }
  if (cfg.rtg_mode == RtgMode::linear) p.rtg_pe = rtg_pe;
  p.lnf_g = ones(d);
  p.lnf_b = zeros(d);
  p.w_head = normal({d, d}, std_base);
  return p;
}

namespace {

Tensor copy_tensor(const Tensor& t) {
  if (!t.defined()) return {};
  auto d = t.data();
  return Tensor::from_data(t.shape(), std::vector<double>(d.begin(), d.end()), t.requires_grad());
}

}  // namespace

ModelParams clone(const ModelParams& src) {
  ModelParams p;
  p.w_in = copy_tensor(src.w_in);
  p.pos = copy_tensor(src.pos);
  p.rtg_pe = copy_tensor(src.rtg_pe);
  for (const auto& L : src.layers) {
    p.layers.push_back({copy_tensor(L.ln1_g), copy_tensor(L.ln1_b), copy_tensor(L.w_q), copy_tensor(L.w_k),
                        copy_tensor(L.w_v), copy_tensor(L.w_o), copy_tensor(L.rtg_k), copy_tensor(L.rtg_v),
                        copy_tensor(L.ln2_g), copy_tensor(L.ln2_b), copy_tensor(L.w_1), copy_tensor(L.w_2)});
  }
  p.lnf_g = copy_tensor(src.lnf_g);
  p.lnf_b = copy_tensor(src.lnf_b);
  p.w_head = copy_tensor(src.w_head);
  return p;
}

std::string serialize_params(const ModelParams& params) {
  io::BinaryWriter w;
  w.str("rtgformer-params-v1");
  const auto list = params.list();
  w.u64(list.size());
  for (const auto& p : list) {
    w.str(p.name);
    w.u64(p.tensor.rank());
    for (auto s : p.tensor.shape()) w.u64(s);
    w.f64s(p.tensor.data());
  }
  return w.bytes();
}

ModelParams parse_params(const std::string& bytes, const ModelConfig& cfg) {
  auto params = init_params(cfg, 0);
  auto list = params.list();
  io::BinaryReader r(bytes);
  if (r.str() != "rtgformer-params-v1") throw io::FormatError("params: unknown payload tag");
  if (r.u64() != list.size()) throw io::FormatError("params: tensor count does not match the model config");
  for (auto& p : list) {
    const auto name = r.str();
    if (name != p.name) throw io::FormatError("params: expected tensor '" + p.name + "', found '" + name + "'");
    const auto rank = r.u64();
    Shape shape;
    for (std::uint64_t i = 0; i < rank && i < 8; ++i) shape.push_back(r.u64());
    if (shape != p.tensor.shape()) {
      throw io::FormatError("params: tensor '" + name + "' has shape " + numeric::shape_str(shape) + ", expected " +
                            numeric::shape_str(p.tensor.shape()));
    }
    auto values = r.f64s();
    if (values.size() != p.tensor.numel()) throw io::FormatError("params: tensor '" + name + "' size mismatch");
    std::copy(values.begin(), values.end(), p.tensor.data_mut().begin());
  }
  if (!r.done()) throw io::FormatError("params: trailing bytes");
  return params;
}

std::string params_digest(const ModelParams& params) { return io::sha256_hex(serialize_params(params)); }

MemoryCache::MemoryCache(std::size_t capacity, std::size_t n_layers) : capacity_(capacity), layers_(n_layers) {}

void MemoryCache::push(std::vector<CacheBlock> per_layer) {
  if (capacity_ == 0) return;
  if (per_layer.size() != layers_.size()) throw ModelError("memory cache: one block per layer expected");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& list = layers_[l];
    list.push_back(std::move(per_layer[l]));
    while (list.size() > capacity_) list.erase(list.begin());
  }
}

void MemoryCache::clear() {
  for (auto& l : layers_) l.clear();
}

SegmentInput make_input(std::size_t batch, std::size_t length, std::vector<double> steps, std::vector<double> rtg,
                        std::vector<std::size_t> valid) {
  if (batch == 0 || length == 0) throw ModelError("segment: batch and length must be positive");
  if (rtg.size() != batch * length) throw ModelError("segment: rtg length does not match batch x length");
  if (steps.size() % (batch * length) != 0) throw ModelError("segment: steps do not divide into batch x length rows");
  const auto width = steps.size() / (batch * length);
  SegmentInput in;
  in.batch = batch;
  in.length = length;
  in.steps = Tensor::from_data({batch * length, width}, std::move(steps));
  in.rtg = std::move(rtg);
  in.valid = std::move(valid);
  return in;
}

namespace {

Tensor column(std::span<const double> v) {
  return Tensor::from_data({v.size(), 1}, std::vector<double>(v.begin(), v.end()));
}

Tensor dropout_mask(std::mt19937_64& rng, Shape shape, double p) {
  std::bernoulli_distribution keep(1.0 - p);
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> m(n);
  const double scale = 1.0 / (1.0 - p);
  for (auto& x : m) x = keep(rng) ? scale : 0.0;
  return Tensor::from_data(std::move(shape), std::move(m));
}

void check_finite_scores(const Tensor& scores, std::size_t layer) {
  for (double v : scores.data()) {
    if (!std::isfinite(v)) throw numeric::NumericError("layer " + std::to_string(layer) + ": non-finite attention score");
  }
}

}  // namespace

ForwardResult forward(const ModelParams& params, const ModelConfig& cfg, const SegmentInput& input,
                      MemoryCache* cache, const ForwardOptions& options) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto B = input.batch;
  const auto L = input.length;
  const auto H = static_cast<std::size_t>(cfg.n_heads);
  const auto dh = d / H;
  if (L > static_cast<std::size_t>(cfg.positions())) {
    throw ModelError("forward: segment length " + std::to_string(L) + " exceeds max_position " +
                     std::to_string(cfg.positions()));
  }
  if (!input.steps.defined() || input.steps.shape() != Shape{B * L, d}) {
    throw ModelError("forward: steps must be " + numeric::shape_str({B * L, d}));
  }
  if (input.rtg.size() != B * L) throw ModelError("forward: rtg must have batch x length entries");
  if (!input.valid.empty() && input.valid.size() != B) throw ModelError("forward: valid must have one entry per sample");
  if (params.layers.size() != static_cast<std::size_t>(cfg.n_layers)) throw ModelError("forward: layer count mismatch");

  const bool use_memory = cache != nullptr && cache->capacity() > 0;
  if (use_memory) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      for (const auto& blk : cache->layer(l)) {
        if (blk.batch != B) throw ModelError("forward: cached block batch does not match input batch");
      }
    }
  }
  const bool drop = options.training && cfg.dropout > 0.0;
  std::mt19937_64 drop_rng(options.dropout_seed);

  std::vector<std::size_t> pos_ids(B * L);
  for (std::size_t i = 0; i < B * L; ++i) pos_ids[i] = i % L;
  const Tensor rtg_col = column(input.rtg);

  Tensor h = ops::add(ops::matmul(input.steps, params.w_in), ops::embedding_lookup(params.pos, pos_ids));
  if (cfg.rtg_mode == RtgMode::linear) h = ops::add(h, ops::matmul(rtg_col, params.rtg_pe));
  if (drop) h = ops::mul(h, dropout_mask(drop_rng, h.shape(), cfg.dropout));

  ForwardResult result;
  std::vector<CacheBlock> new_blocks;
  bool read_cache = false;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& P = params.layers[l];
    const Tensor a = ops::layer_norm(h, P.ln1_g, P.ln1_b);
    const Tensor q = ops::matmul(a, P.w_q);
    Tensor k = ops::matmul(a, P.w_k);
    Tensor v = ops::matmul(a, P.w_v);
    if (cfg.rtg_mode == RtgMode::condition) {
      k = ops::add(k, ops::matmul(rtg_col, P.rtg_k));
      v = ops::add(v, ops::matmul(rtg_col, P.rtg_v));
    }

    static const std::vector<CacheBlock> kNoBlocks;
    const auto& blocks = use_memory ? cache->layer(l) : kNoBlocks;
    std::size_t cached = 0;
    for (const auto& blk : blocks) cached += blk.length;
    if (!blocks.empty()) read_cache = true;

    std::vector<Tensor> per_sample;
    per_sample.reserve(B);
    if (options.collect_attention) result.attention.emplace_back();
    for (std::size_t b = 0; b < B; ++b) {
      // Mask over [cache ; current]: 1 marks an entry the query may not see.
      std::vector<std::uint8_t> mask(L * (cached + L), 0);
      {
        std::size_t col = 0;
        for (const auto& blk : blocks) {
          const auto real = blk.valid.empty() ? blk.length : blk.valid[b];
          for (std::size_t i = 0; i < L; ++i) {
            for (std::size_t j = real; j < blk.length; ++j) mask[i * (cached + L) + col + j] = 1;
          }
          col += blk.length;
        }
        for (std::size_t i = 0; i < L; ++i) {
          for (std::size_t j = i + 1; j < L; ++j) mask[i * (cached + L) + cached + j] = 1;
        }
      }
      const Tensor qb = ops::slice(q, 0, b * L, (b + 1) * L);
      std::vector<Tensor> key_parts;
      std::vector<Tensor> value_parts;
      for (const auto& blk : blocks) {
        key_parts.push_back(ops::slice(blk.keys, 0, b * blk.length, (b + 1) * blk.length));
        value_parts.push_back(ops::slice(blk.values, 0, b * blk.length, (b + 1) * blk.length));
      }
      key_parts.push_back(ops::slice(k, 0, b * L, (b + 1) * L));
      value_parts.push_back(ops::slice(v, 0, b * L, (b + 1) * L));
      const Tensor kb = key_parts.size() == 1 ? key_parts[0] : ops::concat(key_parts, 0);
      const Tensor vb = value_parts.size() == 1 ? value_parts[0] : ops::concat(value_parts, 0);

      std::vector<Tensor> heads;
      for (std::size_t hd = 0; hd < H; ++hd) {
        const Tensor qh = H == 1 ? qb : ops::slice(qb, 1, hd * dh, (hd + 1) * dh);
        const Tensor kh = H == 1 ? kb : ops::slice(kb, 1, hd * dh, (hd + 1) * dh);
        const Tensor vh = H == 1 ? vb : ops::slice(vb, 1, hd * dh, (hd + 1) * dh);
        const Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
        check_finite_scores(scores, l);
        Tensor probs = ops::softmax(ops::masked_fill(scores, mask, -std::numeric_limits<double>::infinity()), -1);
        if (options.collect_attention) result.attention.back().push_back(probs);
        if (drop) probs = ops::mul(probs, dropout_mask(drop_rng, probs.shape(), cfg.dropout));
        heads.push_back(ops::matmul(probs, vh));
      }
      per_sample.push_back(H == 1 ? heads[0] : ops::concat(heads, 1));
    }
    Tensor attn = ops::matmul(B == 1 ? per_sample[0] : ops::concat(per_sample, 0), P.w_o);
    if (drop) attn = ops::mul(attn, dropout_mask(drop_rng, attn.shape(), cfg.dropout));
    h = ops::add(h, attn);

    const Tensor f = ops::layer_norm(h, P.ln2_g, P.ln2_b);
    Tensor ff = ops::matmul(ops::gelu(ops::matmul(f, P.w_1)), P.w_2);
    if (drop) ff = ops::mul(ff, dropout_mask(drop_rng, ff.shape(), cfg.dropout));
    h = ops::add(h, ff);

    if (use_memory && options.update_cache) {
      new_blocks.push_back({ops::stop_gradient(k), ops::stop_gradient(v), B, L, input.valid});
    }
  }
  result.predictions = ops::matmul(ops::layer_norm(h, params.lnf_g, params.lnf_b), params.w_head);
  if (use_memory) {
    if (read_cache) cache->note_use();
    if (options.update_cache) cache->push(std::move(new_blocks));
  }
  return result;
}

Tensor mse_loss(const Tensor& pred, const Tensor& targets, std::span<const double> row_weights) {
  if (pred.shape() != targets.shape()) {
    throw numeric::ShapeError("mse_loss: incompatible shapes " + numeric::shape_str(pred.shape()) + " and " +
                              numeric::shape_str(targets.shape()));
  }
  const auto rows = pred.rows();
  const auto cols = pred.cols();
  if (row_weights.size() != rows) throw numeric::ShapeError("mse_loss: one weight per row expected");
  double total = 0.0;
  std::vector<double> root(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_weights[r] < 0.0) throw ModelError("mse_loss: negative row weight");
    total += row_weights[r];
    const double s = std::sqrt(row_weights[r]);
    for (std::size_t c = 0; c < cols; ++c) root[r * cols + c] = s;
  }
  if (total <= 0.0) throw ModelError("mse_loss: no valid positions");
  const Tensor w = Tensor::from_data(pred.shape(), std::move(root));
  const Tensor diff = ops::mul(ops::sub(pred, targets), w);
  return ops::scale(ops::sum(ops::mul(diff, diff)), 1.0 / (total * static_cast<double>(cols)));
}

Tensor mse_loss(const Tensor& pred, const Tensor& targets, std::span<const std::uint8_t> mask) {
  std::vector<double> weights(mask.begin(), mask.end());
  return mse_loss(pred, targets, weights);
}

MemoryCache build_history_cache(const ModelParams& params, const ModelConfig& cfg, const trajectory::Batch& batch) {
  MemoryCache cache(static_cast<std::size_t>(cfg.memory_segments), params.layers.size());
  if (cfg.memory_segments == 0) return cache;
  NoTape no_tape;
  for (const auto& seg : batch.history) {
    bool any = false;
    for (auto n : seg.lengths) any = any || n > 0;
    if (!any) continue;
    auto in = make_input(batch.batch_size, batch.K, seg.steps, seg.rtg, seg.lengths);
    forward(params, cfg, in, &cache);
  }
  return cache;
}

Tensor batch_loss(const ModelParams& params, const ModelConfig& cfg, const trajectory::Batch& batch,
                  const ForwardOptions& options, std::uint64_t* cache_uses) {
  if (batch.width != static_cast<std::size_t>(cfg.d_model)) {
    throw ModelError("batch_loss: encoded width " + std::to_string(batch.width) + " differs from d_model " +
                     std::to_string(cfg.d_model));
  }
  if (cfg.memory_segments > 0 && batch.history.size() != static_cast<std::size_t>(cfg.memory_segments)) {
    throw ModelError("batch_loss: batch carries " + std::to_string(batch.history.size()) +
                     " history segments, model expects " + std::to_string(cfg.memory_segments));
  }
  MemoryCache cache = build_history_cache(params, cfg, batch);
  auto in = make_input(batch.batch_size, batch.K, batch.steps, batch.rtg);
  ForwardOptions opts = options;
  opts.update_cache = false;
  auto out = forward(params, cfg, in, &cache, opts);
  if (cache_uses) *cache_uses = cache.uses();
  const Tensor targets = Tensor::from_data({batch.batch_size * batch.K, batch.width}, batch.targets);
  return mse_loss(out.predictions, targets, batch.mask);
}

}  // namespace rtgf::model

#include "rtgformer/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include "rtgformer/envdata/dataset.hpp"
#include "rtgformer/model.hpp"
#include "rtgformer/numeric/gradcheck.hpp"
#include "rtgformer/numeric/ops.hpp"
#include "rtgformer/trajectory.hpp"

namespace rtgf::verify {

using numeric::NoTape;
using numeric::Parameter;
using numeric::Shape;
using numeric::Tensor;
namespace ops = numeric;

bool GradcheckReport::passed() const {
  for (const auto& c : components) {
    if (!(c.worst < threshold)) return false;
  }
  return !components.empty();
}

const GradcheckComponent& GradcheckReport::worst() const {
  return *std::max_element(components.begin(), components.end(),
                           [](const auto& a, const auto& b) { return a.worst < b.worst; });
}

namespace {

std::vector<double> normal(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor leaf(std::mt19937_64& rng, Shape s, double sd = 1.0) {
  return Tensor::from_data(s, normal(rng, numel(s), sd), true);
}

Tensor constant(std::mt19937_64& rng, Shape s) { return Tensor::from_data(s, normal(rng, numel(s))); }

// Random linear functional of out, so every output entry carries gradient.
Tensor probe(const Tensor& out, const Tensor& w) { return ops::sum(ops::mul(out, w)); }

void perturb(model::ModelParams& p, std::mt19937_64& rng, double sd) {
  for (auto& prm : p.list()) {
    auto v = prm.tensor.data_mut();
    const auto noise = normal(rng, v.size(), sd);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
  }
}

GradcheckComponent component(std::string name, const numeric::GradCheckResult& r) {
  return {std::move(name), r.max_relative_error, r.worst_parameter + "[" + std::to_string(r.worst_index) + "]",
          r.checked};
}

// Worst over several random draws of one primitive.
GradcheckComponent primitive(const std::string& name, std::mt19937_64& rng, int trials,
                             const std::function<numeric::GradCheckResult(std::mt19937_64&)>& run) {
  GradcheckComponent worst{"numeric/" + name, 0.0, "", 0};
  for (int t = 0; t < trials; ++t) {
    auto c = component(worst.name, run(rng));
    worst.checked += c.checked;
    if (c.worst >= worst.worst) {
      worst.worst = c.worst;
      worst.worst_parameter = c.worst_parameter;
    }
  }
  return worst;
}

numeric::GradCheckResult unary(std::mt19937_64& r, Shape in, const std::function<Tensor(const Tensor&)>& op) {
  std::vector<Parameter> ps{{"x", leaf(r, in)}};
  Tensor w;
  {
    NoTape nt;
    w = constant(r, op(ps[0].tensor).shape());
  }
  return numeric::grad_check([&] { return probe(op(ps[0].tensor), w); }, ps);
}

numeric::GradCheckResult binary(std::mt19937_64& r, Shape sa, Shape sb,
                                const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
  std::vector<Parameter> ps{{"a", leaf(r, sa)}, {"b", leaf(r, sb)}};
  Tensor w;
  {
    NoTape nt;
    w = constant(r, op(ps[0].tensor, ps[1].tensor).shape());
  }
  return numeric::grad_check([&] { return probe(op(ps[0].tensor, ps[1].tensor), w); }, ps);
}

std::vector<GradcheckComponent> primitive_components(std::mt19937_64& rng) {
  const int n = 5;
  std::vector<GradcheckComponent> out;
  out.push_back(primitive("matmul", rng, n, [](auto& r) {
    return binary(r, {3, 4}, {4, 2}, [](auto& a, auto& b) { return ops::matmul(a, b); });
  }));
  out.push_back(primitive("add", rng, n, [](auto& r) {
    return binary(r, {3, 4}, {4}, [](auto& a, auto& b) { return ops::add(a, b); });
  }));
  out.push_back(primitive("sub", rng, n, [](auto& r) {
    return binary(r, {3, 4}, {3, 4}, [](auto& a, auto& b) { return ops::sub(a, b); });
  }));
  out.push_back(primitive("mul", rng, n, [](auto& r) {
    return binary(r, {2, 5}, {5}, [](auto& a, auto& b) { return ops::mul(a, b); });
  }));
  out.push_back(primitive("scale", rng, n, [](auto& r) {
    return unary(r, {3, 3}, [](auto& x) { return ops::scale(x, -1.3); });
  }));
  out.push_back(primitive("softmax", rng, n, [](auto& r) {
    return unary(r, {3, 5}, [](auto& x) { return ops::softmax(x, -1); });
  }));
  out.push_back(primitive("layer_norm", rng, n, [](auto& r) {
    std::vector<Parameter> ps{{"x", leaf(r, {3, 6})}, {"gain", leaf(r, {6})}, {"bias", leaf(r, {6})}};
    auto w = constant(r, {3, 6});
    return numeric::grad_check([&] { return probe(ops::layer_norm(ps[0].tensor, ps[1].tensor, ps[2].tensor), w); },
                               ps);
  }));
  out.push_back(primitive("gelu", rng, n, [](auto& r) {
    return unary(r, {4, 4}, [](auto& x) { return ops::gelu(x); });
  }));
  out.push_back(primitive("concat", rng, n, [](auto& r) {
    return binary(r, {2, 3}, {4, 3}, [](auto& a, auto& b) {
      std::vector<Tensor> xs{a, b};
      return ops::concat(xs, 0);
    });
  }));
  out.push_back(primitive("slice", rng, n, [](auto& r) {
    return unary(r, {3, 5}, [](auto& x) { return ops::slice(x, 1, 1, 4); });
  }));
  out.push_back(primitive("transpose", rng, n, [](auto& r) {
    return unary(r, {2, 5}, [](auto& x) { return ops::transpose(x); });
  }));
  out.push_back(primitive("reshape", rng, n, [](auto& r) {
    return unary(r, {2, 6}, [](auto& x) { return ops::reshape(x, {3, 4}); });
  }));
  out.push_back(primitive("masked_fill", rng, n, [](auto& r) {
    return unary(r, {3, 3}, [](auto& x) {
      std::vector<std::uint8_t> m{0, 1, 0, 0, 0, 1, 1, 0, 0};
      return ops::masked_fill(x, m, -3.0);
    });
  }));
  out.push_back(primitive("embedding_lookup", rng, n, [](auto& r) {
    return unary(r, {4, 3}, [](auto& x) {
      std::vector<std::size_t> ids{1, 3, 1};
      return ops::embedding_lookup(x, ids);
    });
  }));
  out.push_back(primitive("mean", rng, n, [](auto& r) {
    return unary(r, {3, 4}, [](auto& x) { return ops::mean(ops::mul(x, x)); });
  }));
  out.push_back(primitive("mse_loss", rng, n, [](auto& r) {
    std::vector<Parameter> ps{{"pred", leaf(r, {4, 3})}};
    auto target = constant(r, {4, 3});
    std::vector<std::uint8_t> mask{1, 0, 1, 1};
    return numeric::grad_check([&] { return model::mse_loss(ps[0].tensor, target, mask); }, ps);
  }));
  return out;
}

// Episodes from a tall grid so a K = 6 window can have two full segments of
// history; tokens are random width-8 vectors standing in for the encoder.
trajectory::EncodedDataset synthetic_episodes(std::mt19937_64& rng, std::size_t width) {
  envdata::CatchConfig env{7, 25};
  const auto data = envdata::generate_dataset(env, envdata::Policy::medium, 4, rng());
  trajectory::EncodedDataset out;
  out.width = width;
  for (const auto& traj : data.episodes) {
    trajectory::EncodedEpisode ep;
    ep.length = traj.length();
    ep.rtg = trajectory::compute_rtg(traj.rewards);
    ep.steps = normal(rng, ep.length * width);
    out.episodes.push_back(std::move(ep));
  }
  return out;
}

GradcheckComponent model_component(const std::string& name, model::RtgMode mode, int memory, std::mt19937_64& rng) {
  model::ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 1;
  cfg.n_layers = 2;
  cfg.context_len = 6;
  cfg.rtg_mode = mode;
  cfg.memory_segments = memory;
  auto p = model::init_params(cfg, rng());
  perturb(p, rng, 0.2);
  const auto data = synthetic_episodes(rng, 8);
  std::vector<trajectory::Pick> picks{{0, 14}, {1, 20}, {2, 12}};
  const auto batch = trajectory::assemble_batch(data, 6, static_cast<std::size_t>(memory), picks);
  const auto cache = model::build_history_cache(p, cfg, batch);
  const auto in = model::make_input(batch.batch_size, batch.K, batch.steps, batch.rtg);
  const auto targets = Tensor::from_data({batch.batch_size * batch.K, 8}, batch.targets);
  auto list = p.list();
  const auto res = numeric::grad_check(
      [&] {
        auto frozen = cache;
        model::ForwardOptions o;
        o.update_cache = false;
        return model::mse_loss(model::forward(p, cfg, in, &frozen, o).predictions, targets, batch.mask);
      },
      list);
  auto c = component(name, res);
  if (memory > 0 && cache.blocks() != static_cast<std::size_t>(memory)) {
    // A model check without its memory would not be the check that was asked for.
    c.worst = INFINITY;
    c.worst_parameter = "history cache holds " + std::to_string(cache.blocks()) + " blocks";
  }
  return c;
}

}  // namespace

GradcheckReport run_gradcheck_suite(std::uint64_t seed, double threshold) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  GradcheckReport rep;
  rep.threshold = threshold;
  rep.components = primitive_components(rng);
  rep.components.push_back(model_component("model/condition_memory", model::RtgMode::condition, 2, rng));
  rep.components.push_back(model_component("model/linear", model::RtgMode::linear, 0, rng));
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

StopGradientReport check_stop_gradient_law(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  StopGradientReport rep;
  rep.min_cache_sensitivity = INFINITY;
  const double eps = 1e-5;
  for (std::size_t n = 0; n < instances; ++n) {
    model::ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.context_len = 2 + static_cast<int>(rng() % 2);
    cfg.memory_segments = 2;
    cfg.rtg_mode = model::RtgMode::condition;
    const auto K = static_cast<std::size_t>(cfg.context_len);
    const std::size_t B = 2;
    auto p = model::init_params(cfg, rng());
    perturb(p, rng, 0.2);
    auto producer = model::clone(p);

    auto segment = [&] { return model::make_input(B, K, normal(rng, B * K * 8), normal(rng, B * K)); };
    const auto h1 = segment();
    const auto h2 = segment();
    const auto x = segment();
    const auto targets = Tensor::from_data({B * K, 8}, normal(rng, B * K * 8));
    std::vector<std::uint8_t> mask(B * K, 1);
    mask[K - 1] = 0;

    auto fill = [&](const model::ModelParams& by) {
      model::MemoryCache c(2, 2);
      model::forward(by, cfg, h1, &c);
      model::forward(by, cfg, h2, &c);
      return c;
    };
    auto loss_with = [&](model::MemoryCache c) {
      model::ForwardOptions o;
      o.update_cache = false;
      return model::mse_loss(model::forward(p, cfg, x, &c, o).predictions, targets, mask);
    };

    StopGradientInstance inst;
    p.zero_grad();
    producer.zero_grad();
    {
      numeric::Tape tape;
      numeric::Tape::Scope scope(&tape);
      auto cache = fill(producer);
      tape.backward(loss_with(std::move(cache)));
    }
    for (const auto& prm : producer.list()) {
      for (double g : prm.tensor.grad()) inst.autodiff_through_cache = std::max(inst.autodiff_through_cache, std::abs(g));
    }

    model::MemoryCache frozen;
    {
      NoTape nt;
      frozen = fill(p);
    }
    for (auto& prm : p.list()) {
      const std::vector<double> g(prm.tensor.grad().begin(), prm.tensor.grad().end());
      auto v = prm.tensor.data_mut();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        NoTape nt;
        v[i] = keep + eps;
        const double up = loss_with(frozen).item();
        v[i] = keep - eps;
        const double down = loss_with(frozen).item();
        v[i] = keep;
        const double fd = (up - down) / (2 * eps);
        const double analytic = g.empty() ? 0.0 : g[i];
        inst.fd_gap = std::max(inst.fd_gap, std::abs(analytic - fd));
        ++inst.checked;
      }
    }

    // Recomputing the cache from a perturbed producer does move the loss.
    for (auto& prm : producer.list()) {
      if (prm.name != "layer0.w_k" && prm.name != "layer0.w_v") continue;
      auto v = prm.tensor.data_mut();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        NoTape nt;
        v[i] = keep + eps;
        const double up = loss_with(fill(producer)).item();
        v[i] = keep - eps;
        const double down = loss_with(fill(producer)).item();
        v[i] = keep;
        inst.cache_sensitivity = std::max(inst.cache_sensitivity, std::abs(up - down) / (2 * eps));
      }
    }

    rep.max_autodiff_through_cache = std::max(rep.max_autodiff_through_cache, inst.autodiff_through_cache);
    rep.max_fd_gap = std::max(rep.max_fd_gap, inst.fd_gap);
    rep.min_cache_sensitivity = std::min(rep.min_cache_sensitivity, inst.cache_sensitivity);
    rep.instances.push_back(inst);
  }
  return rep;
}

}  // namespace rtgf::verify

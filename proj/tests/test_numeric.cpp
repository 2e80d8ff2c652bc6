#include "doctest.h"

#include "rtgformer/numeric/gradcheck.hpp"
#include "rtgformer/numeric/ops.hpp"
#include "rtgformer/numeric/optim.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

using namespace rtgf::numeric;

namespace {

std::vector<double> randn(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

Tensor param(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor::from_data(std::move(shape), randn(rng, n, scale), true);
}

Tensor constant(std::mt19937_64& rng, Shape shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor::from_data(std::move(shape), randn(rng, n));
}

// Weighted sum so every output entry carries a distinct, nonzero sensitivity.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  auto y = softmax(Tensor::from_data({2}, {0.0, 0.0}), 0);
  CHECK(y.data()[0] == 0.5);
  CHECK(y.data()[1] == 0.5);
}

TEST_CASE("identity matmul returns its right operand") {
  std::mt19937_64 rng(1);
  auto x = constant(rng, {3, 5});
  auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = matmul(eye, x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("layer_norm maps a constant row to the bias") {
  auto x = Tensor::full({2, 4}, 3.25);
  auto gain = Tensor::full({4}, 1.0);
  auto bias = Tensor::zeros({4});
  auto y = layer_norm(x, gain, bias);
  for (double v : y.data()) CHECK(v == 0.0);

  auto shifted = layer_norm(x, gain, Tensor::from_data({4}, {1, 2, 3, 4}));
  CHECK(shifted.at(1, 2) == 3.0);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)add(a, b), ShapeError);
  CHECK_THROWS_AS((void)softmax(a, 2), ShapeError);
  CHECK_THROWS_AS((void)slice(a, 1, 2, 5), ShapeError);
  CHECK_THROWS_AS((void)reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("stop_gradient freezes one factor of a product") {
  auto x = Tensor::from_data({1}, {3.0}, true);
  Tape tape;
  Tape::Scope scope(&tape);
  auto y = sum(mul(stop_gradient(x), x));
  tape.backward(y);
  CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("stop_gradient alone passes no gradient") {
  auto x = Tensor::from_data({1}, {5.0}, true);
  Tape tape;
  Tape::Scope scope(&tape);
  auto y = sum(stop_gradient(x));
  CHECK(y.item() == 5.0);
  CHECK_FALSE(y.requires_grad());
  tape.backward(y);
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("backward of sum of squares") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tape tape;
  Tape::Scope scope(&tape);
  tape.backward(sum(mul(x, x)));
  CHECK(grad_of(x) == std::vector<double>{2.0, 4.0});
}

TEST_CASE("mse of a tensor against itself has zero gradient") {
  auto a = Tensor::from_data({3}, {0.5, -1.0, 2.0}, true);
  Tape tape;
  Tape::Scope scope(&tape);
  auto d = sub(a, a);
  auto loss = mean(mul(d, d));
  tape.backward(loss);
  CHECK(loss.item() == 0.0);
  for (double g : a.grad()) CHECK(g == 0.0);
}

TEST_CASE("fan-out gradients accumulate") {
  auto x = Tensor::from_data({1}, {0.7}, true);
  Tape tape;
  Tape::Scope scope(&tape);
  tape.backward(sum(add(x, x)));
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tape tape;
  Tape::Scope scope(&tape);
  auto y = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("ops run without a tape produce plain values") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  auto y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.data()[1] == 4.0);
}

TEST_CASE("tape records in topological order and replays bit-identically") {
  std::mt19937_64 rng(7);
  auto w = param(rng, {4, 3});
  auto x = constant(rng, {5, 4});
  auto g = Tensor::full({3}, 1.0, true);
  auto b = Tensor::zeros({3}, true);
  Tape tape;
  Tape::Scope scope(&tape);
  auto h = layer_norm(gelu(matmul(x, w)), g, b);
  auto loss = mean(mul(softmax(h, -1), h));
  const double before = loss.item();
  const std::vector<double> hv(h.data().begin(), h.data().end());

  auto names = tape.op_names();
  REQUIRE(names.size() == 6);
  CHECK(names.front() == "matmul");
  CHECK(names.back() == "mean");

  tape.replay();
  CHECK(loss.item() == before);
  CHECK(std::vector<double>(h.data().begin(), h.data().end()) == hv);

  // Replay tracks leaf edits.
  w.data_mut()[0] += 0.5;
  tape.replay();
  CHECK(loss.item() != before);
}

TEST_CASE("forward evaluation is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(11);
    auto w = param(rng, {6, 6});
    auto x = constant(rng, {4, 6});
    auto y = softmax(matmul(gelu(matmul(x, w)), w));
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("softmax rows are a probability distribution") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = Tensor::from_data({4, 7}, randn(rng, 28, 10.0));
    for (int axis : {0, 1}) {
      auto y = softmax(x, axis);
      const std::size_t groups = axis == 1 ? 4 : 7, len = axis == 1 ? 7 : 4;
      for (std::size_t gi = 0; gi < groups; ++gi) {
        double total = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          double p = axis == 1 ? y.at(gi, i) : y.at(i, gi);
          CHECK(p >= 0.0);
          total += p;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("softmax with -inf entries assigns them zero mass") {
  auto x = Tensor::from_data({1, 3}, {0.0, -INFINITY, 0.0});
  auto y = softmax(x);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[0] == 0.5);
}

TEST_CASE("grad_check of a linear function is exact") {
  // Dyadic values and a power-of-two step keep every evaluation exact.
  std::vector<double> xs{1, -2, 3, 0.5, 4, -1.25, 2, 7, -3, 0.75, 1.5, -6};
  std::vector<Parameter> params{{"x", Tensor::from_data({3, 4}, xs, true)}};
  auto result = grad_check([&] { return sum(params[0].tensor); }, params, std::ldexp(1.0, -16));
  CHECK(result.checked == 12);
  CHECK(result.max_relative_error <= 1e-12);
}

TEST_CASE("every primitive matches central differences on random inputs") {
  std::mt19937_64 rng(2024);
  struct Case {
    const char* name;
    std::function<double(std::mt19937_64&)> run;
  };
  auto check_unary = [](std::mt19937_64& r, Shape in_shape, const std::function<Tensor(const Tensor&)>& op) {
    std::vector<Parameter> ps{{"x", param(r, in_shape)}};
    Tensor probe_w;
    {
      NoTape nt;
      Tensor out = op(ps[0].tensor);
      probe_w = constant(r, out.shape());
    }
    return grad_check([&] { return probe(op(ps[0].tensor), probe_w); }, ps).max_relative_error;
  };
  auto check_binary = [](std::mt19937_64& r, Shape sa, Shape sb,
                         const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    std::vector<Parameter> ps{{"a", param(r, sa)}, {"b", param(r, sb)}};
    Tensor probe_w;
    {
      NoTape nt;
      probe_w = constant(r, op(ps[0].tensor, ps[1].tensor).shape());
    }
    return grad_check([&] { return probe(op(ps[0].tensor, ps[1].tensor), probe_w); }, ps).max_relative_error;
  };

  std::vector<Case> cases{
      {"matmul", [&](auto& r) { return check_binary(r, {3, 4}, {4, 2}, [](auto& a, auto& b) { return matmul(a, b); }); }},
      {"add", [&](auto& r) { return check_binary(r, {3, 4}, {3, 4}, [](auto& a, auto& b) { return add(a, b); }); }},
      {"add_row", [&](auto& r) { return check_binary(r, {3, 4}, {4}, [](auto& a, auto& b) { return add(a, b); }); }},
      {"sub_row", [&](auto& r) { return check_binary(r, {3, 4}, {1, 4}, [](auto& a, auto& b) { return sub(a, b); }); }},
      {"mul", [&](auto& r) { return check_binary(r, {2, 5}, {2, 5}, [](auto& a, auto& b) { return mul(a, b); }); }},
      {"mul_row", [&](auto& r) { return check_binary(r, {2, 5}, {5}, [](auto& a, auto& b) { return mul(a, b); }); }},
      {"scale", [&](auto& r) { return check_unary(r, {3, 3}, [](auto& x) { return scale(x, -1.7); }); }},
      {"softmax_last", [&](auto& r) { return check_unary(r, {3, 5}, [](auto& x) { return softmax(x, -1); }); }},
      {"softmax_axis0", [&](auto& r) { return check_unary(r, {3, 5}, [](auto& x) { return softmax(x, 0); }); }},
      {"layer_norm",
       [&](auto& r) {
         std::vector<Parameter> ps{{"x", param(r, {3, 6})}, {"g", param(r, {6})}, {"b", param(r, {6})}};
         auto w = constant(r, {3, 6});
         return grad_check([&] { return probe(layer_norm(ps[0].tensor, ps[1].tensor, ps[2].tensor), w); }, ps)
             .max_relative_error;
       }},
      {"gelu", [&](auto& r) { return check_unary(r, {4, 4}, [](auto& x) { return gelu(x); }); }},
      {"concat_rows",
       [&](auto& r) {
         return check_binary(r, {2, 3}, {4, 3}, [](auto& a, auto& b) {
           std::vector<Tensor> xs{a, b};
           return concat(xs, 0);
         });
       }},
      {"concat_cols",
       [&](auto& r) {
         return check_binary(r, {3, 2}, {3, 4}, [](auto& a, auto& b) {
           std::vector<Tensor> xs{a, b, a};
           return concat(xs, 1);
         });
       }},
      {"slice_rows", [&](auto& r) { return check_unary(r, {5, 3}, [](auto& x) { return slice(x, 0, 1, 4); }); }},
      {"slice_cols", [&](auto& r) { return check_unary(r, {3, 5}, [](auto& x) { return slice(x, 1, 2, 5); }); }},
      {"embedding_lookup",
       [&](auto& r) {
         return check_unary(r, {4, 3}, [](auto& x) {
           std::vector<std::size_t> ids{2, 0, 2, 3};
           return embedding_lookup(x, ids);
         });
       }},
      {"transpose", [&](auto& r) { return check_unary(r, {2, 5}, [](auto& x) { return transpose(x); }); }},
      {"reshape", [&](auto& r) { return check_unary(r, {2, 6}, [](auto& x) { return reshape(x, {3, 4}); }); }},
      {"masked_fill",
       [&](auto& r) {
         return check_unary(r, {3, 3}, [](auto& x) {
           std::vector<std::uint8_t> m{0, 1, 0, 0, 0, 1, 1, 0, 0};
           return masked_fill(x, m, -4.0);
         });
       }},
      {"sum", [&](auto& r) { return check_unary(r, {3, 4}, [](auto& x) { return sum(mul(x, x)); }); }},
      {"mean", [&](auto& r) { return check_unary(r, {3, 4}, [](auto& x) { return mean(mul(x, x)); }); }},
  };

  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, c.run(rng));
    INFO("primitive ", c.name, " worst relative error ", worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("a broken gradient rule is caught by grad_check") {
  std::mt19937_64 rng(9);
  std::vector<Parameter> ps{{"x", param(rng, {3, 3})}};
  auto w = constant(rng, {3, 3});
  testing::inject_gradient_fault("gelu", 1.1);
  auto bad = grad_check([&] { return probe(gelu(ps[0].tensor), w); }, ps);
  testing::inject_gradient_fault(nullptr);
  auto good = grad_check([&] { return probe(gelu(ps[0].tensor), w); }, ps);
  CHECK(bad.max_relative_error > 0.05);
  CHECK(good.max_relative_error < 1e-6);
}

TEST_CASE("three-layer MLP with 50 parameters passes a tight gradient check") {
  std::mt19937_64 rng(42);
  std::vector<Parameter> ps{
      {"w1", param(rng, {4, 4}, 0.7)}, {"b1", param(rng, {4}, 0.1)}, {"w2", param(rng, {4, 4}, 0.7)},
      {"b2", param(rng, {4}, 0.1)},    {"w3", param(rng, {4, 2}, 0.7)}, {"b3", param(rng, {2}, 0.1)},
  };
  std::size_t count = 0;
  for (auto& p : ps) count += p.tensor.numel();
  REQUIRE(count == 50);
  auto x = constant(rng, {5, 4});
  auto y = constant(rng, {5, 2});
  auto f = [&] {
    auto h1 = gelu(add(matmul(x, ps[0].tensor), ps[1].tensor));
    auto h2 = gelu(add(matmul(h1, ps[2].tensor), ps[3].tensor));
    auto out = add(matmul(h2, ps[4].tensor), ps[5].tensor);
    auto d = sub(out, y);
    return mean(mul(d, d));
  };
  auto r = grad_check(f, ps);
  INFO("worst ", r.worst_parameter, "[", r.worst_index, "] analytic ", r.worst_analytic, " numeric ", r.worst_numeric);
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("stop_gradient composite matches differences taken with the frozen branch held fixed") {
  // g(x) = h(sg(u(x)), x) with u(x) = gelu(x W), h(c, x) = sum(c * tanh-ish(x)).
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Parameter> ps{{"x", param(rng, {2, 3})}};
    auto w = constant(rng, {3, 3});
    auto probe_w = constant(rng, {2, 3});
    Tensor frozen;
    {
      NoTape nt;
      frozen = gelu(matmul(ps[0].tensor, w));
    }
    Tape tape;
    {
      Tape::Scope scope(&tape);
      auto c = stop_gradient(gelu(matmul(ps[0].tensor, w)));
      auto g = probe(mul(c, gelu(ps[0].tensor)), probe_w);
      tape.backward(g);
    }
    std::vector<double> analytic = grad_of(ps[0].tensor);
    ps[0].tensor.zero_grad();
    auto frozen_h = [&] { return probe(mul(frozen, gelu(ps[0].tensor)), probe_w); };
    auto r = grad_check(frozen_h, ps);
    CHECK(r.max_relative_error < 1e-4);
    // Same analytic gradient as the frozen-branch function.
    Tape t2;
    {
      Tape::Scope scope(&t2);
      t2.backward(frozen_h());
    }
    for (std::size_t i = 0; i < analytic.size(); ++i) CHECK(analytic[i] == doctest::Approx(ps[0].tensor.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("adamw with zero gradient and zero weight decay leaves parameters unchanged") {
  std::vector<Parameter> ps{{"w", Tensor::from_data({3}, {1.0, -2.0, 0.5}, true)}};
  auto state = make_optimizer_state(ps, AdamWConfig{.weight_decay = 0.0});
  adamw_step(ps, state, 0.1);
  CHECK(std::vector<double>(ps[0].tensor.data().begin(), ps[0].tensor.data().end()) ==
        std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.step == 1);
  adamw_step(ps, state, 0.1);
  CHECK(state.step == 2);
}

TEST_CASE("one adamw step on w^2 moves toward zero") {
  std::vector<Parameter> ps{{"w", Tensor::from_data({1}, {1.0}, true)}};
  auto state = make_optimizer_state(ps);
  Tape tape;
  {
    Tape::Scope scope(&tape);
    tape.backward(sum(mul(ps[0].tensor, ps[0].tensor)));
  }
  adamw_step(ps, state, 0.1);
  const double w = ps[0].tensor.data()[0];
  CHECK(w < 1.0);
  CHECK(w > 0.0);
}

TEST_CASE("adamw drives a strongly convex 2-D quadratic to a stationary point within 200 steps") {
  // f(w) = 0.5 * (w0^2 + 4 w1^2) - w0 * w1, positive definite. With beta1 = 0.9
  // the momentum term keeps AdamW circling the minimum near |grad| ~ 1e-5, so
  // this run uses beta1 = 0.5.
  std::vector<Parameter> ps{{"w", Tensor::from_data({2}, {1.0, -1.0}, true)}};
  auto state = make_optimizer_state(ps, AdamWConfig{.beta1 = 0.5, .weight_decay = 0.0});
  auto gradient = [&] {
    ps[0].tensor.zero_grad();
    Tape tape;
    Tape::Scope scope(&tape);
    auto w0 = slice(ps[0].tensor, 0, 0, 1);
    auto w1 = slice(ps[0].tensor, 0, 1, 2);
    auto f = sub(add(scale(mul(w0, w0), 0.5), scale(mul(w1, w1), 2.0)), mul(w0, w1));
    tape.backward(sum(f));
    const auto g = ps[0].tensor.grad();
    return std::hypot(g[0], g[1]);
  };
  double norm = 0.0;
  for (int step = 0; step < 200; ++step) {
    norm = gradient();
    adamw_step(ps, state, 0.1);
  }
  norm = gradient();
  CHECK(norm < 1e-6);
}

TEST_CASE("non-finite gradient aborts the step and names the parameter") {
  std::vector<Parameter> ps{{"ok", Tensor::from_data({1}, {1.0}, true)}, {"bad", Tensor::from_data({1}, {1.0}, true)}};
  ps[0].tensor.node()->grad = {0.5};
  ps[1].tensor.node()->grad = {NAN};
  auto state = make_optimizer_state(ps);
  try {
    adamw_step(ps, state, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("bad") != std::string::npos);
  }
  CHECK(ps[0].tensor.data()[0] == 1.0);
  CHECK(state.step == 0);
}

TEST_CASE("gradient clipping bounds the global norm") {
  std::vector<Parameter> ps{{"a", Tensor::from_data({2}, {0.0, 0.0}, true)}};
  ps[0].tensor.node()->grad = {3.0, 4.0};
  CHECK(clip_grad_norm(ps, 1.0) == 5.0);
  CHECK(global_grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-15));
}

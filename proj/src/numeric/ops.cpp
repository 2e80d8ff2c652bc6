#include "rtgformer/numeric/ops.hpp"

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <string>

namespace rtgf::numeric {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

namespace {

std::mutex g_fault_mutex;
std::string g_fault_op;
std::atomic<double> g_fault_factor{1.0};

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

using Rule = std::function<void(Node&)>;

Tensor make_op(const char* name, Shape shape, std::vector<NodePtr> inputs, Rule fwd, Rule bwd,
               bool blocks_gradient = false) {
  auto node = std::make_shared<Node>();
  node->op = name;
  node->value.assign(numel_of(shape), 0.0);
  node->shape = std::move(shape);
  node->inputs = std::move(inputs);
  fwd(*node);
  if (Tape* tape = Tape::active()) {
    bool rg = false;
    if (!blocks_gradient) {
      for (const auto& in : node->inputs) rg = rg || in->requires_grad;
    }
    node->requires_grad = rg;
    node->forward = std::move(fwd);
    if (rg) node->backward = std::move(bwd);
    tape->record(node);
  } else {
    node->inputs.clear();
  }
  return Tensor(std::move(node));
}

enum class Broadcast { same, row };

Broadcast check_elementwise(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  const bool single_row = b.rank() <= 1 || b.rows() == 1;
  if (single_row && b.numel() == a.cols() && a.rank() >= 1) return Broadcast::row;
  shape_fail(op, a.shape(), b.shape());
}

int normalize_axis(const char* op, const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank || rank > 2) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  }
  return axis;
}

}  // namespace

namespace detail {
double gradient_fault_factor(const char* op) {
  if (g_fault_factor.load() == 1.0) return 1.0;
  std::lock_guard lock(g_fault_mutex);
  return g_fault_op == op ? g_fault_factor.load() : 1.0;
}
}  // namespace detail

namespace testing {
void inject_gradient_fault(const char* op, double factor) {
  std::lock_guard lock(g_fault_mutex);
  if (op == nullptr) {
    g_fault_op.clear();
    g_fault_factor = 1.0;
  } else {
    g_fault_op = op;
    g_fault_factor = factor;
  }
}
}  // namespace testing

Tensor add(const Tensor& a, const Tensor& b) {
  const auto mode = check_elementwise("add", a, b);
  return make_op(
      "add", a.shape(), {a.node(), b.node()},
      [mode](Node& n) {
        const auto& x = n.inputs[0]->value;
        const auto& y = n.inputs[1]->value;
        const std::size_t c = y.size();
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] + (mode == Broadcast::same ? y[i] : y[i % c]);
      },
      [mode](Node& n) {
        auto& x = *n.inputs[0];
        auto& y = *n.inputs[1];
        if (x.requires_grad) {
          double* gx = x.grad_buffer();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
        }
        if (y.requires_grad) {
          double* gy = y.grad_buffer();
          const std::size_t c = y.value.size();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gy[mode == Broadcast::same ? i : i % c] += n.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto mode = check_elementwise("sub", a, b);
  return make_op(
      "sub", a.shape(), {a.node(), b.node()},
      [mode](Node& n) {
        const auto& x = n.inputs[0]->value;
        const auto& y = n.inputs[1]->value;
        const std::size_t c = y.size();
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] - (mode == Broadcast::same ? y[i] : y[i % c]);
      },
      [mode](Node& n) {
        auto& x = *n.inputs[0];
        auto& y = *n.inputs[1];
        if (x.requires_grad) {
          double* gx = x.grad_buffer();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
        }
        if (y.requires_grad) {
          double* gy = y.grad_buffer();
          const std::size_t c = y.value.size();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gy[mode == Broadcast::same ? i : i % c] -= n.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto mode = check_elementwise("mul", a, b);
  return make_op(
      "mul", a.shape(), {a.node(), b.node()},
      [mode](Node& n) {
        const auto& x = n.inputs[0]->value;
        const auto& y = n.inputs[1]->value;
        const std::size_t c = y.size();
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] * (mode == Broadcast::same ? y[i] : y[i % c]);
      },
      [mode](Node& n) {
        auto& x = *n.inputs[0];
        auto& y = *n.inputs[1];
        const std::size_t c = y.value.size();
        if (x.requires_grad) {
          double* gx = x.grad_buffer();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] * y.value[mode == Broadcast::same ? i : i % c];
        }
        if (y.requires_grad) {
          double* gy = y.grad_buffer();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gy[mode == Broadcast::same ? i : i % c] += n.grad[i] * x.value[i];
        }
      });
}

Tensor scale(const Tensor& x, double factor) {
  return make_op(
      "scale", x.shape(), {x.node()},
      [factor](Node& n) {
        const auto& v = n.inputs[0]->value;
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = v[i] * factor;
      },
      [factor](Node& n) {
        double* g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * factor;
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  return make_op(
      "matmul", {m, p}, {a.node(), b.node()},
      [m, k, p](Node& n) {
        ConstMap x(n.inputs[0]->value.data(), m, k);
        ConstMap y(n.inputs[1]->value.data(), k, p);
        MutMap out(n.value.data(), m, p);
        out.noalias() = x * y;
      },
      [m, k, p](Node& n) {
        auto& x = *n.inputs[0];
        auto& y = *n.inputs[1];
        ConstMap g(n.grad.data(), m, p);
        if (x.requires_grad) {
          MutMap gx(x.grad_buffer(), m, k);
          gx.noalias() += g * ConstMap(y.value.data(), k, p).transpose();
        }
        if (y.requires_grad) {
          MutMap gy(y.grad_buffer(), k, p);
          gy.noalias() += ConstMap(x.value.data(), m, k).transpose() * g;
        }
      });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  return make_op(
      "transpose", {c, r}, {x.node()},
      [r, c](Node& n) { MutMap(n.value.data(), c, r) = ConstMap(n.inputs[0]->value.data(), r, c).transpose(); },
      [r, c](Node& n) {
        MutMap(n.inputs[0]->grad_buffer(), r, c) += ConstMap(n.grad.data(), c, r).transpose();
      });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis("softmax", x, axis);
  const bool last = axis == static_cast<int>(x.rank()) - 1;
  const std::size_t groups = last ? x.rows() : x.cols();
  const std::size_t len = last ? x.cols() : x.rows();
  const std::size_t stride = last ? 1 : x.cols();
  const std::size_t group_step = last ? x.cols() : 1;
  return make_op(
      "softmax", x.shape(), {x.node()},
      [=](Node& n) {
        const auto& v = n.inputs[0]->value;
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t base = g * group_step;
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, v[base + i * stride]);
          double total = 0.0;
          for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(v[base + i * stride] - mx);
            n.value[base + i * stride] = e;
            total += e;
          }
          for (std::size_t i = 0; i < len; ++i) n.value[base + i * stride] /= total;
        }
      },
      [=](Node& n) {
        double* gx = n.inputs[0]->grad_buffer();
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t base = g * group_step;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += n.grad[base + i * stride] * n.value[base + i * stride];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t j = base + i * stride;
            gx[j] += n.value[j] * (n.grad[j] - dot);
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t c = x.cols();
  if (gain.numel() != c) shape_fail("layer_norm", x.shape(), gain.shape());
  if (bias.numel() != c) shape_fail("layer_norm", x.shape(), bias.shape());
  const std::size_t r = x.rows();
  // Per-row (mean, 1/std), refreshed by every forward evaluation.
  auto stats = std::make_shared<std::vector<double>>(2 * r);
  return make_op(
      "layer_norm", x.shape(), {x.node(), gain.node(), bias.node()},
      [r, c, stats](Node& n) {
        const auto& v = n.inputs[0]->value;
        const auto& g = n.inputs[1]->value;
        const auto& b = n.inputs[2]->value;
        for (std::size_t i = 0; i < r; ++i) {
          const double* row = v.data() + i * c;
          double mu = 0.0;
          for (std::size_t j = 0; j < c; ++j) mu += row[j];
          mu /= static_cast<double>(c);
          double var = 0.0;
          for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
          var /= static_cast<double>(c);
          const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
          (*stats)[2 * i] = mu;
          (*stats)[2 * i + 1] = rstd;
          for (std::size_t j = 0; j < c; ++j) n.value[i * c + j] = (row[j] - mu) * rstd * g[j] + b[j];
        }
      },
      [r, c, stats](Node& n) {
        auto& xn = *n.inputs[0];
        auto& gn = *n.inputs[1];
        auto& bn = *n.inputs[2];
        std::vector<double> xhat(c), dxhat(c);
        for (std::size_t i = 0; i < r; ++i) {
          const double mu = (*stats)[2 * i];
          const double rstd = (*stats)[2 * i + 1];
          const double* row = xn.value.data() + i * c;
          const double* gy = n.grad.data() + i * c;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            xhat[j] = (row[j] - mu) * rstd;
            dxhat[j] = gy[j] * gn.value[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[j];
          }
          mean_d /= static_cast<double>(c);
          mean_dx /= static_cast<double>(c);
          if (xn.requires_grad) {
            double* gx = xn.grad_buffer() + i * c;
            for (std::size_t j = 0; j < c; ++j) gx[j] += rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
          }
          if (gn.requires_grad) {
            double* gg = gn.grad_buffer();
            for (std::size_t j = 0; j < c; ++j) gg[j] += gy[j] * xhat[j];
          }
          if (bn.requires_grad) {
            double* gb = bn.grad_buffer();
            for (std::size_t j = 0; j < c; ++j) gb[j] += gy[j];
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  return make_op(
      "gelu", x.shape(), {x.node()},
      [](Node& n) {
        const auto& v = n.inputs[0]->value;
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double z = v[i];
          n.value[i] = 0.5 * z * (1.0 + std::tanh(kC * (z + kA * z * z * z)));
        }
      },
      [](Node& n) {
        auto& in = *n.inputs[0];
        double* g = in.grad_buffer();
        for (std::size_t i = 0; i < in.value.size(); ++i) {
          const double z = in.value[i];
          const double t = std::tanh(kC * (z + kA * z * z * z));
          const double d = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * z * z);
          g[i] += n.grad[i] * d;
        }
      });
}

Tensor concat(std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = xs.front();
  axis = normalize_axis("concat", first, axis);
  std::vector<NodePtr> inputs;
  inputs.reserve(xs.size());
  const bool along_rows = axis == 0;
  Shape out = first.shape();
  out[axis] = 0;
  for (const auto& t : xs) {
    if (t.rank() != first.rank()) shape_fail("concat", first.shape(), t.shape());
    for (std::size_t d = 0; d < t.rank(); ++d) {
      if (static_cast<int>(d) != axis && t.shape()[d] != first.shape()[d]) shape_fail("concat", first.shape(), t.shape());
    }
    out[axis] += t.shape()[axis];
    inputs.push_back(t.node());
  }
  if (along_rows) {
    // Row-major storage makes axis-0 concatenation a plain append.
    return make_op(
        "concat", out, std::move(inputs),
        [](Node& n) {
          std::size_t off = 0;
          for (const auto& in : n.inputs) {
            std::memcpy(n.value.data() + off, in->value.data(), in->value.size() * sizeof(double));
            off += in->value.size();
          }
        },
        [](Node& n) {
          std::size_t off = 0;
          for (const auto& in : n.inputs) {
            if (in->requires_grad) {
              double* g = in->grad_buffer();
              for (std::size_t i = 0; i < in->value.size(); ++i) g[i] += n.grad[off + i];
            }
            off += in->value.size();
          }
        });
  }
  const std::size_t rows = out[0];
  const std::size_t total_cols = out[1];
  return make_op(
      "concat", out, std::move(inputs),
      [rows, total_cols](Node& n) {
        std::size_t col_off = 0;
        for (const auto& in : n.inputs) {
          const std::size_t c = in->shape[1];
          for (std::size_t r = 0; r < rows; ++r) {
            std::memcpy(n.value.data() + r * total_cols + col_off, in->value.data() + r * c, c * sizeof(double));
          }
          col_off += c;
        }
      },
      [rows, total_cols](Node& n) {
        std::size_t col_off = 0;
        for (const auto& in : n.inputs) {
          const std::size_t c = in->shape[1];
          if (in->requires_grad) {
            double* g = in->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < c; ++j) g[r * c + j] += n.grad[r * total_cols + col_off + j];
            }
          }
          col_off += c;
        }
      });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  axis = normalize_axis("slice", x, axis);
  if (begin >= end || end > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of shape " + shape_str(x.shape()));
  }
  Shape out = x.shape();
  out[axis] = end - begin;
  if (axis == 0) {
    const std::size_t width = x.numel() / x.shape()[0];
    return make_op(
        "slice", out, {x.node()},
        [=](Node& n) {
          std::memcpy(n.value.data(), n.inputs[0]->value.data() + begin * width, n.value.size() * sizeof(double));
        },
        [=](Node& n) {
          double* g = n.inputs[0]->grad_buffer() + begin * width;
          for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        });
  }
  const std::size_t rows = x.shape()[0], cols = x.shape()[1], w = end - begin;
  return make_op(
      "slice", out, {x.node()},
      [=](Node& n) {
        for (std::size_t r = 0; r < rows; ++r) {
          std::memcpy(n.value.data() + r * w, n.inputs[0]->value.data() + r * cols + begin, w * sizeof(double));
        }
      },
      [=](Node& n) {
        double* g = n.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < w; ++j) g[r * cols + begin + j] += n.grad[r * w + j];
        }
      });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  const std::size_t n_rows = table.shape()[0], width = table.shape()[1];
  for (auto id : ids) {
    if (id >= n_rows) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range for table " +
                       shape_str(table.shape()));
    }
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_op(
      "embedding_lookup", {idx.size(), width}, {table.node()},
      [idx, width](Node& n) {
        for (std::size_t r = 0; r < idx.size(); ++r) {
          std::memcpy(n.value.data() + r * width, n.inputs[0]->value.data() + idx[r] * width, width * sizeof(double));
        }
      },
      [idx, width](Node& n) {
        double* g = n.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t j = 0; j < width; ++j) g[idx[r] * width + j] += n.grad[r * width + j];
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  return make_op(
      "reshape", std::move(shape), {x.node()}, [](Node& n) { n.value = n.inputs[0]->value; },
      [](Node& n) {
        double* g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != x.numel()) shape_fail("masked_fill", x.shape(), Shape{mask.size()});
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_op(
      "masked_fill", x.shape(), {x.node()},
      [m, value](Node& n) {
        const auto& v = n.inputs[0]->value;
        for (std::size_t i = 0; i < v.size(); ++i) n.value[i] = m[i] ? value : v[i];
      },
      [m](Node& n) {
        double* g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          if (!m[i]) g[i] += n.grad[i];
        }
      });
}

Tensor sum(const Tensor& x) {
  return make_op(
      "sum", {}, {x.node()},
      [](Node& n) {
        double s = 0.0;
        for (double v : n.inputs[0]->value) s += v;
        n.value[0] = s;
      },
      [](Node& n) {
        double* g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < n.inputs[0]->value.size(); ++i) g[i] += n.grad[0];
      });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_op(
      "mean", {}, {x.node()},
      [inv](Node& n) {
        double s = 0.0;
        for (double v : n.inputs[0]->value) s += v;
        n.value[0] = s * inv;
      },
      [inv](Node& n) {
        double* g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < n.inputs[0]->value.size(); ++i) g[i] += n.grad[0] * inv;
      });
}

Tensor stop_gradient(const Tensor& x) {
  return make_op(
      "stop_gradient", x.shape(), {x.node()}, [](Node& n) { n.value = n.inputs[0]->value; }, [](Node&) {},
      /*blocks_gradient=*/true);
}

}  // namespace rtgf::numeric

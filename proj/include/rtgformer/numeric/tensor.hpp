#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtgf::numeric {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  // Empty until something flows into it during backward.
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> forward;
  std::function<void(Node&)> backward;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    grad[i] += g;
  }
  double* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

}  // namespace detail

/// Dense row-major float64 tensor with a shared handle to its autodiff node.
///
/// Copies are shallow: two Tensor values may alias the same storage. Ops never
/// mutate their inputs; only leaves (parameters) are written in place, through
/// data_mut(), and only between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  // Matrix view: all leading axes folded into rows.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  std::span<double> data_mut() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  const char* op_name() const { return node_->op; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the primitive ops executed while it is active.
///
/// One tape per thread may be active at a time (see Scope). Ops executed with
/// no active tape produce plain values with requires_grad = false.
class Tape {
 public:
  class Scope {
   public:
    explicit Scope(Tape* tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void record(std::shared_ptr<detail::Node> node) { ops_.push_back(std::move(node)); }
  std::size_t size() const { return ops_.size(); }
  std::vector<std::string> op_names() const;

  /// Reverse-mode sweep. Leaf gradients accumulate across calls until zero_grad.
  void backward(const Tensor& loss);

  /// Re-runs every recorded op's forward rule in order, from current leaf values.
  void replay();

  void clear() { ops_.clear(); }

 private:
  std::vector<std::shared_ptr<detail::Node>> ops_;
};

/// Suspends recording on the current thread.
class NoTape {
 public:
  NoTape() : scope_(nullptr) {}

 private:
  Tape::Scope scope_;
};

/// backward() on the thread's active tape.
void backward(const Tensor& loss);

struct Parameter {
  std::string name;
  Tensor tensor;
};

}  // namespace rtgf::numeric

#include "rtgformer/numeric/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace rtgf::numeric {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized axis in shape " + shape_str(shape));
  }
  if (data.size() != product(shape)) {
    throw ShapeError("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, std::vector<double>{value}, requires_grad));
}

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() <= 1) return 1;
  return numel() / s.back();
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  return s.empty() ? 1 : s.back();
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

Tape::Scope::Scope(Tape* tape) : previous_(g_active_tape) { g_active_tape = tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const auto& op : ops_) names.emplace_back(op->op);
  return names;
}

namespace detail {
double gradient_fault_factor(const char* op);
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto& root = loss.node();
  if (!root->requires_grad) return;

  auto it = std::find(ops_.rbegin(), ops_.rend(), root);
  if (it == ops_.rend() && root->backward) {
    throw NumericError("backward: loss was not recorded on this tape");
  }
  for (auto& op : ops_) op->grad.clear();
  root->accumulate(0, 1.0);

  for (; it != ops_.rend(); ++it) {
    detail::Node& node = **it;
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    if (double f = detail::gradient_fault_factor(node.op); f != 1.0) {
      for (auto& g : node.grad) g *= f;
    }
    node.backward(node);
  }
}

void Tape::replay() {
  for (auto& op : ops_) {
    if (op->forward) op->forward(*op);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw NumericError("backward: no active tape");
  tape->backward(loss);
}

}  // namespace rtgf::numeric

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ps {

using Shape = std::vector<int>;

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline long long numel_of(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Value-semantics handle onto a graph node. Tensors are immutable after the
// forward pass that created them; parameter leaves are mutated only by the
// optimizer between steps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(s);
    n->data.assign(static_cast<size_t>(numel_of(n->shape)), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape s, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(s), requires_grad);
    for (auto& x : t.data()) x = v;
    return t;
  }

  static Tensor from(Shape s, std::vector<double> d, bool requires_grad = false) {
    if (static_cast<long long>(d.size()) != numel_of(s))
      throw DimensionError("tensor data length does not match shape");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(s);
    n->data = std::move(d);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  long long numel() const { return static_cast<long long>(n_->data.size()); }
  std::vector<double>& data() const { return n_->data; }
  std::vector<double>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  double item() const {
    if (n_->data.size() != 1) throw ContractError("item() on non-scalar tensor");
    return n_->data[0];
  }
  double at(size_t i) const { return n_->data[i]; }
  const NodePtr& node() const { return n_; }

  void zero_grad() const { n_->grad.assign(n_->data.size(), 0.0); }

 private:
  NodePtr n_;
};

// Reverse-mode sweep from a scalar loss. Populates grad on every
// requires_grad leaf reachable from the loss, then severs graph edges so
// intermediate nodes can be reclaimed (leaves keep their grads).
void backward(const Tensor& loss);

bool all_finite(const std::vector<double>& v);

}  // namespace ps

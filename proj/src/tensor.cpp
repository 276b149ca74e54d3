#include "protoshape/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace ps {

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a defined scalar loss");

  // Iterative post-order DFS; post-order guarantees parents precede children
  // in `order`, so the reverse walk is a valid reverse-topological sweep.
  std::vector<TensorNode*> order;
  std::vector<NodePtr> keepalive;  // holds shared ownership during the sweep
  std::unordered_set<TensorNode*> seen;
  struct Frame {
    TensorNode* n;
    size_t next_parent;
  };
  std::vector<Frame> stack{{loss.node().get(), 0}};
  keepalive.push_back(loss.node());
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      NodePtr p = f.n->parents[f.next_parent++];
      if (seen.insert(p.get()).second) {
        keepalive.push_back(p);
        stack.push_back({p.get(), 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && n->grad.size() == n->data.size()) n->backward(*n);
  }
  // Clear the recorded graph; leaves keep data and grad.
  for (TensorNode* n : order) {
    n->parents.clear();
    n->backward = nullptr;
  }
}

}  // namespace ps

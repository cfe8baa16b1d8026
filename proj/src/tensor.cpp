#include "crowdfm/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "crowdfm/common.hpp"

namespace crowdfm::ad {

namespace {

thread_local bool t_grad_enabled = true;

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorKind::kInvalidShape, "negative dimension in " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (size_t i = 0; i < shape.size(); ++i) out << (i ? " x " : "") << shape[i];
  out << ']';
  return out.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(shape_numel(shape), 0.0f);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorKind::kInvalidShape, "data length " + std::to_string(data.size()) +
                                              " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value) { return from_data({1, 1}, {value}); }

Tensor Tensor::row(std::vector<float> data, bool requires_grad) {
  const int n = static_cast<int>(data.size());
  return from_data({1, n}, std::move(data), requires_grad);
}

float Tensor::item() const {
  if (numel() != 1) {
    throw Error(ErrorKind::kInvalidShape, "item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw Error(ErrorKind::kInvalidShape, "backward() needs a scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace crowdfm::ad

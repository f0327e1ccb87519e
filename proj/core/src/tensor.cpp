#include "fino/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace fino {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) raise_contract("tensor: negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename S>
Tensor<S> Tensor<S>::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
  return full(std::move(shape), S(0), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::full(std::vector<std::int64_t> shape, S value,
                          bool requires_grad) {
  Tensor<S> t;
  auto impl = std::make_shared<TensorImpl<S>>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  t.impl() = std::move(impl);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::from_data(std::vector<std::int64_t> shape,
                               std::vector<S> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    raise_contract("tensor: data size " + std::to_string(values.size()) +
                   " does not match shape " + shape_str(shape));
  Tensor<S> t;
  auto impl = std::make_shared<TensorImpl<S>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  t.impl() = std::move(impl);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename S>
std::int64_t Tensor<S>::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    raise_contract("tensor: axis " + std::to_string(axis) +
                   " out of range for shape " + shape_str(s));
  return s[axis];
}

template <typename S>
S Tensor<S>::item() const {
  if (numel() != 1)
    raise_contract("tensor: item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

template <typename S>
OpGraph<S> OpGraph<S>::build(const Tensor<S>& root) {
  OpGraph<S> g;
  if (!root.defined()) raise_contract("graph: undefined root");
  // Iterative post-order DFS; each node enters `order` after its parents.
  std::unordered_set<const TensorImpl<S>*> seen;
  std::vector<std::pair<TensorImpl<S>*, size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl<S>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      g.order.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

template <typename S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined()) raise_contract("backward: undefined loss");
  if (loss.numel() != 1)
    raise_contract("backward: loss must be scalar, got shape " +
                   shape_str(loss.shape()));
  auto graph = OpGraph<S>::build(loss);
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = S(1);
  for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
    TensorImpl<S>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class Tensor<float>;
template class Tensor<double>;
template struct OpGraph<float>;
template struct OpGraph<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace fino

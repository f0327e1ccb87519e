#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fino/error.hpp"

namespace fino {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_str(const std::vector<std::int64_t>& shape);

// Thread-local switch for tape recording. Inference paths disable it so
// forward ops allocate no graph state.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// One node of the reverse-mode tape. `backward_fn` reads this node's grad
// and accumulates into the parents' grads; it owns whatever forward-pass
// state it needs (masks, argmax indices, normalized activations).
template <typename S>
struct TensorImpl {
  std::vector<std::int64_t> shape;
  std::vector<S> data;
  std::vector<S> grad;  // same length as data once touched by backward()
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl<S>>> parents;
  std::function<void(TensorImpl<S>&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

// Value-semantic handle; copies alias the same node. Scalars have shape {}.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape,
                      bool requires_grad = false);
  static Tensor full(std::vector<std::int64_t> shape, S value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<std::int64_t> shape,
                          std::vector<S> values, bool requires_grad = false);
  static Tensor scalar(S value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::int64_t>& shape() const { return check()->shape; }
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(check()->shape.size()); }
  std::int64_t numel() const { return check()->numel(); }

  S* data() { return check()->data.data(); }
  const S* data() const { return check()->data.data(); }
  std::vector<S>& values() { return check()->data; }
  const std::vector<S>& values() const { return check()->data; }

  // Null until backward() has reached this tensor.
  S* grad() { return impl_ && !impl_->grad.empty() ? impl_->grad.data() : nullptr; }
  const S* grad() const {
    return impl_ && !impl_->grad.empty() ? impl_->grad.data() : nullptr;
  }
  std::vector<S> grad_vector() const {
    return impl_ ? impl_->grad : std::vector<S>{};
  }
  void zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), S(0));
  }

  S item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) { check()->requires_grad = on; }

  const char* op() const { return check()->op; }
  std::shared_ptr<TensorImpl<S>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<S>> check() const {
    if (!impl_) raise_contract("tensor: use of an undefined tensor");
    return impl_;
  }
  std::shared_ptr<TensorImpl<S>> impl_;
};

// Topological order of the tape reachable from a root; parents precede
// consumers, each node listed once.
template <typename S>
struct OpGraph {
  std::vector<TensorImpl<S>*> order;
  static OpGraph build(const Tensor<S>& root);
};

// Reverse-mode sweep from a scalar loss. Fills grad on every tensor that
// requires grad and is reachable from `loss`; visits each node exactly once.
template <typename S>
void backward(const Tensor<S>& loss);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

extern template struct TensorImpl<float>;
extern template struct TensorImpl<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;
extern template struct OpGraph<float>;
extern template struct OpGraph<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace fino

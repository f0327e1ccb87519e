#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "fino/tensor.hpp"

namespace fino::detail {

// Wraps a computed forward result into a tensor, recording the tape edge
// only when grad mode is on and some parent is tracked. `make_backward` is
// invoked lazily so saved-for-backward state is never captured on
// inference paths.
template <typename S, typename MakeBackward>
Tensor<S> make_op(const char* op, std::vector<std::int64_t> shape,
                  std::vector<S> data,
                  std::vector<std::shared_ptr<TensorImpl<S>>> parents,
                  MakeBackward&& make_backward) {
  Tensor<S> out = Tensor<S>::from_data(std::move(shape), std::move(data));
  out.impl()->op = op;
  bool track = false;
  if (GradMode::enabled())
    for (const auto& p : parents)
      if (p && p->requires_grad) track = true;
  if (track) {
    out.impl()->requires_grad = true;
    out.impl()->parents = std::move(parents);
    out.impl()->backward_fn = make_backward();
  }
  return out;
}

template <typename S>
void accumulate(TensorImpl<S>& dst, const S* src, std::int64_t n) {
  dst.ensure_grad();
  for (std::int64_t i = 0; i < n; ++i) dst.grad[static_cast<size_t>(i)] += src[i];
}

}  // namespace fino::detail

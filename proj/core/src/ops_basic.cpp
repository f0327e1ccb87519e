#include <algorithm>
#include <cmath>

#include "fino/ops.hpp"
#include "ops_common.hpp"

namespace fino {

using detail::make_op;

namespace {

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    raise_contract(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape("add", a, b);
  std::vector<S> out(a.values());
  const S* bp = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
  return make_op<S>("add", a.shape(), std::move(out), {a.impl(), b.impl()},
                    [&] {
                      return [](TensorImpl<S>& node) {
                        const std::int64_t n = node.numel();
                        for (auto& parent : node.parents)
                          if (parent->requires_grad)
                            detail::accumulate(*parent, node.grad.data(), n);
                      };
                    });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape("mul", a, b);
  std::vector<S> out(a.values());
  const S* bp = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bp[i];
  return make_op<S>("mul", a.shape(), std::move(out), {a.impl(), b.impl()},
                    [&] {
                      return [](TensorImpl<S>& node) {
                        const std::int64_t n = node.numel();
                        auto& pa = *node.parents[0];
                        auto& pb = *node.parents[1];
                        if (pa.requires_grad) {
                          pa.ensure_grad();
                          for (std::int64_t i = 0; i < n; ++i)
                            pa.grad[static_cast<size_t>(i)] +=
                                node.grad[static_cast<size_t>(i)] *
                                pb.data[static_cast<size_t>(i)];
                        }
                        if (pb.requires_grad) {
                          pb.ensure_grad();
                          for (std::int64_t i = 0; i < n; ++i)
                            pb.grad[static_cast<size_t>(i)] +=
                                node.grad[static_cast<size_t>(i)] *
                                pa.data[static_cast<size_t>(i)];
                        }
                      };
                    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double factor) {
  std::vector<S> out(a.values());
  const S f = static_cast<S>(factor);
  for (auto& v : out) v *= f;
  return make_op<S>("scale", a.shape(), std::move(out), {a.impl()}, [&] {
    return [f](TensorImpl<S>& node) {
      auto& pa = *node.parents[0];
      if (!pa.requires_grad) return;
      pa.ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i)
        pa.grad[i] += node.grad[i] * f;
    };
  });
}

template <typename S>
Tensor<S> pointwise(const Tensor<S>& x, Pointwise fn) {
  std::vector<S> out(x.values());
  switch (fn) {
    case Pointwise::Relu:
      for (auto& v : out) v = v > S(0) ? v : S(0);
      break;
    case Pointwise::Sigmoid:
      for (auto& v : out) v = S(1) / (S(1) + std::exp(-v));
      break;
    case Pointwise::Tanh:
      for (auto& v : out) v = std::tanh(v);
      break;
  }
  const char* name = fn == Pointwise::Relu      ? "relu"
                     : fn == Pointwise::Sigmoid ? "sigmoid"
                                                : "tanh";
  return make_op<S>(name, x.shape(), std::move(out), {x.impl()}, [&] {
    return [fn](TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      const size_t n = node.data.size();
      switch (fn) {
        case Pointwise::Relu:
          for (size_t i = 0; i < n; ++i)
            if (px.data[i] > S(0)) px.grad[i] += node.grad[i];
          break;
        case Pointwise::Sigmoid:
          for (size_t i = 0; i < n; ++i) {
            S y = node.data[i];
            px.grad[i] += node.grad[i] * y * (S(1) - y);
          }
          break;
        case Pointwise::Tanh:
          for (size_t i = 0; i < n; ++i) {
            S y = node.data[i];
            px.grad[i] += node.grad[i] * (S(1) - y * y);
          }
          break;
      }
    };
  });
}

template <typename S> Tensor<S> relu(const Tensor<S>& x) {
  return pointwise(x, Pointwise::Relu);
}
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x) {
  return pointwise(x, Pointwise::Sigmoid);
}
template <typename S> Tensor<S> tanh_op(const Tensor<S>& x) {
  return pointwise(x, Pointwise::Tanh);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<std::int64_t> new_shape) {
  if (shape_numel(new_shape) != x.numel())
    raise_contract("reshape: cannot view " + shape_str(x.shape()) + " as " +
                   shape_str(new_shape));
  std::vector<S> out(x.values());
  return make_op<S>("reshape", std::move(new_shape), std::move(out),
                    {x.impl()}, [&] {
                      return [](TensorImpl<S>& node) {
                        auto& px = *node.parents[0];
                        if (!px.requires_grad) return;
                        detail::accumulate(px, node.grad.data(), node.numel());
                      };
                    });
}

template <typename S>
Tensor<S> slice0(const Tensor<S>& x, std::int64_t index) {
  if (x.ndim() < 1) raise_contract("slice0: scalar input");
  const std::int64_t n0 = x.dim(0);
  if (index < 0 || index >= n0)
    raise_contract("slice0: index " + std::to_string(index) +
                   " out of range for " + shape_str(x.shape()));
  std::vector<std::int64_t> out_shape(x.shape().begin() + 1, x.shape().end());
  const std::int64_t inner = shape_numel(out_shape);
  std::vector<S> out(x.data() + index * inner, x.data() + (index + 1) * inner);
  return make_op<S>("slice0", std::move(out_shape), std::move(out), {x.impl()},
                    [&] {
                      return [index, inner](TensorImpl<S>& node) {
                        auto& px = *node.parents[0];
                        if (!px.requires_grad) return;
                        px.ensure_grad();
                        for (std::int64_t i = 0; i < inner; ++i)
                          px.grad[static_cast<size_t>(index * inner + i)] +=
                              node.grad[static_cast<size_t>(i)];
                      };
                    });
}

template <typename S>
std::vector<Tensor<S>> chunk0(const Tensor<S>& x, int parts) {
  if (x.ndim() < 1 || parts <= 0 || x.dim(0) % parts != 0)
    raise_contract("chunk0: cannot split axis 0 of " + shape_str(x.shape()) +
                   " into " + std::to_string(parts) + " parts");
  std::vector<std::int64_t> part_shape = x.shape();
  part_shape[0] /= parts;
  const std::int64_t inner = shape_numel(part_shape);
  std::vector<Tensor<S>> out;
  out.reserve(static_cast<size_t>(parts));
  for (int p = 0; p < parts; ++p) {
    std::vector<S> vals(x.data() + p * inner, x.data() + (p + 1) * inner);
    out.push_back(make_op<S>(
        "chunk0", part_shape, std::move(vals), {x.impl()}, [&] {
          const std::int64_t offset = p * inner;
          return [offset, inner](TensorImpl<S>& node) {
            auto& px = *node.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (std::int64_t i = 0; i < inner; ++i)
              px.grad[static_cast<size_t>(offset + i)] +=
                  node.grad[static_cast<size_t>(i)];
          };
        }));
  }
  return out;
}

namespace {

template <typename S>
Tensor<S> join0(const char* op, const std::vector<Tensor<S>>& parts,
                bool new_axis) {
  if (parts.empty()) raise_contract(std::string(op) + ": no inputs");
  const auto& first_shape = parts[0].shape();
  if (!new_axis && first_shape.empty())
    raise_contract("concat0: scalar inputs");
  for (const auto& p : parts) {
    const auto& shape = p.shape();
    // Stacking needs identical shapes; concatenation lets axis 0 vary.
    const bool match =
        new_axis ? shape == first_shape
                 : shape.size() == first_shape.size() &&
                       std::equal(shape.begin() + 1, shape.end(),
                                  first_shape.begin() + 1);
    if (!match)
      raise_contract(std::string(op) + ": shape mismatch " +
                     shape_str(shape) + " vs " + shape_str(first_shape));
  }

  std::vector<std::int64_t> out_shape;
  std::int64_t total = 0;
  for (const auto& p : parts) total += p.numel();
  if (new_axis) {
    out_shape.push_back(static_cast<std::int64_t>(parts.size()));
    out_shape.insert(out_shape.end(), first_shape.begin(), first_shape.end());
  } else {
    out_shape = first_shape;
    out_shape[0] = 0;
    for (const auto& p : parts) out_shape[0] += p.shape()[0];
  }

  std::vector<S> data;
  data.reserve(static_cast<size_t>(total));
  std::vector<std::shared_ptr<TensorImpl<S>>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) {
    data.insert(data.end(), p.values().begin(), p.values().end());
    impls.push_back(p.impl());
  }
  return make_op<S>(op, std::move(out_shape), std::move(data), std::move(impls),
                    [&] {
                      return [](TensorImpl<S>& node) {
                        std::int64_t offset = 0;
                        for (size_t p = 0; p < node.parents.size(); ++p) {
                          auto& parent = *node.parents[p];
                          const std::int64_t n = parent.numel();
                          if (parent.requires_grad) {
                            parent.ensure_grad();
                            const S* g = node.grad.data() + offset;
                            for (std::int64_t i = 0; i < n; ++i)
                              parent.grad[static_cast<size_t>(i)] += g[i];
                          }
                          offset += n;
                        }
                      };
                    });
}

}  // namespace

template <typename S>
Tensor<S> concat0(const std::vector<Tensor<S>>& parts) {
  return join0("concat0", parts, false);
}

template <typename S>
Tensor<S> stack0(const std::vector<Tensor<S>>& parts) {
  return join0("stack0", parts, true);
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  double total = 0.0;
  for (const S& v : x.values()) total += static_cast<double>(v);
  return make_op<S>("sum", {}, std::vector<S>{static_cast<S>(total)},
                    {x.impl()}, [&] {
                      return [](TensorImpl<S>& node) {
                        auto& px = *node.parents[0];
                        if (!px.requires_grad) return;
                        px.ensure_grad();
                        const S g = node.grad[0];
                        for (auto& v : px.grad) v += g;
                      };
                    });
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.ndim() != 3)
    raise_contract("global_avg_pool: expected [C,H,W], got " +
                   shape_str(x.shape()));
  const std::int64_t c = x.dim(0), spatial = x.dim(1) * x.dim(2);
  if (spatial == 0) raise_contract("global_avg_pool: empty plane");
  std::vector<S> out(static_cast<size_t>(c));
  const S* xp = x.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::int64_t i = 0; i < spatial; ++i)
      s += static_cast<double>(xp[ch * spatial + i]);
    out[static_cast<size_t>(ch)] = static_cast<S>(s / static_cast<double>(spatial));
  }
  return make_op<S>("global_avg_pool", {c}, std::move(out), {x.impl()}, [&] {
    return [c, spatial](TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      const S inv = S(1) / static_cast<S>(spatial);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const S g = node.grad[static_cast<size_t>(ch)] * inv;
        for (std::int64_t i = 0; i < spatial; ++i)
          px.grad[static_cast<size_t>(ch * spatial + i)] += g;
      }
    };
  });
}

template <typename S>
Tensor<S> global_max_pool_last(const Tensor<S>& x) {
  if (x.ndim() != 2)
    raise_contract("global_max_pool_last: expected [C,T], got " +
                   shape_str(x.shape()));
  const std::int64_t c = x.dim(0), t = x.dim(1);
  if (t == 0) raise_contract("global_max_pool_last: empty time axis");
  std::vector<S> out(static_cast<size_t>(c));
  std::vector<std::int64_t> argmax(static_cast<size_t>(c));
  const S* xp = x.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < t; ++i)
      if (xp[ch * t + i] > xp[ch * t + best]) best = i;
    out[static_cast<size_t>(ch)] = xp[ch * t + best];
    argmax[static_cast<size_t>(ch)] = best;
  }
  return make_op<S>("global_max_pool", {c}, std::move(out), {x.impl()}, [&] {
    return [c, t, argmax](TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (std::int64_t ch = 0; ch < c; ++ch)
        px.grad[static_cast<size_t>(ch * t + argmax[static_cast<size_t>(ch)])] +=
            node.grad[static_cast<size_t>(ch)];
    };
  });
}

double canonical_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

double canonical_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  return canonical_sum(std::move(values)) / n;
}

template <typename S>
bool all_finite(const Tensor<S>& x) {
  for (const S& v : x.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

#define FINO_INSTANTIATE_BASIC(S)                                          \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);           \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);           \
  template Tensor<S> scale<S>(const Tensor<S>&, double);                   \
  template Tensor<S> pointwise<S>(const Tensor<S>&, Pointwise);            \
  template Tensor<S> relu<S>(const Tensor<S>&);                            \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                         \
  template Tensor<S> tanh_op<S>(const Tensor<S>&);                         \
  template Tensor<S> reshape<S>(const Tensor<S>&, std::vector<std::int64_t>); \
  template Tensor<S> slice0<S>(const Tensor<S>&, std::int64_t);            \
  template std::vector<Tensor<S>> chunk0<S>(const Tensor<S>&, int);        \
  template Tensor<S> concat0<S>(const std::vector<Tensor<S>>&);            \
  template Tensor<S> stack0<S>(const std::vector<Tensor<S>>&);             \
  template Tensor<S> sum_all<S>(const Tensor<S>&);                         \
  template Tensor<S> global_avg_pool<S>(const Tensor<S>&);                 \
  template Tensor<S> global_max_pool_last<S>(const Tensor<S>&);            \
  template bool all_finite<S>(const Tensor<S>&);

FINO_INSTANTIATE_BASIC(float)
FINO_INSTANTIATE_BASIC(double)

}  // namespace fino

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fino/rng.hpp"
#include "fino/tensor.hpp"

namespace fino {

template <typename S>
struct GradCheckInput {
  std::string name;
  Tensor<S> tensor;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_name;
  std::int64_t worst_index = -1;
  std::int64_t elements_checked = 0;
  bool ok(double tolerance) const { return max_rel_err < tolerance; }
};

// Compares tape gradients against central differences, perturbing each
// listed tensor elementwise. Tensors larger than `subsample_threshold`
// elements are checked on a seeded random subsample instead of in full.
// forward_fn must be a deterministic scalar function of the listed tensors;
// non-finite values anywhere fail with the offending location in the message.
template <typename S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& forward_fn,
                           const std::vector<GradCheckInput<S>>& inputs,
                           double eps, RngState subsample_rng,
                           std::int64_t subsample_threshold = 10000,
                           std::int64_t samples_per_tensor = 64);

extern template GradCheckReport grad_check<float>(
    const std::function<Tensor<float>()>&,
    const std::vector<GradCheckInput<float>>&, double, RngState, std::int64_t,
    std::int64_t);
extern template GradCheckReport grad_check<double>(
    const std::function<Tensor<double>()>&,
    const std::vector<GradCheckInput<double>>&, double, RngState, std::int64_t,
    std::int64_t);

}  // namespace fino

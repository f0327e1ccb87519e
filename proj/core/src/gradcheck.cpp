#include "fino/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fino {

namespace {

template <typename S>
double eval_scalar(const std::function<Tensor<S>()>& forward_fn,
                   const std::string& where) {
  NoGradGuard guard;
  Tensor<S> out = forward_fn();
  if (out.numel() != 1)
    raise_contract("grad_check: forward_fn must return a scalar");
  const double v = static_cast<double>(out.item());
  if (!std::isfinite(v))
    raise_numeric("grad_check: non-finite loss while perturbing " + where);
  return v;
}

}  // namespace

template <typename S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& forward_fn,
                           const std::vector<GradCheckInput<S>>& inputs,
                           double eps, RngState subsample_rng,
                           std::int64_t subsample_threshold,
                           std::int64_t samples_per_tensor) {
  if (eps <= 0) raise_contract("grad_check: eps must be > 0");
  for (const auto& in : inputs)
    if (!in.tensor.defined())
      raise_contract("grad_check: undefined input " + in.name);

  // Analytic pass: one forward with the tape on, one sweep back.
  std::vector<std::vector<S>> analytic;
  {
    for (const auto& in : inputs) in.tensor.impl()->grad.clear();
    Tensor<S> loss = forward_fn();
    if (loss.numel() != 1)
      raise_contract("grad_check: forward_fn must return a scalar");
    if (!std::isfinite(static_cast<double>(loss.item())))
      raise_numeric("grad_check: non-finite loss in analytic pass");
    backward(loss);
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) {
      std::vector<S> g = in.tensor.grad_vector();
      if (g.empty()) g.assign(static_cast<size_t>(in.tensor.numel()), S(0));
      for (const S& v : g)
        if (!std::isfinite(static_cast<double>(v)))
          raise_numeric("grad_check: non-finite analytic gradient in " + in.name);
      analytic.push_back(std::move(g));
    }
  }

  GradCheckReport report;
  for (size_t p = 0; p < inputs.size(); ++p) {
    Tensor<S> t = inputs[p].tensor;
    const std::int64_t n = t.numel();
    std::vector<std::int64_t> indices;
    if (n <= subsample_threshold) {
      indices.resize(static_cast<size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
    } else {
      indices.reserve(static_cast<size_t>(samples_per_tensor));
      for (std::int64_t i = 0; i < samples_per_tensor; ++i)
        indices.push_back(static_cast<std::int64_t>(
            subsample_rng.next_below(static_cast<std::uint64_t>(n))));
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    }

    S* data = t.data();
    for (std::int64_t idx : indices) {
      const std::string where =
          inputs[p].name + "[" + std::to_string(idx) + "]";
      const S original = data[idx];
      data[idx] = static_cast<S>(static_cast<double>(original) + eps);
      const double up = eval_scalar(forward_fn, where);
      data[idx] = static_cast<S>(static_cast<double>(original) - eps);
      const double down = eval_scalar(forward_fn, where);
      data[idx] = original;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = static_cast<double>(analytic[p][static_cast<size_t>(idx)]);
      const double rel = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.elements_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_name = inputs[p].name;
        report.worst_index = idx;
      }
    }
  }
  return report;
}

template GradCheckReport grad_check<float>(
    const std::function<Tensor<float>()>&,
    const std::vector<GradCheckInput<float>>&, double, RngState, std::int64_t,
    std::int64_t);
template GradCheckReport grad_check<double>(
    const std::function<Tensor<double>()>&,
    const std::vector<GradCheckInput<double>>&, double, RngState, std::int64_t,
    std::int64_t);

}  // namespace fino

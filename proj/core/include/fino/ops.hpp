#pragma once

#include <vector>

#include "fino/rng.hpp"
#include "fino/tensor.hpp"

namespace fino {

// Train/eval switch shared by batch norm and dropout.
enum class Mode { Train, Eval };

enum class Pointwise { Relu, Sigmoid, Tanh };

// ---- elementwise and shape ops -------------------------------------------

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, double factor);
template <typename S> Tensor<S> pointwise(const Tensor<S>& x, Pointwise fn);
template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> tanh_op(const Tensor<S>& x);

// Copying reshape; gradient flows back with the original layout.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<std::int64_t> new_shape);

// x[index] along axis 0; output drops that axis.
template <typename S> Tensor<S> slice0(const Tensor<S>& x, std::int64_t index);

// Split axis 0 into `parts` equal contiguous pieces.
template <typename S>
std::vector<Tensor<S>> chunk0(const Tensor<S>& x, int parts);

// Join along existing axis 0 / stack along a new leading axis.
template <typename S> Tensor<S> concat0(const std::vector<Tensor<S>>& parts);
template <typename S> Tensor<S> stack0(const std::vector<Tensor<S>>& parts);

template <typename S> Tensor<S> sum_all(const Tensor<S>& x);

// [C,H,W] -> [C] spatial mean / [C,T] -> [C] temporal max.
template <typename S> Tensor<S> global_avg_pool(const Tensor<S>& x);
template <typename S> Tensor<S> global_max_pool_last(const Tensor<S>& x);

// ---- convolution and pooling ---------------------------------------------

// input [Cin,H,W] or [N,Cin,H,W]; kernels [Cout,Cin,kh,kw]; bias [Cout] or
// undefined. Zero padding, square stride. Output rank matches input rank.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernels,
                 const Tensor<S>& bias, int stride, int padding);

// input [Cin,T]; kernels [Cout,Cin,k]; realized as a height-1 conv2d.
template <typename S>
Tensor<S> conv1d(const Tensor<S>& input, const Tensor<S>& kernels,
                 const Tensor<S>& bias, int stride, int padding);

// x [N,Fin]; weight [Fout,Fin]; bias [Fout] or undefined. y = x W^T + b.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight,
                 const Tensor<S>& bias);

template <typename S>
struct MaxPoolResult {
  Tensor<S> output;
  // Flat index into the input for each output element.
  std::vector<std::int64_t> argmax;
};

// input [...,H,W]; pools each trailing H x W plane, no padding.
template <typename S>
MaxPoolResult<S> max_pool2d(const Tensor<S>& input, int window, int stride);

// ---- normalization, dropout, loss ----------------------------------------

// Running statistics live outside the tape; train mode updates them with
// the unbiased variance while normalizing with the biased one.
struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

// input [N,C,...] with channel axis 1; gamma/beta [C].
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& input, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Mode mode, BatchNormStats& stats,
                     double momentum, double epsilon);

// Inverted dropout: train mode zeroes with probability p and scales
// survivors by 1/(1-p); eval mode and p == 0 return the input unchanged.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Mode mode, RngState& rng);

// logits [N,K]; per-class weights [K] (> 0). Mean over rows of
// w[target] * (logsumexp(logits) - logits[target]), reduced in canonical
// order so the result is invariant to row permutations.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits,
                                const std::vector<int>& targets,
                                const Tensor<S>& class_weights);

// Sum of `values` in a canonical order (sorted ascending), so any
// permutation of the same multiset reduces to the identical double.
double canonical_sum(std::vector<double> values);
double canonical_mean(std::vector<double> values);

// True when every element is finite.
template <typename S> bool all_finite(const Tensor<S>& x);

}  // namespace fino

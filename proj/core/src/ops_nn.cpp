#include <algorithm>
#include <cmath>

#include "fino/ops.hpp"
#include "matmul.hpp"
#include "ops_common.hpp"

namespace fino {

using detail::make_op;

namespace {

struct Conv2dDims {
  std::int64_t n, cin, h, w;        // input (n == 1 for rank-3 input)
  std::int64_t cout, kh, kw;        // kernels
  std::int64_t ho, wo;              // output plane
  std::int64_t k;                   // cin * kh * kw
  int stride_h, stride_w, pad_h, pad_w;
  bool batched;
};

// Height and width get independent stride/padding internally so that the
// 1-D case can leave its unit height axis alone.
Conv2dDims conv2d_dims(const std::vector<std::int64_t>& xs,
                       const std::vector<std::int64_t>& ks, int stride_h,
                       int stride_w, int pad_h, int pad_w) {
  Conv2dDims d{};
  if (ks.size() != 4)
    raise_contract("conv2d: kernels must be [Cout,Cin,kh,kw], got " +
                   shape_str(ks));
  if (xs.size() == 3) {
    d.batched = false;
    d.n = 1;
    d.cin = xs[0];
    d.h = xs[1];
    d.w = xs[2];
  } else if (xs.size() == 4) {
    d.batched = true;
    d.n = xs[0];
    d.cin = xs[1];
    d.h = xs[2];
    d.w = xs[3];
  } else {
    raise_contract("conv2d: input must be [Cin,H,W] or [N,Cin,H,W], got " +
                   shape_str(xs));
  }
  d.cout = ks[0];
  d.kh = ks[2];
  d.kw = ks[3];
  if (ks[1] != d.cin)
    raise_contract("conv2d: input has " + std::to_string(d.cin) +
                   " channels but kernels expect " + std::to_string(ks[1]));
  if (stride_h < 1 || stride_w < 1) raise_contract("conv2d: stride must be >= 1");
  if (pad_h < 0 || pad_w < 0) raise_contract("conv2d: padding must be >= 0");
  d.stride_h = stride_h;
  d.stride_w = stride_w;
  d.pad_h = pad_h;
  d.pad_w = pad_w;
  d.ho = (d.h + 2 * pad_h - d.kh) / stride_h + 1;
  d.wo = (d.w + 2 * pad_w - d.kw) / stride_w + 1;
  if (d.kh < 1 || d.kw < 1 || d.kh > d.h + 2 * pad_h || d.kw > d.w + 2 * pad_w)
    raise_contract("conv2d: kernel " + std::to_string(d.kh) + "x" +
                   std::to_string(d.kw) + " does not fit input " +
                   shape_str(xs) + " with padding " + std::to_string(pad_h) +
                   "," + std::to_string(pad_w));
  d.k = d.cin * d.kh * d.kw;
  return d;
}

// cols is [cin*kh*kw, ho*wo]; out-of-image taps are zero.
template <typename S>
void im2col(const S* img, const Conv2dDims& d, S* cols) {
  const std::int64_t plane = d.ho * d.wo;
  for (std::int64_t c = 0; c < d.cin; ++c) {
    const S* src_plane = img + c * d.h * d.w;
    for (std::int64_t ki = 0; ki < d.kh; ++ki) {
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        S* row = cols + ((c * d.kh + ki) * d.kw + kj) * plane;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * d.stride_h - d.pad_h + ki;
          S* dst = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.wo, S(0));
            continue;
          }
          const S* src = src_plane + iy * d.w;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * d.stride_w - d.pad_w + kj;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, const Conv2dDims& d, S* img) {
  const std::int64_t plane = d.ho * d.wo;
  for (std::int64_t c = 0; c < d.cin; ++c) {
    S* dst_plane = img + c * d.h * d.w;
    for (std::int64_t ki = 0; ki < d.kh; ++ki) {
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        const S* row = cols + ((c * d.kh + ki) * d.kw + kj) * plane;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * d.stride_h - d.pad_h + ki;
          if (iy < 0 || iy >= d.h) continue;
          const S* src = row + oy * d.wo;
          S* dst = dst_plane + iy * d.w;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * d.stride_w - d.pad_w + kj;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename S>
std::vector<S>& conv_scratch(int which) {
  thread_local std::vector<S> buffers[2];
  return buffers[which];
}

}  // namespace

namespace {

template <typename S>
Tensor<S> conv2d_general(const Tensor<S>& input, const Tensor<S>& kernels,
                         const Tensor<S>& bias, int stride_h, int stride_w,
                         int pad_h, int pad_w) {
  const Conv2dDims d = conv2d_dims(input.shape(), kernels.shape(), stride_h,
                                   stride_w, pad_h, pad_w);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != d.cout))
    raise_contract("conv2d: bias must be [Cout], got " + shape_str(bias.shape()));

  const std::int64_t plane = d.ho * d.wo;
  std::vector<S>& cols = conv_scratch<S>(0);
  cols.resize(static_cast<size_t>(d.k * plane));

  std::vector<S> out(static_cast<size_t>(d.n * d.cout * plane));
  for (std::int64_t n = 0; n < d.n; ++n) {
    im2col(input.data() + n * d.cin * d.h * d.w, d, cols.data());
    S* out_n = out.data() + n * d.cout * plane;
    detail::matmul_nn(kernels.data(), cols.data(), out_n, d.cout, d.k, plane,
                      false);
    if (has_bias) {
      const S* bp = bias.data();
      for (std::int64_t co = 0; co < d.cout; ++co) {
        const S bv = bp[co];
        S* row = out_n + co * plane;
        for (std::int64_t j = 0; j < plane; ++j) row[j] += bv;
      }
    }
  }

  std::vector<std::int64_t> out_shape =
      d.batched ? std::vector<std::int64_t>{d.n, d.cout, d.ho, d.wo}
                : std::vector<std::int64_t>{d.cout, d.ho, d.wo};
  std::vector<std::shared_ptr<TensorImpl<S>>> parents{input.impl(),
                                                      kernels.impl()};
  if (has_bias) parents.push_back(bias.impl());

  return make_op<S>("conv2d", std::move(out_shape), std::move(out),
                    std::move(parents), [&] {
    return [d, has_bias](TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      auto& pk = *node.parents[1];
      const std::int64_t plane = d.ho * d.wo;
      const S* kdata = pk.data.data();

      if (has_bias) {
        auto& pb = *node.parents[2];
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::int64_t co = 0; co < d.cout; ++co) {
            double s = 0.0;
            for (std::int64_t n = 0; n < d.n; ++n) {
              const S* g = node.grad.data() + (n * d.cout + co) * plane;
              for (std::int64_t j = 0; j < plane; ++j)
                s += static_cast<double>(g[j]);
            }
            pb.grad[static_cast<size_t>(co)] += static_cast<S>(s);
          }
        }
      }

      // im2col is recomputed here rather than saved; the forward pass keeps
      // no per-node column buffers that way.
      std::vector<S>& cols = conv_scratch<S>(0);
      std::vector<S>& dcols = conv_scratch<S>(1);
      if (pk.requires_grad) {
        pk.ensure_grad();
        cols.resize(static_cast<size_t>(d.k * plane));
        for (std::int64_t n = 0; n < d.n; ++n) {
          im2col(px.data.data() + n * d.cin * d.h * d.w, d, cols.data());
          detail::matmul_nt(node.grad.data() + n * d.cout * plane, cols.data(),
                            pk.grad.data(), d.cout, plane, d.k, true);
        }
      }
      if (px.requires_grad) {
        px.ensure_grad();
        dcols.resize(static_cast<size_t>(d.k * plane));
        for (std::int64_t n = 0; n < d.n; ++n) {
          detail::matmul_tn(kdata, node.grad.data() + n * d.cout * plane,
                            dcols.data(), d.k, d.cout, plane, false);
          col2im_add(dcols.data(), d, px.grad.data() + n * d.cin * d.h * d.w);
        }
      }
    };
  });
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernels,
                 const Tensor<S>& bias, int stride, int padding) {
  return conv2d_general(input, kernels, bias, stride, stride, padding, padding);
}

template <typename S>
Tensor<S> conv1d(const Tensor<S>& input, const Tensor<S>& kernels,
                 const Tensor<S>& bias, int stride, int padding) {
  if (input.ndim() != 2)
    raise_contract("conv1d: input must be [Cin,T], got " +
                   shape_str(input.shape()));
  if (kernels.ndim() != 3)
    raise_contract("conv1d: kernels must be [Cout,Cin,k], got " +
                   shape_str(kernels.shape()));
  // A 1-D conv is a height-1 2-D conv; stride and padding act on the time
  // axis only.
  Tensor<S> x2 = reshape(input, {input.dim(0), 1, input.dim(1)});
  Tensor<S> k2 =
      reshape(kernels, {kernels.dim(0), kernels.dim(1), 1, kernels.dim(2)});
  Tensor<S> y2 = conv2d_general(x2, k2, bias, 1, stride, 0, padding);
  return reshape(y2, {y2.dim(0), y2.dim(2)});
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight,
                 const Tensor<S>& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2)
    raise_contract("linear: expected x [N,Fin] and weight [Fout,Fin], got " +
                   shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  const std::int64_t n = x.dim(0), fin = x.dim(1), fout = weight.dim(0);
  if (weight.dim(1) != fin)
    raise_contract("linear: x has " + std::to_string(fin) +
                   " features but weight expects " + std::to_string(weight.dim(1)));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != fout))
    raise_contract("linear: bias must be [Fout]");

  std::vector<S> out(static_cast<size_t>(n * fout));
  detail::matmul_nt(x.data(), weight.data(), out.data(), n, fin, fout, false);
  if (has_bias) {
    const S* bp = bias.data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < fout; ++j)
        out[static_cast<size_t>(i * fout + j)] += bp[j];
  }

  std::vector<std::shared_ptr<TensorImpl<S>>> parents{x.impl(), weight.impl()};
  if (has_bias) parents.push_back(bias.impl());
  return make_op<S>("linear", {n, fout}, std::move(out), std::move(parents),
                    [&] {
    return [n, fin, fout, has_bias](TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      auto& pw = *node.parents[1];
      if (has_bias) {
        auto& pb = *node.parents[2];
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::int64_t j = 0; j < fout; ++j) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i)
              s += static_cast<double>(node.grad[static_cast<size_t>(i * fout + j)]);
            pb.grad[static_cast<size_t>(j)] += static_cast<S>(s);
          }
        }
      }
      if (pw.requires_grad) {
        pw.ensure_grad();
        detail::matmul_tn(node.grad.data(), px.data.data(), pw.grad.data(),
                          fout, n, fin, true);
      }
      if (px.requires_grad) {
        px.ensure_grad();
        detail::matmul_nn(node.grad.data(), pw.data.data(), px.grad.data(), n,
                          fout, fin, true);
      }
    };
  });
}

template <typename S>
MaxPoolResult<S> max_pool2d(const Tensor<S>& input, int window, int stride) {
  if (input.ndim() < 2)
    raise_contract("max_pool2d: input must have trailing [H,W], got " +
                   shape_str(input.shape()));
  if (window < 1 || stride < 1)
    raise_contract("max_pool2d: window and stride must be >= 1");
  const std::int64_t h = input.dim(input.ndim() - 2);
  const std::int64_t w = input.dim(input.ndim() - 1);
  if (window > h || window > w)
    raise_contract("max_pool2d: window " + std::to_string(window) +
                   " exceeds plane " + shape_str(input.shape()));
  std::int64_t batch = 1;
  for (int i = 0; i + 2 < input.ndim(); ++i) batch *= input.dim(i);
  const std::int64_t ho = (h - window) / stride + 1;
  const std::int64_t wo = (w - window) / stride + 1;

  std::vector<std::int64_t> out_shape(input.shape().begin(),
                                      input.shape().end() - 2);
  out_shape.push_back(ho);
  out_shape.push_back(wo);

  std::vector<S> out(static_cast<size_t>(batch * ho * wo));
  std::vector<std::int64_t> argmax(out.size());
  const S* xp = input.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const S* plane = xp + b * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        std::int64_t best = (oy * stride) * w + ox * stride;
        for (std::int64_t ky = 0; ky < window; ++ky)
          for (std::int64_t kx = 0; kx < window; ++kx) {
            const std::int64_t idx = (oy * stride + ky) * w + ox * stride + kx;
            if (plane[idx] > plane[best]) best = idx;
          }
        const size_t o = static_cast<size_t>((b * ho + oy) * wo + ox);
        out[o] = plane[best];
        argmax[o] = b * h * w + best;
      }
    }
  }

  MaxPoolResult<S> result;
  result.argmax = argmax;
  result.output = make_op<S>("max_pool2d", std::move(out_shape), std::move(out),
                             {input.impl()}, [&] {
    return [argmax = std::move(argmax)](TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (size_t i = 0; i < argmax.size(); ++i)
        px.grad[static_cast<size_t>(argmax[i])] += node.grad[i];
    };
  });
  return result;
}

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& input, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Mode mode, BatchNormStats& stats,
                     double momentum, double epsilon) {
  if (epsilon <= 0) raise_contract("batch_norm: epsilon must be > 0");
  if (momentum < 0 || momentum > 1)
    raise_contract("batch_norm: momentum must be in [0,1]");
  if (input.ndim() < 2)
    raise_contract("batch_norm: input must be [N,C,...], got " +
                   shape_str(input.shape()));
  const std::int64_t n = input.dim(0);
  const std::int64_t c = input.dim(1);
  std::int64_t spatial = 1;
  for (int i = 2; i < input.ndim(); ++i) spatial *= input.dim(i);
  const std::int64_t count = n * spatial;
  if (count < 1) raise_contract("batch_norm: empty input");
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 ||
      beta.dim(0) != c)
    raise_contract("batch_norm: gamma/beta must be [C] with C=" +
                   std::to_string(c));
  if (stats.running_mean.empty()) {
    stats.running_mean.assign(static_cast<size_t>(c), 0.0);
    stats.running_var.assign(static_cast<size_t>(c), 1.0);
  }
  if (static_cast<std::int64_t>(stats.running_mean.size()) != c ||
      static_cast<std::int64_t>(stats.running_var.size()) != c)
    raise_contract("batch_norm: running stats sized for " +
                   std::to_string(stats.running_mean.size()) +
                   " channels, input has " + std::to_string(c));

  const S* xp = input.data();
  const S* gp = gamma.data();
  const S* bp = beta.data();
  const bool train = mode == Mode::Train;

  std::vector<double> mean(static_cast<size_t>(c));
  std::vector<double> inv_std(static_cast<size_t>(c));
  if (train) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const S* base = xp + (i * c + ch) * spatial;
        for (std::int64_t j = 0; j < spatial; ++j) {
          const double v = static_cast<double>(base[j]);
          s += v;
          s2 += v * v;
        }
      }
      const double m = s / static_cast<double>(count);
      double var = s2 / static_cast<double>(count) - m * m;
      if (var < 0) var = 0;  // rounding guard
      mean[static_cast<size_t>(ch)] = m;
      inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + epsilon);
      // Normalization uses the biased variance; the running estimate keeps
      // the unbiased one when more than one value contributed.
      const double run_var =
          count > 1 ? var * static_cast<double>(count) /
                          static_cast<double>(count - 1)
                    : var;
      stats.running_mean[static_cast<size_t>(ch)] =
          (1.0 - momentum) * stats.running_mean[static_cast<size_t>(ch)] +
          momentum * m;
      stats.running_var[static_cast<size_t>(ch)] =
          (1.0 - momentum) * stats.running_var[static_cast<size_t>(ch)] +
          momentum * run_var;
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = stats.running_mean[static_cast<size_t>(ch)];
      inv_std[static_cast<size_t>(ch)] =
          1.0 / std::sqrt(stats.running_var[static_cast<size_t>(ch)] + epsilon);
    }
  }

  std::vector<S> xhat(input.values().size());
  std::vector<S> out(input.values().size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const S* base = xp + (i * c + ch) * spatial;
      S* xh = xhat.data() + (i * c + ch) * spatial;
      S* o = out.data() + (i * c + ch) * spatial;
      const double m = mean[static_cast<size_t>(ch)];
      const double is = inv_std[static_cast<size_t>(ch)];
      const double g = static_cast<double>(gp[ch]);
      const double b = static_cast<double>(bp[ch]);
      for (std::int64_t j = 0; j < spatial; ++j) {
        const double v = (static_cast<double>(base[j]) - m) * is;
        xh[j] = static_cast<S>(v);
        o[j] = static_cast<S>(g * v + b);
      }
    }
  }

  return make_op<S>("batch_norm", input.shape(), std::move(out),
                    {input.impl(), gamma.impl(), beta.impl()}, [&] {
    return [n, c, spatial, count, train, inv_std, xhat = std::move(xhat)](
               TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      auto& pg = *node.parents[1];
      auto& pb = *node.parents[2];
      const S* gp = pg.data.data();

      std::vector<double> sum_g(static_cast<size_t>(c), 0.0);
      std::vector<double> sum_gx(static_cast<size_t>(c), 0.0);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const S* g = node.grad.data() + (i * c + ch) * spatial;
          const S* xh = xhat.data() + (i * c + ch) * spatial;
          double sg = 0.0, sgx = 0.0;
          for (std::int64_t j = 0; j < spatial; ++j) {
            sg += static_cast<double>(g[j]);
            sgx += static_cast<double>(g[j]) * static_cast<double>(xh[j]);
          }
          sum_g[static_cast<size_t>(ch)] += sg;
          sum_gx[static_cast<size_t>(ch)] += sgx;
        }
      }

      if (pg.requires_grad) {
        pg.ensure_grad();
        for (std::int64_t ch = 0; ch < c; ++ch)
          pg.grad[static_cast<size_t>(ch)] +=
              static_cast<S>(sum_gx[static_cast<size_t>(ch)]);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::int64_t ch = 0; ch < c; ++ch)
          pb.grad[static_cast<size_t>(ch)] +=
              static_cast<S>(sum_g[static_cast<size_t>(ch)]);
      }
      if (!px.requires_grad) return;
      px.ensure_grad();
      const double inv_count = 1.0 / static_cast<double>(count);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const S* g = node.grad.data() + (i * c + ch) * spatial;
          const S* xh = xhat.data() + (i * c + ch) * spatial;
          S* dx = px.grad.data() + (i * c + ch) * spatial;
          const double gi = static_cast<double>(gp[ch]) *
                            inv_std[static_cast<size_t>(ch)];
          if (train) {
            const double mg = sum_g[static_cast<size_t>(ch)] * inv_count;
            const double mgx = sum_gx[static_cast<size_t>(ch)] * inv_count;
            for (std::int64_t j = 0; j < spatial; ++j)
              dx[j] += static_cast<S>(
                  gi * (static_cast<double>(g[j]) - mg -
                        static_cast<double>(xh[j]) * mgx));
          } else {
            // Eval mode normalizes with constants, so the chain rule is a
            // plain rescale.
            for (std::int64_t j = 0; j < spatial; ++j)
              dx[j] += static_cast<S>(gi * static_cast<double>(g[j]));
          }
        }
      }
    };
  });
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Mode mode, RngState& rng) {
  if (p < 0 || p >= 1)
    raise_contract("dropout: p must be in [0,1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  std::vector<S> mask(x.values().size());
  for (auto& m : mask) m = rng.next_uniform() < p ? S(0) : keep_scale;
  std::vector<S> out(x.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op<S>("dropout", x.shape(), std::move(out), {x.impl()}, [&] {
    return [mask = std::move(mask)](TensorImpl<S>& node) {
      auto& px = *node.parents[0];
      if (!px.requires_grad) return;
      px.ensure_grad();
      for (size_t i = 0; i < mask.size(); ++i)
        px.grad[i] += node.grad[i] * mask[i];
    };
  });
}

template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits,
                                const std::vector<int>& targets,
                                const Tensor<S>& class_weights) {
  if (logits.ndim() != 2)
    raise_contract("softmax_cross_entropy: logits must be [N,K], got " +
                   shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0);
  const std::int64_t k = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n)
    raise_contract("softmax_cross_entropy: " + std::to_string(targets.size()) +
                   " targets for " + std::to_string(n) + " rows");
  if (class_weights.ndim() != 1 || class_weights.dim(0) != k)
    raise_contract("softmax_cross_entropy: class_weights must be [K]");
  for (std::int64_t j = 0; j < k; ++j)
    if (!(static_cast<double>(class_weights.data()[j]) > 0))
      raise_contract("softmax_cross_entropy: class weights must be > 0");
  for (int t : targets)
    if (t < 0 || t >= k)
      raise_contract("softmax_cross_entropy: target " + std::to_string(t) +
                     " out of range for K=" + std::to_string(k));

  const S* lp = logits.data();
  std::vector<double> probs(static_cast<size_t>(n * k));
  std::vector<double> losses(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const S* row = lp + i * k;
    double mx = static_cast<double>(row[0]);
    for (std::int64_t j = 1; j < k; ++j)
      mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j)
      denom += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(denom);
    for (std::int64_t j = 0; j < k; ++j)
      probs[static_cast<size_t>(i * k + j)] =
          std::exp(static_cast<double>(row[j]) - lse);
    const double w = static_cast<double>(class_weights.data()[targets[static_cast<size_t>(i)]]);
    losses[static_cast<size_t>(i)] =
        w * (lse - static_cast<double>(row[targets[static_cast<size_t>(i)]]));
  }
  const double total = canonical_mean(std::move(losses));

  std::vector<double> w(static_cast<size_t>(k));
  for (std::int64_t j = 0; j < k; ++j)
    w[static_cast<size_t>(j)] = static_cast<double>(class_weights.data()[j]);

  return make_op<S>("softmax_cross_entropy", {},
                    std::vector<S>{static_cast<S>(total)},
                    {logits.impl(), class_weights.impl()}, [&] {
    return [n, k, targets, probs = std::move(probs), w = std::move(w)](
               TensorImpl<S>& node) {
      auto& pl = *node.parents[0];
      if (!pl.requires_grad) return;
      pl.ensure_grad();
      const double g0 = static_cast<double>(node.grad[0]);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i) {
        const int t = targets[static_cast<size_t>(i)];
        const double wi = w[static_cast<size_t>(t)] * inv_n * g0;
        for (std::int64_t j = 0; j < k; ++j) {
          const double p = probs[static_cast<size_t>(i * k + j)];
          const double delta = (j == t) ? 1.0 : 0.0;
          pl.grad[static_cast<size_t>(i * k + j)] +=
              static_cast<S>(wi * (p - delta));
        }
      }
    };
  });
}

#define FINO_INSTANTIATE_NN(S)                                               \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&,           \
                               const Tensor<S>&, int, int);                  \
  template Tensor<S> conv1d<S>(const Tensor<S>&, const Tensor<S>&,           \
                               const Tensor<S>&, int, int);                  \
  template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&,           \
                               const Tensor<S>&);                            \
  template MaxPoolResult<S> max_pool2d<S>(const Tensor<S>&, int, int);       \
  template Tensor<S> batch_norm<S>(const Tensor<S>&, const Tensor<S>&,       \
                                   const Tensor<S>&, Mode, BatchNormStats&,  \
                                   double, double);                          \
  template Tensor<S> dropout<S>(const Tensor<S>&, double, Mode, RngState&);  \
  template Tensor<S> softmax_cross_entropy<S>(const Tensor<S>&,              \
                                              const std::vector<int>&,       \
                                              const Tensor<S>&);

FINO_INSTANTIATE_NN(float)
FINO_INSTANTIATE_NN(double)

}  // namespace fino

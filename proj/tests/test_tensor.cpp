// Tensor engine tests: naive-loop oracles for the linear-algebra ops,
// central-difference gradient checks for every op, and the determinism and
// error contracts of the tape.
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "fino/gradcheck.hpp"
#include "fino/ops.hpp"
#include "fino/rng.hpp"
#include "fino/tensor.hpp"

using namespace fino;

namespace {

template <typename S>
Tensor<S> random_tensor(std::vector<std::int64_t> shape, RngState& rng,
                        bool requires_grad = false, double lo = -1.0,
                        double hi = 1.0) {
  std::vector<S> vals(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : vals) v = static_cast<S>(rng.next_uniform(lo, hi));
  return Tensor<S>::from_data(std::move(shape), std::move(vals), requires_grad);
}

// Reference convolution written as the direct six-loop sum.
std::vector<double> naive_conv2d(const std::vector<double>& x, std::int64_t cin,
                                 std::int64_t h, std::int64_t w,
                                 const std::vector<double>& k, std::int64_t cout,
                                 std::int64_t kh, std::int64_t kw,
                                 const std::vector<double>& bias, int stride,
                                 int pad, std::int64_t& ho, std::int64_t& wo) {
  ho = (h + 2 * pad - kh) / stride + 1;
  wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(static_cast<size_t>(cout * ho * wo), 0.0);
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
        for (std::int64_t ci = 0; ci < cin; ++ci)
          for (std::int64_t ky = 0; ky < kh; ++ky)
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t iy = oy * stride - pad + ky;
              const std::int64_t ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[static_cast<size_t>((ci * h + iy) * w + ix)] *
                     k[static_cast<size_t>(((co * cin + ci) * kh + ky) * kw + kx)];
            }
        y[static_cast<size_t>((co * ho + oy) * wo + ox)] = acc;
      }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches the naive six-loop oracle") {
  RngState rng = RngState::derive(7, "conv-oracle");
  struct Case {
    std::int64_t cin, h, w, cout, kh, kw;
    int stride, pad;
  };
  const Case cases[] = {
      {1, 5, 5, 1, 3, 3, 1, 0},  {3, 8, 8, 4, 3, 3, 1, 1},
      {2, 9, 7, 3, 3, 3, 2, 1},  {4, 6, 6, 2, 1, 1, 1, 0},
      {2, 7, 7, 3, 5, 3, 1, 2},  {3, 12, 10, 5, 3, 3, 3, 1},
  };
  for (const auto& c : cases) {
    CAPTURE(c.cin);
    CAPTURE(c.h);
    CAPTURE(c.stride);
    Tensor<double> x = random_tensor<double>({c.cin, c.h, c.w}, rng);
    Tensor<double> k =
        random_tensor<double>({c.cout, c.cin, c.kh, c.kw}, rng);
    Tensor<double> b = random_tensor<double>({c.cout}, rng);
    Tensor<double> y = conv2d(x, k, b, c.stride, c.pad);

    std::int64_t ho = 0, wo = 0;
    std::vector<double> ref =
        naive_conv2d(x.values(), c.cin, c.h, c.w, k.values(), c.cout, c.kh,
                     c.kw, b.values(), c.stride, c.pad, ho, wo);
    REQUIRE(y.shape() == std::vector<std::int64_t>{c.cout, ho, wo});
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d on a batched input equals per-item convolution") {
  RngState rng = RngState::derive(8, "conv-batch");
  Tensor<double> x = random_tensor<double>({3, 2, 6, 6}, rng);
  Tensor<double> k = random_tensor<double>({4, 2, 3, 3}, rng);
  Tensor<double> b = random_tensor<double>({4}, rng);
  Tensor<double> y = conv2d(x, k, b, 1, 1);
  REQUIRE(y.shape() == std::vector<std::int64_t>{3, 4, 6, 6});
  for (std::int64_t n = 0; n < 3; ++n) {
    std::vector<double> xi(x.data() + n * 2 * 36, x.data() + (n + 1) * 2 * 36);
    Tensor<double> single =
        conv2d(Tensor<double>::from_data({2, 6, 6}, xi), k, b, 1, 1);
    for (std::int64_t i = 0; i < single.numel(); ++i)
      CHECK(y.data()[n * 4 * 36 + i] == single.data()[i]);
  }
}

TEST_CASE("conv1d equals a height-1 conv2d and the direct 1-D sum") {
  RngState rng = RngState::derive(9, "conv1d-oracle");
  const std::int64_t cin = 3, t = 20, cout = 4, kk = 5;
  const int stride = 2, pad = 2;
  Tensor<double> x = random_tensor<double>({cin, t}, rng);
  Tensor<double> k = random_tensor<double>({cout, cin, kk}, rng);
  Tensor<double> b = random_tensor<double>({cout}, rng);
  Tensor<double> y = conv1d(x, k, b, stride, pad);

  const std::int64_t to = (t + 2 * pad - kk) / stride + 1;
  REQUIRE(y.shape() == std::vector<std::int64_t>{cout, to});
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t o = 0; o < to; ++o) {
      double acc = b.data()[co];
      for (std::int64_t ci = 0; ci < cin; ++ci)
        for (std::int64_t j = 0; j < kk; ++j) {
          const std::int64_t i = o * stride - pad + j;
          if (i < 0 || i >= t) continue;
          acc += x.data()[ci * t + i] * k.data()[(co * cin + ci) * kk + j];
        }
      CHECK(y.data()[co * to + o] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("linear matches the naive matrix product") {
  RngState rng = RngState::derive(10, "linear-oracle");
  const std::int64_t n = 5, fin = 7, fout = 4;
  Tensor<double> x = random_tensor<double>({n, fin}, rng);
  Tensor<double> w = random_tensor<double>({fout, fin}, rng);
  Tensor<double> b = random_tensor<double>({fout}, rng);
  Tensor<double> y = linear(x, w, b);
  REQUIRE(y.shape() == std::vector<std::int64_t>{n, fout});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < fout; ++j) {
      double acc = b.data()[j];
      for (std::int64_t p = 0; p < fin; ++p)
        acc += x.data()[i * fin + p] * w.data()[j * fin + p];
      CHECK(y.data()[i * fout + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("float dot products stay close to the 64-bit oracle") {
  // 2^16 terms of 1e-4: a strictly sequential float accumulator drifts to
  // roughly 1e-3 relative error on this sum.  The float path must do better
  // (BLAS kernels accumulate in blocked order), but it is not required to
  // match a double accumulator; 1e-4 is the guaranteed bound.
  const std::int64_t fin = 65536;
  std::vector<float> xs(static_cast<size_t>(fin), 1e-4f);
  std::vector<float> ws(static_cast<size_t>(fin), 1.0f);
  Tensor<float> x = Tensor<float>::from_data({1, fin}, std::move(xs));
  Tensor<float> w = Tensor<float>::from_data({1, fin}, std::move(ws));
  Tensor<float> y = linear(x, w, Tensor<float>{});
  const double expect = static_cast<double>(fin) * static_cast<double>(1e-4f);
  CHECK(std::abs(static_cast<double>(y.data()[0]) - expect) / expect < 1e-4);
}

TEST_CASE("max_pool2d picks window maxima and reports argmax") {
  Tensor<double> x = Tensor<double>::from_data(
      {1, 4, 4}, {0, 1, 2, 3, 7, 6, 5, 4, 8, 9, 11, 10, 15, 13, 14, 12});
  auto r = max_pool2d(x, 2, 2);
  REQUIRE(r.output.shape() == std::vector<std::int64_t>{1, 2, 2});
  CHECK(r.output.data()[0] == 7);
  CHECK(r.output.data()[1] == 5);
  CHECK(r.output.data()[2] == 15);
  CHECK(r.output.data()[3] == 14);
  CHECK(r.argmax == std::vector<std::int64_t>{4, 6, 12, 14});
  // Window 2 stride 2 halves each spatial dimension.
  Tensor<double> big = Tensor<double>::zeros({3, 8, 6});
  CHECK(max_pool2d(big, 2, 2).output.shape() ==
        std::vector<std::int64_t>{3, 4, 3});
}

TEST_CASE("batch_norm normalizes per channel and tracks running stats") {
  RngState rng = RngState::derive(11, "bn-oracle");
  const std::int64_t n = 4, c = 3, h = 5, w = 5;
  Tensor<double> x = random_tensor<double>({n, c, h, w}, rng, false, -2.0, 3.0);
  Tensor<double> gamma = Tensor<double>::full({c}, 1.0);
  Tensor<double> beta = Tensor<double>::zeros({c});
  BatchNormStats stats;
  const double momentum = 0.1, eps = 1e-5;
  Tensor<double> y = batch_norm(x, gamma, beta, Mode::Train, stats, momentum, eps);

  const std::int64_t count = n * h * w;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    // Two-pass reference statistics.
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < h * w; ++j)
        mean += x.data()[(i * c + ch) * h * w + j];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < h * w; ++j) {
        const double d = x.data()[(i * c + ch) * h * w + j] - mean;
        var += d * d;
      }
    var /= static_cast<double>(count);

    // Output channel is standardized under the biased variance.
    double omean = 0.0, ovar = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < h * w; ++j)
        omean += y.data()[(i * c + ch) * h * w + j];
    omean /= static_cast<double>(count);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < h * w; ++j) {
        const double d = y.data()[(i * c + ch) * h * w + j] - omean;
        ovar += d * d;
      }
    ovar /= static_cast<double>(count);
    CHECK(std::abs(omean) < 1e-10);
    CHECK(ovar == doctest::Approx(var / (var + eps)).epsilon(1e-8));

    // Fresh stats start at (0,1); one update blends with momentum, storing
    // the unbiased variance.
    const double unbiased = var * count / static_cast<double>(count - 1);
    CHECK(stats.running_mean[static_cast<size_t>(ch)] ==
          doctest::Approx(momentum * mean).epsilon(1e-12));
    CHECK(stats.running_var[static_cast<size_t>(ch)] ==
          doctest::Approx((1 - momentum) * 1.0 + momentum * unbiased)
              .epsilon(1e-12));
  }

  // Eval mode uses the running estimates and leaves them untouched.
  auto saved_mean = stats.running_mean;
  auto saved_var = stats.running_var;
  Tensor<double> ye = batch_norm(x, gamma, beta, Mode::Eval, stats, momentum, eps);
  CHECK(stats.running_mean == saved_mean);
  CHECK(stats.running_var == saved_var);
  const double m0 = saved_mean[0], v0 = saved_var[0];
  const double expect0 = (x.data()[0] - m0) / std::sqrt(v0 + eps);
  CHECK(ye.data()[0] == doctest::Approx(expect0).epsilon(1e-12));
}

TEST_CASE("batch_norm accepts a single-frame batch") {
  RngState rng = RngState::derive(12, "bn-single");
  Tensor<double> x = random_tensor<double>({1, 2, 4, 4}, rng);
  Tensor<double> gamma = Tensor<double>::full({2}, 1.0);
  Tensor<double> beta = Tensor<double>::zeros({2});
  BatchNormStats stats;
  Tensor<double> y = batch_norm(x, gamma, beta, Mode::Train, stats, 0.1, 1e-5);
  CHECK(all_finite(y));
}

TEST_CASE("batch_norm rejects a non-positive epsilon") {
  Tensor<double> x = Tensor<double>::zeros({2, 2});
  Tensor<double> g = Tensor<double>::full({2}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({2});
  BatchNormStats stats;
  CHECK_THROWS_AS(batch_norm(x, g, b, Mode::Train, stats, 0.1, 0.0), Error);
  CHECK_THROWS_AS(batch_norm(x, g, b, Mode::Train, stats, 0.1, -1e-5), Error);
}

TEST_CASE("dropout zeroes at rate p and rescales survivors") {
  RngState rng = RngState::derive(13, "dropout");
  const double p = 0.4;
  Tensor<double> x = Tensor<double>::full({100, 100}, 1.0);
  Tensor<double> y = dropout(x, p, Mode::Train, rng);
  std::int64_t zeros = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    const double v = y.data()[i];
    if (v == 0.0)
      ++zeros;
    else
      CHECK(v == doctest::Approx(1.0 / (1.0 - p)).epsilon(1e-12));
  }
  const double rate = static_cast<double>(zeros) / static_cast<double>(y.numel());
  CHECK(std::abs(rate - p) < 0.02);

  SUBCASE("eval mode is the identity, bit for bit") {
    RngState r2 = RngState::derive(13, "dropout-eval");
    Tensor<double> ye = dropout(x, p, Mode::Eval, r2);
    CHECK(ye.impl().get() == x.impl().get());
    CHECK(r2.counter == 0);  // no draws consumed
  }
  SUBCASE("p = 0 is the identity in train mode") {
    RngState r3 = RngState::derive(13, "dropout-p0");
    Tensor<double> y0 = dropout(x, 0.0, Mode::Train, r3);
    CHECK(y0.impl().get() == x.impl().get());
  }
  SUBCASE("same rng state reproduces the same mask") {
    RngState a = RngState::derive(99, "mask");
    RngState b = RngState::derive(99, "mask");
    Tensor<double> ya = dropout(x, p, Mode::Train, a);
    Tensor<double> yb = dropout(x, p, Mode::Train, b);
    for (std::int64_t i = 0; i < ya.numel(); ++i)
      CHECK(ya.data()[i] == yb.data()[i]);
  }
  SUBCASE("p outside [0,1) is rejected") {
    RngState r4;
    CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, r4), Error);
    CHECK_THROWS_AS(dropout(x, -0.1, Mode::Train, r4), Error);
  }
}

TEST_CASE("softmax cross entropy matches the naive weighted NLL") {
  RngState rng = RngState::derive(14, "ce-oracle");
  const std::int64_t n = 6, k = 4;
  Tensor<double> logits = random_tensor<double>({n, k}, rng, false, -3.0, 3.0);
  std::vector<int> targets = {0, 3, 1, 2, 2, 0};
  Tensor<double> weights = Tensor<double>::from_data({k}, {1.0, 2.0, 0.5, 1.5});

  Tensor<double> loss = softmax_cross_entropy(logits, targets, weights);
  double expect = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(logits.data()[i * k + j]);
    const double p = std::exp(logits.data()[i * k + targets[static_cast<size_t>(i)]]) / denom;
    expect += weights.data()[targets[static_cast<size_t>(i)]] * -std::log(p);
  }
  expect /= static_cast<double>(n);
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-10));

  SUBCASE("row permutation leaves the loss bitwise unchanged") {
    const std::vector<int> perm = {4, 0, 5, 2, 1, 3};
    std::vector<double> shuffled(static_cast<size_t>(n * k));
    std::vector<int> shuffled_targets(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < k; ++j)
        shuffled[static_cast<size_t>(i * k + j)] =
            logits.data()[perm[static_cast<size_t>(i)] * k + j];
      shuffled_targets[static_cast<size_t>(i)] =
          targets[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    Tensor<double> l2 = softmax_cross_entropy(
        Tensor<double>::from_data({n, k}, shuffled), shuffled_targets, weights);
    CHECK(l2.item() == loss.item());
  }
  SUBCASE("bad targets and non-positive weights are rejected") {
    CHECK_THROWS_AS(
        softmax_cross_entropy(logits, std::vector<int>{0, 1, 2, 3, 4, 0}, weights),
        Error);
    Tensor<double> bad_w = Tensor<double>::from_data({k}, {1.0, 0.0, 1.0, 1.0});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, targets, bad_w), Error);
  }
}

TEST_CASE("canonical_sum is invariant to permutation") {
  std::vector<double> vals = {1e16, 1.0, -1e16, 3.5, 0.25, -7.75, 1e-3};
  double a = canonical_sum(vals);
  std::vector<double> rev(vals.rbegin(), vals.rend());
  std::vector<double> rot(vals.begin() + 3, vals.end());
  rot.insert(rot.end(), vals.begin(), vals.begin() + 3);
  CHECK(canonical_sum(rev) == a);
  CHECK(canonical_sum(rot) == a);
}

// ---- gradient checks -------------------------------------------------------

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

template <typename S>
void expect_grad_ok(const std::function<Tensor<S>()>& fn,
                    const std::vector<GradCheckInput<S>>& inputs, double eps,
                    double tol) {
  auto report = grad_check<S>(fn, inputs, eps, RngState::derive(1, "sub"));
  CAPTURE(report.worst_name);
  CAPTURE(report.worst_index);
  CHECK(report.max_rel_err < tol);
  CHECK(report.elements_checked > 0);
}

}  // namespace

TEST_CASE("gradients: conv2d against central differences") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    RngState rng = RngState::derive(seed, "g-conv2d");
    Tensor<double> x = random_tensor<double>({2, 6, 6}, rng, true);
    Tensor<double> k = random_tensor<double>({3, 2, 3, 3}, rng, true);
    Tensor<double> b = random_tensor<double>({3}, rng, true);
    auto fn = [&] { return sum_all(tanh_op(conv2d(x, k, b, 1, 1))); };
    expect_grad_ok<double>(fn, {{"x", x}, {"k", k}, {"b", b}}, kEps, kTol);
  }
}

TEST_CASE("gradients: strided batched conv2d") {
  RngState rng = RngState::derive(4, "g-conv2d-s");
  Tensor<double> x = random_tensor<double>({2, 3, 7, 7}, rng, true);
  Tensor<double> k = random_tensor<double>({4, 3, 3, 3}, rng, true);
  Tensor<double> b = random_tensor<double>({4}, rng, true);
  auto fn = [&] { return sum_all(tanh_op(conv2d(x, k, b, 2, 1))); };
  expect_grad_ok<double>(fn, {{"x", x}, {"k", k}, {"b", b}}, kEps, kTol);
}

TEST_CASE("gradients: conv1d") {
  RngState rng = RngState::derive(5, "g-conv1d");
  Tensor<double> x = random_tensor<double>({3, 16}, rng, true);
  Tensor<double> k = random_tensor<double>({4, 3, 5}, rng, true);
  Tensor<double> b = random_tensor<double>({4}, rng, true);
  auto fn = [&] { return sum_all(tanh_op(conv1d(x, k, b, 1, 2))); };
  expect_grad_ok<double>(fn, {{"x", x}, {"k", k}, {"b", b}}, kEps, kTol);
}

TEST_CASE("gradients: linear") {
  RngState rng = RngState::derive(6, "g-linear");
  Tensor<double> x = random_tensor<double>({4, 6}, rng, true);
  Tensor<double> w = random_tensor<double>({3, 6}, rng, true);
  Tensor<double> b = random_tensor<double>({3}, rng, true);
  auto fn = [&] { return sum_all(sigmoid(linear(x, w, b))); };
  expect_grad_ok<double>(fn, {{"x", x}, {"w", w}, {"b", b}}, kEps, kTol);
}

TEST_CASE("gradients: max_pool2d") {
  // Values are spread out so the finite-difference step cannot flip a
  // window's argmax.
  RngState rng = RngState::derive(7, "g-pool");
  std::vector<double> vals(2 * 6 * 6);
  for (size_t i = 0; i < vals.size(); ++i)
    vals[i] = static_cast<double>(i % 37) * 0.1 + rng.next_uniform(0.0, 0.01);
  Tensor<double> x = Tensor<double>::from_data({2, 6, 6}, std::move(vals), true);
  auto fn = [&] { return sum_all(tanh_op(max_pool2d(x, 2, 2).output)); };
  expect_grad_ok<double>(fn, {{"x", x}}, kEps, kTol);
}

TEST_CASE("gradients: batch_norm in train and eval modes") {
  RngState rng = RngState::derive(8, "g-bn");
  Tensor<double> x = random_tensor<double>({3, 2, 4, 4}, rng, true);
  Tensor<double> gamma = random_tensor<double>({2}, rng, true, 0.5, 1.5);
  Tensor<double> beta = random_tensor<double>({2}, rng, true, -0.5, 0.5);

  SUBCASE("train mode differentiates through the batch statistics") {
    auto fn = [&] {
      BatchNormStats stats;  // fresh stats so runs are identical
      return sum_all(
          tanh_op(batch_norm(x, gamma, beta, Mode::Train, stats, 0.1, 1e-5)));
    };
    expect_grad_ok<double>(fn, {{"x", x}, {"gamma", gamma}, {"beta", beta}},
                           kEps, kTol);
  }
  SUBCASE("eval mode differentiates through fixed statistics") {
    BatchNormStats stats;
    stats.running_mean = {0.1, -0.2};
    stats.running_var = {1.3, 0.7};
    auto fn = [&] {
      return sum_all(
          tanh_op(batch_norm(x, gamma, beta, Mode::Eval, stats, 0.1, 1e-5)));
    };
    expect_grad_ok<double>(fn, {{"x", x}, {"gamma", gamma}, {"beta", beta}},
                           kEps, kTol);
  }
}

TEST_CASE("gradients: dropout with a replayed mask") {
  RngState rng = RngState::derive(9, "g-drop");
  Tensor<double> x = random_tensor<double>({5, 5}, rng, true);
  auto fn = [&] {
    RngState mask_rng = RngState::derive(42, "mask");  // reset per call
    return sum_all(tanh_op(dropout(x, 0.3, Mode::Train, mask_rng)));
  };
  expect_grad_ok<double>(fn, {{"x", x}}, kEps, kTol);
}

TEST_CASE("gradients: pointwise relu, sigmoid, tanh") {
  RngState rng = RngState::derive(10, "g-pw");
  // Keep inputs away from relu's kink at zero.
  std::vector<double> vals(36);
  for (auto& v : vals) {
    v = rng.next_uniform(-1.0, 1.0);
    if (std::abs(v) < 0.05) v += v < 0 ? -0.1 : 0.1;
  }
  Tensor<double> x = Tensor<double>::from_data({6, 6}, std::move(vals), true);
  for (Pointwise fn : {Pointwise::Relu, Pointwise::Sigmoid, Pointwise::Tanh}) {
    auto f = [&] { return sum_all(pointwise(x, fn)); };
    expect_grad_ok<double>(f, {{"x", x}}, kEps, kTol);
  }
}

TEST_CASE("gradients: elementwise and shape ops") {
  RngState rng = RngState::derive(11, "g-shape");
  Tensor<double> a = random_tensor<double>({4, 3}, rng, true);
  Tensor<double> b = random_tensor<double>({4, 3}, rng, true);

  auto fn1 = [&] { return sum_all(tanh_op(add(mul(a, b), scale(a, 0.5)))); };
  expect_grad_ok<double>(fn1, {{"a", a}, {"b", b}}, kEps, kTol);

  auto fn2 = [&] {
    auto r = reshape(a, {2, 6});
    auto s = slice0(r, 1);
    return sum_all(tanh_op(s));
  };
  expect_grad_ok<double>(fn2, {{"a", a}}, kEps, kTol);

  auto fn3 = [&] {
    auto parts = chunk0(a, 2);
    auto joined = concat0(std::vector<Tensor<double>>{parts[1], parts[0]});
    auto stacked = stack0(std::vector<Tensor<double>>{joined, joined});
    return sum_all(tanh_op(stacked));
  };
  expect_grad_ok<double>(fn3, {{"a", a}}, kEps, kTol);
}

TEST_CASE("concat0 joins unequal leading extents") {
  Tensor<double> a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor<double> b = Tensor<double>::from_data({1, 2}, {5, 6}, true);
  Tensor<double> c = concat0(std::vector<Tensor<double>>{a, b});
  REQUIRE(c.shape() == std::vector<std::int64_t>{3, 2});
  for (int i = 0; i < 6; ++i) CHECK(c.data()[i] == double(i + 1));

  auto fn = [&] {
    return sum_all(
        tanh_op(concat0(std::vector<Tensor<double>>{a, b})));
  };
  expect_grad_ok<double>(fn, {{"a", a}, {"b", b}}, kEps, kTol);

  // Trailing dims still have to agree, and stacking stays strict.
  Tensor<double> wide = Tensor<double>::zeros({1, 3});
  CHECK_THROWS_AS(concat0(std::vector<Tensor<double>>{a, wide}), Error);
  CHECK_THROWS_AS(stack0(std::vector<Tensor<double>>{a, b}), Error);
}

TEST_CASE("gradients: global pools") {
  RngState rng = RngState::derive(12, "g-gap");
  Tensor<double> x = random_tensor<double>({3, 4, 4}, rng, true);
  auto fn = [&] { return sum_all(tanh_op(global_avg_pool(x))); };
  expect_grad_ok<double>(fn, {{"x", x}}, kEps, kTol);

  // Spread values so the max is stable under the eps step.
  std::vector<double> vals(3 * 8);
  for (size_t i = 0; i < vals.size(); ++i)
    vals[i] = static_cast<double>((i * 7) % 24) * 0.05;
  Tensor<double> y = Tensor<double>::from_data({3, 8}, std::move(vals), true);
  auto fn2 = [&] { return sum_all(tanh_op(global_max_pool_last(y))); };
  expect_grad_ok<double>(fn2, {{"y", y}}, kEps, kTol);
}

TEST_CASE("gradients: softmax cross entropy") {
  RngState rng = RngState::derive(13, "g-ce");
  Tensor<double> logits = random_tensor<double>({5, 3}, rng, true, -2.0, 2.0);
  std::vector<int> targets = {0, 2, 1, 1, 0};
  Tensor<double> weights = Tensor<double>::from_data({3}, {1.0, 1.4, 0.6});
  auto fn = [&] { return softmax_cross_entropy(logits, targets, weights); };
  expect_grad_ok<double>(fn, {{"logits", logits}}, kEps, kTol);
}

TEST_CASE("gradients: float storage stays within the loose tolerance") {
  RngState rng = RngState::derive(14, "g-f32");
  Tensor<float> x = random_tensor<float>({2, 5, 5}, rng, true);
  Tensor<float> k = random_tensor<float>({3, 2, 3, 3}, rng, true);
  Tensor<float> b = random_tensor<float>({3}, rng, true);
  auto fn = [&] { return sum_all(tanh_op(conv2d(x, k, b, 1, 1))); };
  expect_grad_ok<float>(fn, {{"x", x}, {"k", k}, {"b", b}}, 3e-3, 1e-2);
}

// ---- tape mechanics ---------------------------------------------------------

TEST_CASE("backward handles diamonds and repeated parents") {
  Tensor<double> x = Tensor<double>::scalar(3.0, true);
  // y = x*x + x + x: dy/dx = 2x + 2 = 8.
  Tensor<double> y = add(add(mul(x, x), x), x);
  backward(y);
  REQUIRE(x.grad() != nullptr);
  CHECK(x.grad()[0] == doctest::Approx(8.0));

  auto graph = OpGraph<double>::build(y);
  // x, mul, inner add, outer add: each node appears exactly once.
  CHECK(graph.order.size() == 4);
}

TEST_CASE("backward visits shared subgraphs once") {
  Tensor<double> x = Tensor<double>::scalar(0.5, true);
  Tensor<double> shared = tanh_op(x);
  Tensor<double> y = sum_all(add(mul(shared, shared), shared));
  backward(y);
  const double t = std::tanh(0.5);
  const double dt = 1.0 - t * t;
  CHECK(x.grad()[0] == doctest::Approx((2.0 * t + 1.0) * dt).epsilon(1e-12));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor<double> x = Tensor<double>::full({3}, 1.0, true);
  Tensor<double> y = scale(x, 2.0);
  CHECK_THROWS_AS(backward(y), Error);
}

TEST_CASE("no-grad mode records no tape") {
  Tensor<double> x = Tensor<double>::full({2, 2}, 1.0, true);
  {
    NoGradGuard guard;
    Tensor<double> y = tanh_op(conv2d(reshape(x, {1, 2, 2}),
                                      Tensor<double>::full({1, 1, 1, 1}, 2.0),
                                      Tensor<double>{}, 1, 0));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.impl()->parents.empty());
  }
  // Mode restores on guard exit.
  Tensor<double> z = tanh_op(x);
  CHECK(z.requires_grad());
}

TEST_CASE("ops with untracked inputs record no tape") {
  Tensor<double> x = Tensor<double>::full({2, 2}, 1.0, false);
  Tensor<double> y = tanh_op(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.impl()->parents.empty());
}

TEST_CASE("shape and parameter misuse raises contract errors") {
  Tensor<double> a = Tensor<double>::zeros({2, 3});
  Tensor<double> b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), Error);
  CHECK_THROWS_AS(reshape(a, {4, 2}), Error);
  CHECK_THROWS_AS(chunk0(a, 4), Error);
  CHECK_THROWS_AS(slice0(a, 5), Error);

  Tensor<double> x = Tensor<double>::zeros({2, 4, 4});
  Tensor<double> k = Tensor<double>::zeros({3, 5, 3, 3});  // channel mismatch
  CHECK_THROWS_AS(conv2d(x, k, Tensor<double>{}, 1, 0), Error);
  Tensor<double> kbig = Tensor<double>::zeros({3, 2, 7, 7});  // does not fit
  CHECK_THROWS_AS(conv2d(x, kbig, Tensor<double>{}, 1, 0), Error);
  Tensor<double> k2 = Tensor<double>::zeros({3, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k2, Tensor<double>{}, 0, 0), Error);  // stride
  CHECK_THROWS_AS(conv2d(x, k2, Tensor<double>::zeros({4}), 1, 0), Error);
  CHECK_THROWS_AS(max_pool2d(x, 5, 5), Error);

  Tensor<double> undefined;
  CHECK_THROWS_AS(undefined.shape(), Error);

  try {
    add(a, b);
    FAIL("unreachable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Contract);
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("forward ops preserve finiteness on finite inputs") {
  RngState rng = RngState::derive(21, "finite");
  Tensor<double> x = random_tensor<double>({3, 8, 8}, rng, false, -50.0, 50.0);
  Tensor<double> k = random_tensor<double>({4, 3, 3, 3}, rng, false, -5.0, 5.0);
  Tensor<double> y = conv2d(x, k, Tensor<double>{}, 1, 1);
  CHECK(all_finite(y));
  CHECK(all_finite(sigmoid(scale(y, 100.0))));
  CHECK(all_finite(tanh_op(scale(y, 100.0))));
  Tensor<double> bad = Tensor<double>::from_data(
      {2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_FALSE(all_finite(bad));
}

#include "fino/gradcheck_suite.hpp"

#include <array>

#include "fino/model.hpp"
#include "fino/ops.hpp"
#include "fino/rng.hpp"
#include "fino/tensor.hpp"

namespace fino {

namespace {

constexpr double kEps = 1e-5;

Tensor<double> leaf(const std::vector<std::int64_t>& shape, RngState& rng,
                    double lo, double hi) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  std::vector<double> values(static_cast<size_t>(n));
  for (double& v : values) v = rng.next_uniform(lo, hi);
  return Tensor<double>::from_data(shape, values, true);
}

ConvBnParams make_conv_bn(int out_ch, int in_ch, int k, RngState& rng,
                          bool one_d) {
  ConvBnParams p;
  const std::vector<std::int64_t> shape =
      one_d ? std::vector<std::int64_t>{out_ch, in_ch, k}
            : std::vector<std::int64_t>{out_ch, in_ch, k, k};
  p.kernel = leaf(shape, rng, -0.4, 0.4);
  p.bias = leaf({out_ch}, rng, -0.1, 0.1);
  p.gamma = leaf({out_ch}, rng, 0.8, 1.2);
  p.beta = leaf({out_ch}, rng, -0.2, 0.2);
  return p;
}

ConvLstmParams make_lstm(int ch, int in_ch, int k, RngState& rng) {
  ConvLstmParams p;
  p.w_x = leaf({4 * ch, in_ch, k, k}, rng, -0.3, 0.3);
  p.w_h = leaf({4 * ch, ch, k, k}, rng, -0.3, 0.3);
  p.bias = leaf({4 * ch}, rng, -0.2, 0.2);
  return p;
}

void collect_conv_bn(std::vector<GradCheckInput<double>>& inputs,
                     const std::string& prefix, ConvBnParams& p) {
  inputs.push_back({prefix + ".kernel", p.kernel});
  inputs.push_back({prefix + ".bias", p.bias});
  inputs.push_back({prefix + ".gamma", p.gamma});
  inputs.push_back({prefix + ".beta", p.beta});
}

}  // namespace

std::vector<GradSuiteCase> gradcheck_suite(std::uint64_t seed) {
  std::vector<GradSuiteCase> out;
  auto run = [&](const std::string& name,
                 const std::function<Tensor<double>()>& forward,
                 const std::vector<GradCheckInput<double>>& inputs,
                 std::int64_t samples, std::int64_t full_check_below = 64) {
    out.push_back({name, grad_check<double>(forward, inputs, kEps,
                                            RngState::derive(seed, name),
                                            full_check_below, samples)});
  };

  {
    RngState rng = RngState::derive(seed, "suite-conv2d");
    Tensor<double> x = leaf({2, 3, 6, 7}, rng, -1.0, 1.0);
    Tensor<double> w = leaf({4, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor<double> b = leaf({4}, rng, -0.2, 0.2);
    run("conv2d", [&] { return sum_all(conv2d(x, w, b, 1, 1)); },
        {{"x", x}, {"w", w}, {"b", b}}, 48);
  }
  {
    RngState rng = RngState::derive(seed, "suite-conv1d");
    Tensor<double> x = leaf({3, 20}, rng, -1.0, 1.0);
    Tensor<double> w = leaf({5, 3, 4}, rng, -0.5, 0.5);
    Tensor<double> b = leaf({5}, rng, -0.2, 0.2);
    run("conv1d", [&] { return sum_all(conv1d(x, w, b, 1, 0)); },
        {{"x", x}, {"w", w}, {"b", b}}, 48);
  }
  {
    RngState rng = RngState::derive(seed, "suite-linear");
    Tensor<double> x = leaf({4, 6}, rng, -1.0, 1.0);
    Tensor<double> w = leaf({3, 6}, rng, -0.5, 0.5);
    Tensor<double> b = leaf({3}, rng, -0.2, 0.2);
    run("linear", [&] { return sum_all(linear(x, w, b)); },
        {{"x", x}, {"w", w}, {"b", b}}, 48);
  }
  {
    RngState rng = RngState::derive(seed, "suite-bn");
    Tensor<double> x = leaf({3, 4, 5, 5}, rng, -1.0, 1.0);
    Tensor<double> gamma = leaf({4}, rng, 0.8, 1.2);
    Tensor<double> beta = leaf({4}, rng, -0.2, 0.2);
    BatchNormStats stats;
    run("batch-norm",
        [&] {
          return sum_all(mul(batch_norm(x, gamma, beta, Mode::Train, stats,
                                        0.1, 1e-5),
                             x));
        },
        {{"x", x}, {"gamma", gamma}, {"beta", beta}}, 48);
  }
  {
    RngState rng = RngState::derive(seed, "suite-pool");
    Tensor<double> x = leaf({2, 3, 6, 6}, rng, -1.0, 1.0);
    run("max-pool",
        [&] {
          Tensor<double> y = max_pool2d(x, 2, 2).output;
          return sum_all(mul(y, y));
        },
        {{"x", x}}, 48);
  }
  {
    RngState rng = RngState::derive(seed, "suite-act");
    Tensor<double> x = leaf({3, 7}, rng, -2.0, 2.0);
    Tensor<double> y = leaf({3, 7}, rng, -2.0, 2.0);
    run("activations",
        [&] {
          return sum_all(
              add(relu(x), mul(sigmoid(y), tanh_op(add(x, y)))));
        },
        {{"x", x}, {"y", y}}, 42);
  }
  {
    RngState rng = RngState::derive(seed, "suite-dropout");
    Tensor<double> x = leaf({4, 9}, rng, -1.0, 1.0);
    run("dropout",
        [&] {
          RngState drop{9, 0};
          return sum_all(dropout(x, 0.35, Mode::Train, drop));
        },
        {{"x", x}}, 36);
  }
  {
    RngState rng = RngState::derive(seed, "suite-ce");
    Tensor<double> logits = leaf({5, 2}, rng, -2.0, 2.0);
    Tensor<double> weights =
        Tensor<double>::from_data({2}, {0.7, 1.6}, false);
    const std::vector<int> targets = {0, 1, 1, 0, 1};
    run("weighted-cross-entropy",
        [&] { return softmax_cross_entropy(logits, targets, weights); },
        {{"logits", logits}}, 10);
  }
  {
    RngState rng = RngState::derive(seed, "suite-lstm");
    ConvLstmParams p = make_lstm(3, 2, 3, rng);
    Tensor<double> x = leaf({2, 4, 4}, rng, -1.0, 1.0);
    ConvLstmState state;
    state.hidden = leaf({3, 4, 4}, rng, -0.5, 0.5);
    state.cell = leaf({3, 4, 4}, rng, -0.5, 0.5);
    run("conv-lstm",
        [&] {
          ConvLstmState next = conv_lstm_step(x, state, p);
          return sum_all(add(next.hidden, next.cell));
        },
        {{"x", x},
         {"h", state.hidden},
         {"c", state.cell},
         {"w_x", p.w_x},
         {"w_h", p.w_h},
         {"bias", p.bias}},
        36);
  }
  {
    RngState rng = RngState::derive(seed, "suite-block");
    VisionBlockParams p;
    p.conv_a = make_conv_bn(3, 2, 3, rng, false);
    p.conv_b = make_conv_bn(3, 3, 3, rng, false);
    p.lstm = make_lstm(3, 3, 3, rng);
    Tensor<double> seq = leaf({2, 2, 4, 4}, rng, -1.0, 1.0);
    std::vector<GradCheckInput<double>> inputs = {{"seq", seq}};
    collect_conv_bn(inputs, "conv_a", p.conv_a);
    collect_conv_bn(inputs, "conv_b", p.conv_b);
    inputs.push_back({"w_x", p.lstm.w_x});
    inputs.push_back({"w_h", p.lstm.w_h});
    inputs.push_back({"lstm.bias", p.lstm.bias});
    run("vision-block",
        [&] {
          RngState drop{3, 0};
          return sum_all(
              vision_block_forward(seq, p, Mode::Train, 0.3, true, true,
                                   drop));
        },
        inputs, 24);
  }
  {
    RngState rng = RngState::derive(seed, "suite-audio");
    std::vector<ConvBnParams> layers;
    layers.push_back(make_conv_bn(6, 20, 32, rng, true));
    layers.push_back(make_conv_bn(6, 6, 32, rng, true));
    Tensor<double> mfcc = leaf({20, 64}, rng, -1.0, 1.0);
    std::vector<GradCheckInput<double>> inputs = {{"mfcc", mfcc}};
    collect_conv_bn(inputs, "conv1", layers[0]);
    collect_conv_bn(inputs, "conv2", layers[1]);
    run("audio-branch",
        [&] {
          RngState drop{4, 0};
          return sum_all(
              audio_branch_forward(mfcc, layers, Mode::Train, 0.3, drop));
        },
        inputs, 24);
  }
  {
    // The complete fused topology at default widths; only the shapes are
    // desk scale. Dropout stays on (the fixed stream freezes the masks) so
    // every structural site participates.
    ModelConfig cfg;
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.audio_frames = 64;
    cfg.seed = seed;
    FinoNet net(cfg);
    RngState rng = RngState::derive(seed, "suite-model");
    Tensor<double> visual = leaf({2, 4, 8, 8}, rng, -1.0, 1.0);
    Tensor<double> mfcc = leaf({20, 64}, rng, -1.0, 1.0);
    ModelInput in;
    in.visual = visual;
    in.mfcc = mfcc;
    std::vector<GradCheckInput<double>> inputs = {{"visual", visual},
                                                  {"mfcc", mfcc}};
    for (Param& p : net.params()) inputs.push_back({p.name, p.value});
    // Spot checks here; the layer cases above carry the dense coverage.
    run("fused-model",
        [&] {
          RngState drop{5, 0};
          return sum_all(net.forward(in, Mode::Train, drop));
        },
        inputs, 6, 8);
  }
  return out;
}

}  // namespace fino

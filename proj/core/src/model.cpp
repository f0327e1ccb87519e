#include "fino/model.hpp"

#include <cmath>

#include "fino/error.hpp"

namespace fino {

namespace {

constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

// Batch norm through a layer's running statistics, except that a frozen
// layer (neither gamma nor beta trainable) keeps them: freezing must make
// training a true no-op on the layer, so updates land in a discarded copy.
Tensor<double> layer_batch_norm(const Tensor<double>& x, ConvBnParams& p,
                                Mode mode) {
  if (mode == Mode::Train && !p.gamma.requires_grad() &&
      !p.beta.requires_grad()) {
    BatchNormStats scratch = p.stats;
    return batch_norm(x, p.gamma, p.beta, mode, scratch, kBnMomentum, kBnEps);
  }
  return batch_norm(x, p.gamma, p.beta, mode, p.stats, kBnMomentum, kBnEps);
}

void trace_layer(std::vector<LayerInfo>* trace, const std::string& name,
                 const std::string& kind, const Tensor<double>& out,
                 int in_channels = 0, int out_channels = 0, int kernel = 0,
                 int pool_factor = 1) {
  if (!trace) return;
  LayerInfo info;
  info.name = name;
  info.kind = kind;
  info.in_channels = in_channels;
  info.out_channels = out_channels;
  info.kernel = kernel;
  info.pool_factor = pool_factor;
  info.out_shape = out.shape();
  trace->push_back(std::move(info));
}

// conv -> (bn) -> relu -> (dropout) on a [N,C,H,W] batch or a [C,L] signal
// reshaped by the caller. Records one trace entry per applied stage.
Tensor<double> conv_bn_relu_2d(const Tensor<double>& x, ConvBnParams& p,
                               Mode mode, double dropout_p, bool with_dropout,
                               RngState& rng, std::vector<LayerInfo>* trace,
                               const std::string& prefix) {
  const int in_ch = static_cast<int>(p.kernel.shape()[1]);
  const int out_ch = static_cast<int>(p.kernel.shape()[0]);
  const int k = static_cast<int>(p.kernel.shape()[2]);
  Tensor<double> y = conv2d(x, p.kernel, p.bias, 1, k / 2);
  trace_layer(trace, prefix + ".conv", "conv2d", y, in_ch, out_ch, k);
  if (p.gamma.defined()) {
    y = layer_batch_norm(y, p, mode);
    trace_layer(trace, prefix + ".bn", "batch_norm", y, out_ch, out_ch);
  }
  y = relu(y);
  trace_layer(trace, prefix + ".relu", "relu", y, out_ch, out_ch);
  if (with_dropout && dropout_p > 0.0) {
    y = dropout(y, dropout_p, mode, rng);
    trace_layer(trace, prefix + ".dropout", "dropout", y, out_ch, out_ch);
  }
  return y;
}

}  // namespace

const char* variant_to_string(Variant v) {
  switch (v) {
    case Variant::Rgb: return "rgb";
    case Variant::D: return "d";
    case Variant::A: return "a";
    case Variant::Rgbd: return "rgbd";
    default: return "rgbda";
  }
}

Variant variant_from_string(const std::string& s) {
  if (s == "rgb") return Variant::Rgb;
  if (s == "d") return Variant::D;
  if (s == "a") return Variant::A;
  if (s == "rgbd") return Variant::Rgbd;
  if (s == "rgbda") return Variant::Rgbda;
  raise_usage("variant: expected rgb|d|a|rgbd|rgbda, got \"" + s + "\"");
}

int variant_visual_channels(Variant v) {
  switch (v) {
    case Variant::Rgb: return 3;
    case Variant::D: return 1;
    case Variant::A: return 0;
    default: return 4;
  }
}

bool variant_has_vision(Variant v) { return v != Variant::A; }

bool variant_has_audio(Variant v) {
  return v == Variant::A || v == Variant::Rgbda;
}

void ModelConfig::validate() const {
  for (int c : block_channels)
    if (c < 1) raise_contract("model config: block_channels must be positive");
  if (conv_kernel < 1 || conv_kernel % 2 == 0)
    raise_contract("model config: conv_kernel must be odd and positive");
  if (audio_filters < 1) raise_contract("model config: audio_filters must be positive");
  if (audio_kernel < 1) raise_contract("model config: audio_kernel must be positive");
  if (audio_layers != 1 && audio_layers != 2)
    raise_contract("model config: audio_layers must be 1 or 2");
  if (fc1_width < 1) raise_contract("model config: fc1_width must be positive");
  if (n_classes < 2) raise_contract("model config: n_classes must be at least 2");
  if (!(dropout_p >= 0.0) || dropout_p >= 1.0)
    raise_contract("model config: dropout_p must lie in [0, 1)");
  if (n_mfcc < 1) raise_contract("model config: n_mfcc must be positive");
  if (input_h < 8 || input_w < 8 || input_h % 8 != 0 || input_w % 8 != 0)
    raise_contract(
        "model config: input dims must be multiples of 8 to survive three "
        "pooling stages, got " + std::to_string(input_h) + "x" +
        std::to_string(input_w));
  const int min_frames = audio_layers * (audio_kernel - 1) + 1;
  if (variant_has_audio(variant) && audio_frames < min_frames)
    raise_contract("model config: audio_frames " + std::to_string(audio_frames) +
                   " too short for " + std::to_string(audio_layers) +
                   " valid convolutions of width " + std::to_string(audio_kernel));
}

// ---- layer operations ------------------------------------------------------

ConvLstmState conv_lstm_zero_state(int channels, int h, int w) {
  ConvLstmState s;
  s.hidden = Tensor<double>::zeros({channels, h, w});
  s.cell = Tensor<double>::zeros({channels, h, w});
  return s;
}

ConvLstmState conv_lstm_step(const Tensor<double>& x,
                             const ConvLstmState& state,
                             const ConvLstmParams& p) {
  const int k = static_cast<int>(p.w_x.shape()[2]);
  Tensor<double> gates = add(conv2d(x, p.w_x, p.bias, 1, k / 2),
                             conv2d(state.hidden, p.w_h, {}, 1, k / 2));
  auto chunks = chunk0(gates, 4);
  Tensor<double> i = sigmoid(chunks[0]);
  Tensor<double> f = sigmoid(chunks[1]);
  Tensor<double> o = sigmoid(chunks[2]);
  Tensor<double> g = tanh_op(chunks[3]);
  ConvLstmState next;
  next.cell = add(mul(f, state.cell), mul(i, g));
  next.hidden = mul(o, tanh_op(next.cell));
  return next;
}

Tensor<double> vision_block_forward(const Tensor<double>& seq,
                                    VisionBlockParams& p, Mode mode,
                                    double dropout_p, bool dropout_after_conv_a,
                                    bool dropout_after_lstm, RngState& rng,
                                    std::vector<LayerInfo>* trace,
                                    const std::string& prefix) {
  if (seq.ndim() != 4)
    raise_contract("vision block: expected [T,C,H,W], got " +
                   shape_str(seq.shape()));
  const auto h = seq.shape()[2];
  const auto w = seq.shape()[3];
  if (h % 2 != 0 || w % 2 != 0)
    raise_contract("vision block: spatial dims must be even, got " +
                   shape_str(seq.shape()));

  Tensor<double> x = conv_bn_relu_2d(seq, p.conv_a, mode, dropout_p,
                                     dropout_after_conv_a, rng, trace,
                                     prefix + ".a");
  x = conv_bn_relu_2d(x, p.conv_b, mode, dropout_p, true, rng, trace,
                      prefix + ".b");
  x = max_pool2d(x, 2, 2).output;
  const int out_ch = static_cast<int>(p.conv_b.kernel.shape()[0]);
  trace_layer(trace, prefix + ".pool", "max_pool", x, out_ch, out_ch, 2, 2);

  const int t_steps = static_cast<int>(x.shape()[0]);
  ConvLstmState state = conv_lstm_zero_state(
      out_ch, static_cast<int>(x.shape()[2]), static_cast<int>(x.shape()[3]));
  std::vector<Tensor<double>> hidden_seq;
  hidden_seq.reserve(static_cast<size_t>(t_steps));
  for (int t = 0; t < t_steps; ++t) {
    state = conv_lstm_step(slice0(x, t), state, p.lstm);
    hidden_seq.push_back(state.hidden);
  }
  Tensor<double> out = stack0(hidden_seq);
  trace_layer(trace, prefix + ".lstm", "convlstm", out, out_ch, out_ch,
              static_cast<int>(p.lstm.w_x.shape()[2]));
  if (dropout_after_lstm && dropout_p > 0.0) {
    out = dropout(out, dropout_p, mode, rng);
    trace_layer(trace, prefix + ".dropout_lstm", "dropout", out, out_ch,
                out_ch);
  }
  return out;
}

Tensor<double> vision_branch_forward(const Tensor<double>& seq,
                                     std::array<VisionBlockParams, 3>& blocks,
                                     Mode mode, double dropout_p,
                                     RngState& rng,
                                     std::vector<LayerInfo>* trace) {
  Tensor<double> x = seq;
  for (int b = 0; b < 3; ++b) {
    // Central dropout exceptions: no dropout after block 1's first conv and
    // none after block 3's convLSTM.
    x = vision_block_forward(x, blocks[static_cast<size_t>(b)], mode,
                             dropout_p, b != 0, b != 2, rng, trace,
                             "vision" + std::to_string(b + 1));
  }
  Tensor<double> last = slice0(x, x.shape()[0] - 1);
  Tensor<double> feat = global_avg_pool(last);
  trace_layer(trace, "vision.gap", "global_avg_pool", feat,
              static_cast<int>(last.shape()[0]),
              static_cast<int>(feat.shape()[0]));
  return feat;
}

Tensor<double> audio_branch_forward(const Tensor<double>& mfcc,
                                    std::vector<ConvBnParams>& layers,
                                    Mode mode, double dropout_p, RngState& rng,
                                    std::vector<LayerInfo>* trace) {
  if (mfcc.ndim() != 2)
    raise_contract("audio branch: expected [n_mfcc, T], got " +
                   shape_str(mfcc.shape()));
  Tensor<double> x = mfcc;
  int index = 0;
  for (ConvBnParams& p : layers) {
    const std::string prefix = "audio" + std::to_string(++index);
    const int in_ch = static_cast<int>(p.kernel.shape()[1]);
    const int out_ch = static_cast<int>(p.kernel.shape()[0]);
    const int k = static_cast<int>(p.kernel.shape()[2]);
    x = conv1d(x, p.kernel, p.bias, 1, 0);
    trace_layer(trace, prefix + ".conv", "conv1d", x, in_ch, out_ch, k);
    if (p.gamma.defined()) {
      const auto len = x.shape()[1];
      x = reshape(layer_batch_norm(reshape(x, {1, out_ch, len}), p, mode),
                  {out_ch, len});
      trace_layer(trace, prefix + ".bn", "batch_norm", x, out_ch, out_ch);
    }
    x = relu(x);
    trace_layer(trace, prefix + ".relu", "relu", x, out_ch, out_ch);
    if (dropout_p > 0.0) {
      x = dropout(x, dropout_p, mode, rng);
      trace_layer(trace, prefix + ".dropout", "dropout", x, out_ch, out_ch);
    }
  }
  Tensor<double> feat = global_max_pool_last(x);
  trace_layer(trace, "audio.pool", "global_max_pool", feat,
              static_cast<int>(x.shape()[0]),
              static_cast<int>(feat.shape()[0]));
  return feat;
}

Tensor<double> fusion_forward(const Tensor<double>& vision_feat,
                              const Tensor<double>& audio_feat,
                              const FusionParams& p, Mode mode,
                              double dropout_p, RngState& rng,
                              std::vector<LayerInfo>* trace) {
  std::vector<Tensor<double>> parts;
  if (vision_feat.defined()) parts.push_back(vision_feat);
  if (audio_feat.defined()) parts.push_back(audio_feat);
  if (parts.empty()) raise_contract("fusion: no features to fuse");

  Tensor<double> x = parts.size() == 1 ? parts[0] : concat0(parts);
  if (parts.size() > 1)
    trace_layer(trace, "fusion.concat", "concat", x,
                static_cast<int>(x.shape()[0]),
                static_cast<int>(x.shape()[0]));
  const auto width = x.shape()[0];
  if (width != p.fc1_weight.shape()[1])
    raise_contract("fusion: feature width " + std::to_string(width) +
                   " does not match fc1 input " +
                   std::to_string(p.fc1_weight.shape()[1]));

  if (dropout_p > 0.0) {
    x = dropout(x, dropout_p, mode, rng);
    trace_layer(trace, "fusion.dropout_in", "dropout", x,
                static_cast<int>(width), static_cast<int>(width));
  }
  x = linear(reshape(x, {1, width}), p.fc1_weight, p.fc1_bias);
  trace_layer(trace, "fusion.fc1", "fc", x, static_cast<int>(width),
              static_cast<int>(p.fc1_weight.shape()[0]));
  x = relu(x);
  trace_layer(trace, "fusion.relu", "relu", x,
              static_cast<int>(p.fc1_weight.shape()[0]),
              static_cast<int>(p.fc1_weight.shape()[0]));
  if (dropout_p > 0.0) {
    x = dropout(x, dropout_p, mode, rng);
    trace_layer(trace, "fusion.dropout_fc1", "dropout", x,
                static_cast<int>(p.fc1_weight.shape()[0]),
                static_cast<int>(p.fc1_weight.shape()[0]));
  }
  x = linear(x, p.fc2_weight, p.fc2_bias);
  trace_layer(trace, "fusion.fc2", "fc", x,
              static_cast<int>(p.fc1_weight.shape()[0]),
              static_cast<int>(p.fc2_weight.shape()[0]));
  return reshape(x, {p.fc2_weight.shape()[0]});
}

// ---- input adapters --------------------------------------------------------

Tensor<double> visual_input(const VisualSample& sample, Variant variant) {
  if (!variant_has_vision(variant))
    raise_contract("visual_input: audio-only variant takes no visual input");
  const int channels = variant_visual_channels(variant);
  const int first = variant == Variant::D ? 3 : 0;
  Tensor<double> out = Tensor<double>::zeros(
      {sample.n_frames, channels, sample.height, sample.width});
  double* dst = out.data();
  for (int t = 0; t < sample.n_frames; ++t)
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < sample.height; ++y)
        for (int x = 0; x < sample.width; ++x)
          *dst++ = sample.at(t, first + c, y, x);
  return out;
}

Tensor<double> audio_input(const MfccFeatures& features) {
  Tensor<double> out =
      Tensor<double>::zeros({features.n_coeffs, features.n_frames});
  std::copy(features.data.begin(), features.data.end(), out.data());
  return out;
}

// ---- FinoNet ---------------------------------------------------------------

void FinoNet::register_param(const std::string& name, Tensor<double>& slot,
                             std::vector<std::int64_t> shape,
                             double init_bound, RngState& rng) {
  slot = Tensor<double>::zeros(shape);
  if (init_bound > 0.0) {
    double* data = slot.data();
    const std::int64_t n = slot.numel();
    for (std::int64_t i = 0; i < n; ++i)
      data[i] = rng.next_uniform(-init_bound, init_bound);
  }
  slot.set_requires_grad(true);
  params_.push_back(Param{name, slot, true});
}

FinoNet::FinoNet(const ModelConfig& config) : config_(config) {
  config_.validate();
  RngState rng = RngState::derive(config_.seed, "model-init", 0, 0);
  const int k = config_.conv_kernel;

  auto register_conv_bn = [&](const std::string& prefix, ConvBnParams& p,
                              std::vector<std::int64_t> kernel_shape) {
    std::int64_t fan_in = 1;
    for (size_t i = 1; i < kernel_shape.size(); ++i) fan_in *= kernel_shape[i];
    const std::int64_t out_ch = kernel_shape[0];
    register_param(prefix + ".kernel", p.kernel, kernel_shape,
                   std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
    register_param(prefix + ".bias", p.bias, {out_ch}, 0.0, rng);
    if (config_.use_batch_norm) {
      register_param(prefix + ".gamma", p.gamma, {out_ch}, 0.0, rng);
      std::fill_n(p.gamma.data(), out_ch, 1.0);
      register_param(prefix + ".beta", p.beta, {out_ch}, 0.0, rng);
      p.stats.running_mean.assign(static_cast<size_t>(out_ch), 0.0);
      p.stats.running_var.assign(static_cast<size_t>(out_ch), 1.0);
    }
  };

  if (variant_has_vision(config_.variant)) {
    int in_ch = variant_visual_channels(config_.variant);
    for (int b = 0; b < 3; ++b) {
      const int out_ch = config_.block_channels[static_cast<size_t>(b)];
      const std::string prefix = "vision" + std::to_string(b + 1);
      VisionBlockParams& block = vision_[static_cast<size_t>(b)];
      register_conv_bn(prefix + ".conv_a", block.conv_a,
                       {out_ch, in_ch, k, k});
      register_conv_bn(prefix + ".conv_b", block.conv_b,
                       {out_ch, out_ch, k, k});
      const double lstm_bound =
          std::sqrt(3.0 / static_cast<double>(out_ch * k * k));
      register_param(prefix + ".lstm.w_x", block.lstm.w_x,
                     {4 * out_ch, out_ch, k, k}, lstm_bound, rng);
      register_param(prefix + ".lstm.w_h", block.lstm.w_h,
                     {4 * out_ch, out_ch, k, k}, lstm_bound, rng);
      register_param(prefix + ".lstm.bias", block.lstm.bias, {4 * out_ch},
                     0.0, rng);
      // Forget-gate chunk starts open so early training can carry state.
      std::fill_n(block.lstm.bias.data() + out_ch, out_ch, 1.0);
      in_ch = out_ch;
    }
  }

  if (variant_has_audio(config_.variant)) {
    audio_.resize(static_cast<size_t>(config_.audio_layers));
    int in_ch = config_.n_mfcc;
    for (int l = 0; l < config_.audio_layers; ++l) {
      register_conv_bn("audio.conv" + std::to_string(l + 1),
                       audio_[static_cast<size_t>(l)],
                       {config_.audio_filters, in_ch, config_.audio_kernel});
      in_ch = config_.audio_filters;
    }
  }

  const std::int64_t fusion_in =
      (variant_has_vision(config_.variant) ? config_.block_channels[2] : 0) +
      (variant_has_audio(config_.variant) ? config_.audio_filters : 0);
  // The audio-only variant uses a single 64-neuron hidden layer.
  const std::int64_t hidden = config_.variant == Variant::A
                                  ? config_.audio_filters
                                  : config_.fc1_width;
  register_param("fusion.fc1.weight", fusion_.fc1_weight, {hidden, fusion_in},
                 std::sqrt(6.0 / static_cast<double>(fusion_in)), rng);
  register_param("fusion.fc1.bias", fusion_.fc1_bias, {hidden}, 0.0, rng);
  register_param("fusion.fc2.weight", fusion_.fc2_weight,
                 {config_.n_classes, hidden},
                 std::sqrt(6.0 / static_cast<double>(hidden)), rng);
  register_param("fusion.fc2.bias", fusion_.fc2_bias, {config_.n_classes},
                 0.0, rng);
}

Param* FinoNet::find_param(const std::string& name) {
  for (Param& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<StatsEntry> FinoNet::stats_entries() {
  std::vector<StatsEntry> out;
  if (!config_.use_batch_norm) return out;
  auto add = [&](const std::string& prefix, ConvBnParams& p) {
    if (!p.gamma.defined()) return;
    const std::int64_t c = p.gamma.numel();
    out.push_back({prefix + ".running_mean", &p.stats.running_mean, c});
    out.push_back({prefix + ".running_var", &p.stats.running_var, c});
  };
  if (variant_has_vision(config_.variant))
    for (int b = 0; b < 3; ++b) {
      const std::string prefix = "vision" + std::to_string(b + 1);
      add(prefix + ".conv_a", vision_[static_cast<size_t>(b)].conv_a);
      add(prefix + ".conv_b", vision_[static_cast<size_t>(b)].conv_b);
    }
  for (size_t l = 0; l < audio_.size(); ++l)
    add("audio.conv" + std::to_string(l + 1), audio_[l]);
  return out;
}

int FinoNet::set_trainable(const std::string& prefix, bool trainable) {
  int touched = 0;
  for (Param& p : params_) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    p.trainable = trainable;
    p.value.set_requires_grad(trainable);
    ++touched;
  }
  return touched;
}

std::int64_t FinoNet::parameter_count() const {
  std::int64_t n = 0;
  for (const Param& p : params_) n += p.value.numel();
  return n;
}

void FinoNet::zero_grad() {
  for (Param& p : params_) p.value.zero_grad();
}

Tensor<double> FinoNet::forward(const ModelInput& input, Mode mode,
                                RngState& rng,
                                std::vector<LayerInfo>* trace) {
  const double p = config_.use_dropout ? config_.dropout_p : 0.0;
  Tensor<double> vision_feat;
  Tensor<double> audio_feat;

  if (variant_has_vision(config_.variant)) {
    if (!input.visual.defined())
      raise_contract("model forward: variant " +
                     std::string(variant_to_string(config_.variant)) +
                     " needs a visual input");
    if (input.visual.ndim() != 4 ||
        input.visual.shape()[1] != variant_visual_channels(config_.variant))
      raise_contract("model forward: visual input " +
                     shape_str(input.visual.shape()) + " does not match " +
                     std::to_string(variant_visual_channels(config_.variant)) +
                     " channels");
    vision_feat = vision_branch_forward(input.visual, vision_, mode, p, rng,
                                        trace);
  }
  if (variant_has_audio(config_.variant)) {
    if (!input.mfcc.defined())
      raise_contract("model forward: variant " +
                     std::string(variant_to_string(config_.variant)) +
                     " needs an audio input");
    if (input.mfcc.ndim() != 2 || input.mfcc.shape()[0] != config_.n_mfcc)
      raise_contract("model forward: audio input " +
                     shape_str(input.mfcc.shape()) + " does not match " +
                     std::to_string(config_.n_mfcc) + " coefficients");
    audio_feat = audio_branch_forward(input.mfcc, audio_, mode, p, rng, trace);
  }
  return fusion_forward(vision_feat, audio_feat, fusion_, mode, p, rng, trace);
}

std::vector<LayerInfo> FinoNet::layer_manifest() {
  // Structure does not depend on the spatial or temporal extent, so the
  // probe runs at the smallest valid shape.
  ModelInput probe;
  if (variant_has_vision(config_.variant))
    probe.visual = Tensor<double>::zeros(
        {1, variant_visual_channels(config_.variant), 8, 8});
  if (variant_has_audio(config_.variant))
    probe.mfcc = Tensor<double>::zeros(
        {config_.n_mfcc, config_.audio_layers * (config_.audio_kernel - 1) + 1});
  NoGradGuard guard;
  RngState rng{0, 0};
  std::vector<LayerInfo> trace;
  forward(probe, Mode::Eval, rng, &trace);
  return trace;
}

}  // namespace fino

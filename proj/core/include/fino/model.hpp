#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fino/audio.hpp"
#include "fino/ops.hpp"
#include "fino/rng.hpp"
#include "fino/tensor.hpp"
#include "fino/vision.hpp"

namespace fino {

// Input variants: vision-only (rgb, d), audio-only (a), and fused (rgbd,
// rgbda). The variant fixes the visual channel count and the fusion width.
enum class Variant { Rgb, D, A, Rgbd, Rgbda };

const char* variant_to_string(Variant v);
Variant variant_from_string(const std::string& s);
int variant_visual_channels(Variant v);  // 3, 1, 0, 4, 4
bool variant_has_vision(Variant v);
bool variant_has_audio(Variant v);

struct ModelConfig {
  std::array<int, 3> block_channels{64, 128, 256};
  int conv_kernel = 3;      // odd; gate convolutions share it
  int audio_filters = 64;
  int audio_kernel = 32;
  int audio_layers = 2;     // 1 is the single-layer ablation
  int fc1_width = 256;
  int n_classes = 2;
  double dropout_p = 0.4;
  int input_h = 224;
  int input_w = 224;
  int n_mfcc = 20;
  int audio_frames = 256;   // T_a
  Variant variant = Variant::Rgbda;
  bool use_batch_norm = true;   // ablation toggle
  bool use_dropout = true;      // ablation toggle
  std::uint64_t seed = 0;

  // Raises a contract error when any field is out of range (spatial dims
  // must survive three halvings; the audio timeline must survive the
  // valid convolutions).
  void validate() const;
};

// ---- parameter bundles -----------------------------------------------------

// Convolution plus optional batch norm; gamma stays undefined when batch
// norm is disabled.
struct ConvBnParams {
  Tensor<double> kernel;
  Tensor<double> bias;
  Tensor<double> gamma;
  Tensor<double> beta;
  BatchNormStats stats;
};

// Gates are packed along the output-channel axis as [i, f, o, g].
struct ConvLstmParams {
  Tensor<double> w_x;   // [4C, C_in, k, k]
  Tensor<double> w_h;   // [4C, C, k, k]
  Tensor<double> bias;  // [4C]; forget chunk initialized to +1
};

struct ConvLstmState {
  Tensor<double> hidden;
  Tensor<double> cell;
};

struct VisionBlockParams {
  ConvBnParams conv_a;
  ConvBnParams conv_b;
  ConvLstmParams lstm;
};

// ---- introspection ---------------------------------------------------------

// One record per layer in execution order, captured by the same code that
// runs the forward pass. Dropout sites are recorded even though eval mode
// skips them, because their placement is structural.
struct LayerInfo {
  std::string name;
  std::string kind;  // conv2d|conv1d|convlstm|batch_norm|relu|dropout|
                     // max_pool|global_avg_pool|global_max_pool|concat|fc
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;       // spatial or temporal kernel extent
  int pool_factor = 1;  // spatial reduction for max_pool entries
  std::vector<std::int64_t> out_shape;
};

// ---- layer operations ------------------------------------------------------

// i = sigma(w_x[i]*x + w_h[i]*h + b_i), f/o likewise, g = tanh(...);
// c' = f.c + i.g; h' = o.tanh(c'). Gate convolutions are zero-padded to
// preserve the spatial dims.
ConvLstmState conv_lstm_step(const Tensor<double>& x,
                             const ConvLstmState& state,
                             const ConvLstmParams& p);

// Zero hidden and cell state shaped [channels, h, w].
ConvLstmState conv_lstm_zero_state(int channels, int h, int w);

// Per-frame conv->bn->relu->(dropout)->conv->bn->relu->(dropout) on the
// whole sequence as one batch, 2x max pool, then the convLSTM unrolled over
// time from zero state. seq is [T, C_in, H, W] with H, W even; the result
// is the hidden-state sequence [T, C_out, H/2, W/2].
Tensor<double> vision_block_forward(const Tensor<double>& seq,
                                    VisionBlockParams& p, Mode mode,
                                    double dropout_p, bool dropout_after_conv_a,
                                    bool dropout_after_lstm, RngState& rng,
                                    std::vector<LayerInfo>* trace = nullptr,
                                    const std::string& prefix = "");

// Blocks 1..3, then the global average pool of the last time step's hidden
// state: [T, C_in, H, W] -> [block_channels[2]].
Tensor<double> vision_branch_forward(const Tensor<double>& seq,
                                     std::array<VisionBlockParams, 3>& blocks,
                                     Mode mode, double dropout_p,
                                     RngState& rng,
                                     std::vector<LayerInfo>* trace = nullptr);

// conv1d->bn->relu->dropout per layer, then a global max pool over time:
// [n_mfcc, T_a] -> [audio_filters].
Tensor<double> audio_branch_forward(const Tensor<double>& mfcc,
                                    std::vector<ConvBnParams>& layers,
                                    Mode mode, double dropout_p, RngState& rng,
                                    std::vector<LayerInfo>* trace = nullptr);

struct FusionParams {
  Tensor<double> fc1_weight;
  Tensor<double> fc1_bias;
  Tensor<double> fc2_weight;
  Tensor<double> fc2_bias;
};

// concat(vision, audio) -> dropout -> fc1 -> relu -> dropout -> fc2.
// Undefined features are absent modalities; at least one must be present.
Tensor<double> fusion_forward(const Tensor<double>& vision_feat,
                              const Tensor<double>& audio_feat,
                              const FusionParams& p, Mode mode,
                              double dropout_p, RngState& rng,
                              std::vector<LayerInfo>* trace = nullptr);

// ---- input adapters --------------------------------------------------------

// Selects the variant's channels from a [T,4,h,w] sample: rgb -> 0..2,
// d -> 3, rgbd/rgbda -> all four. Audio-only variants take no visual input.
Tensor<double> visual_input(const VisualSample& sample, Variant variant);

// [n_coeffs, n_frames] feature matrix as a tensor.
Tensor<double> audio_input(const MfccFeatures& features);

struct ModelInput {
  Tensor<double> visual;  // [T, C_in, H, W]; undefined for audio-only
  Tensor<double> mfcc;    // [n_mfcc, T_a]; undefined for vision-only
};

// ---- the assembled network -------------------------------------------------

struct Param {
  std::string name;
  Tensor<double> value;  // aliases the tensor used by forward
  bool trainable = true;
};

// Named view of a batch-norm running statistic (not a learned parameter,
// but part of the checkpoint state).
struct StatsEntry {
  std::string name;
  std::vector<double>* values;
  std::int64_t expected_size;
};

class FinoNet {
 public:
  explicit FinoNet(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Registration order is fixed by the architecture; init, checkpointing,
  // and optimizer state all index into this list.
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param* find_param(const std::string& name);

  // Running batch-norm statistics in a stable order.
  std::vector<StatsEntry> stats_entries();

  // Marks every parameter whose name starts with `prefix`; returns the
  // number touched. Frozen parameters stop requiring gradients.
  int set_trainable(const std::string& prefix, bool trainable);

  std::int64_t parameter_count() const;
  void zero_grad();

  // Train mode draws dropout masks from `rng` and updates batch-norm
  // running statistics; eval mode touches neither.
  Tensor<double> forward(const ModelInput& input, Mode mode, RngState& rng,
                         std::vector<LayerInfo>* trace = nullptr);

  // Executes an eval-mode forward pass on zero inputs at the configured
  // shapes, capturing the layer list actually run.
  std::vector<LayerInfo> layer_manifest();

  std::array<VisionBlockParams, 3>& vision_blocks() { return vision_; }
  std::vector<ConvBnParams>& audio_layers() { return audio_; }
  FusionParams& fusion() { return fusion_; }

 private:
  void register_param(const std::string& name, Tensor<double>& slot,
                      std::vector<std::int64_t> shape, double init_bound,
                      RngState& rng);

  ModelConfig config_;
  std::array<VisionBlockParams, 3> vision_;
  std::vector<ConvBnParams> audio_;
  FusionParams fusion_;
  std::vector<Param> params_;
};

}  // namespace fino

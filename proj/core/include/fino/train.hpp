#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "fino/audio.hpp"
#include "fino/episode.hpp"
#include "fino/model.hpp"
#include "fino/rng.hpp"
#include "fino/vision.hpp"

namespace fino {

// Sensor-to-tensor settings shared by training, evaluation, and inference.
struct PipelineConfig {
  VisionConfig vision;
  MfccConfig mfcc;
};

struct TrainConfig {
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int max_epochs = 50;
  int patience = 5;        // epochs without val-F1 improvement before stopping
  std::uint64_t seed = 0;
  Variant variant = Variant::Rgbda;  // must match the model's variant
  bool augment = true;
  // Stops as soon as the best validation F1 reaches this value; 0 disables.
  // Desk-scale affordance: lets a convergence run end the moment it succeeds.
  double target_f1 = 0.0;

  void validate() const;
};

// Index split of a dataset; indices are sorted, disjoint, and exhaustive.
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> test;
};

// Per class, floor(train_fraction * count) members go to the seeded-shuffled
// train side and the remainder to test.
SplitIndices stratified_split(const std::vector<Label>& labels,
                              double train_fraction, std::uint64_t seed);

// w_k = N / (2 * n_k): the weighted loss of a balanced batch averages to the
// unweighted one. Index 0 is success, 1 is fail.
std::array<double, 2> class_weights(int n_success, int n_fail);

struct Metrics {
  // confusion[actual][predicted], actual/predicted in {success=0, fail=1}.
  std::array<std::array<std::int64_t, 2>, 2> confusion{};
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;

  std::int64_t total() const {
    return confusion[0][0] + confusion[0][1] + confusion[1][0] +
           confusion[1][1];
  }
};

// Support-weighted precision/recall/F1 from (label, prediction) pairs;
// 0/0 ratios count as zero.
Metrics metrics_from_pairs(const std::vector<int>& labels,
                           const std::vector<int>& predictions);

// Bias-corrected Adam over a parameter list. Frozen parameters keep their
// moments and values untouched; a missing gradient counts as zero.
class Adam {
 public:
  Adam(std::vector<Param>& params, double learning_rate, double beta1,
       double beta2, double eps);

  // Consumes the gradients currently on the parameters. Raises a numeric
  // error naming the tensor if any gradient element is not finite.
  void step();

  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Param>* params_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Builds the model input for the leading `fraction` of an episode: visual
// frame sampling (and optional augmentation) plus MFCC of the clipped audio.
// `augment_rng` null means no augmentation. `sample_out`, when non-null,
// receives the assembled visual sample (variants with vision only).
ModelInput prepare_input(const Episode& episode, const ModelConfig& model_cfg,
                         const PipelineConfig& pipeline, double fraction,
                         RngState sample_rng, RngState* augment_rng = nullptr,
                         VisualSample* sample_out = nullptr);

// Eval-mode logits for the leading `fraction` of one episode. fraction 1.0
// is the standard inference path used by evaluate().
Tensor<double> partial_observation_infer(FinoNet& model,
                                         const Episode& episode,
                                         const PipelineConfig& pipeline,
                                         double fraction, RngState sample_rng,
                                         VisualSample* sample_out = nullptr);

// Argmax predictions over eval-mode forwards; frame sampling is seeded per
// episode position so repeated calls are identical.
Metrics evaluate(FinoNet& model, const Dataset& data,
                 const std::vector<int>& indices,
                 const PipelineConfig& pipeline, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_precision = 0.0;
  double val_recall = 0.0;
  double val_f1 = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_f1 = 0.0;
  // Optimizer steps applied across the whole run.
  std::int64_t steps = 0;
};

// Epoch loop with seeded shuffling, class-weighted loss, Adam, and early
// stopping on validation weighted F1. On return the model holds the
// best-epoch parameters and batch-norm statistics. When `log` is non-null
// each epoch appends one line:
//   epoch=N train_loss=X val_precision=X val_recall=X val_f1=X
// with doubles printed as %.17g, so equal runs write equal bytes.
TrainResult train(FinoNet& model, const Dataset& data,
                  const std::vector<int>& train_indices,
                  const std::vector<int>& val_indices,
                  const TrainConfig& config, const PipelineConfig& pipeline,
                  std::ostream* log = nullptr);

struct BenchResult {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  int repetitions = 0;
};

// Times eval-mode forwards on one prepared input; one warmup pass is
// excluded from the statistics.
BenchResult bench_inference(FinoNet& model, const Episode& episode,
                            const PipelineConfig& pipeline, int repetitions);

}  // namespace fino

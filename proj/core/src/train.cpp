#include "fino/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "fino/error.hpp"
#include "fino/ops.hpp"

namespace fino {
namespace {

void shuffle_indices(std::vector<int>& indices, RngState& rng) {
  for (size_t i = 0; i + 1 < indices.size(); ++i) {
    const size_t j =
        i + static_cast<size_t>(rng.next_below(indices.size() - i));
    std::swap(indices[i], indices[j]);
  }
}

// First `fraction` of the episode's audio timeline; whole signal at 1.0 so
// full-observation inference never depends on rounding.
AudioSignal clip_audio(const Episode& episode, double fraction) {
  if (fraction >= 1.0) return episode.audio;
  const double cutoff = fraction * episode.duration_seconds();
  const auto keep = static_cast<size_t>(std::min<double>(
      static_cast<double>(episode.audio.samples.size()),
      std::floor(cutoff * episode.audio.sample_rate)));
  AudioSignal out;
  out.sample_rate = episode.audio.sample_rate;
  out.samples.assign(episode.audio.samples.begin(),
                     episode.audio.samples.begin() +
                         static_cast<std::ptrdiff_t>(keep));
  return out;
}

std::string log_line(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "epoch=%d train_loss=%.17g val_precision=%.17g "
                "val_recall=%.17g val_f1=%.17g",
                r.epoch, r.train_loss, r.val_precision, r.val_recall,
                r.val_f1);
  return std::string(buf);
}

struct ModelSnapshot {
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> stats;
};

ModelSnapshot take_snapshot(FinoNet& model) {
  ModelSnapshot s;
  for (Param& p : model.params()) s.params.push_back(p.value.values());
  for (StatsEntry& e : model.stats_entries()) s.stats.push_back(*e.values);
  return s;
}

void restore_snapshot(FinoNet& model, const ModelSnapshot& s) {
  auto& params = model.params();
  for (size_t i = 0; i < params.size(); ++i)
    params[i].value.values() = s.params[i];
  auto stats = model.stats_entries();
  for (size_t i = 0; i < stats.size(); ++i) *stats[i].values = s.stats[i];
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0))
    raise_contract("train config: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    raise_contract("train config: betas must lie in [0, 1)");
  if (!(eps > 0.0)) raise_contract("train config: eps must be positive");
  if (batch_size < 1) raise_contract("train config: batch_size must be >= 1");
  if (max_epochs < 1) raise_contract("train config: max_epochs must be >= 1");
  if (patience < 1) raise_contract("train config: patience must be >= 1");
  if (target_f1 < 0.0 || target_f1 > 1.0)
    raise_contract("train config: target_f1 must lie in [0, 1]");
}

SplitIndices stratified_split(const std::vector<Label>& labels,
                              double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    raise_contract("stratified_split: train_fraction must lie in (0, 1)");
  std::array<std::vector<int>, 2> by_class;
  for (size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  if (by_class[0].empty() || by_class[1].empty())
    raise_data("stratified_split: need both classes, got " +
               std::to_string(by_class[0].size()) + " success / " +
               std::to_string(by_class[1].size()) + " fail");

  SplitIndices out;
  for (int k = 0; k < 2; ++k) {
    std::vector<int>& members = by_class[static_cast<size_t>(k)];
    RngState rng = RngState::derive(seed, "stratified-split",
                                    static_cast<std::uint64_t>(k));
    shuffle_indices(members, rng);
    const auto n_train = static_cast<size_t>(std::floor(
        train_fraction * static_cast<double>(members.size())));
    out.train.insert(out.train.end(), members.begin(),
                     members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(),
                    members.begin() + static_cast<std::ptrdiff_t>(n_train),
                    members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::array<double, 2> class_weights(int n_success, int n_fail) {
  if (n_success < 1 || n_fail < 1)
    raise_data("class_weights: need both classes, got " +
               std::to_string(n_success) + " success / " +
               std::to_string(n_fail) + " fail");
  const double n = n_success + n_fail;
  return {n / (2.0 * n_success), n / (2.0 * n_fail)};
}

Metrics metrics_from_pairs(const std::vector<int>& labels,
                           const std::vector<int>& predictions) {
  if (labels.size() != predictions.size())
    raise_contract("metrics: " + std::to_string(labels.size()) +
                   " labels vs " + std::to_string(predictions.size()) +
                   " predictions");
  if (labels.empty()) raise_contract("metrics: no samples");

  Metrics m;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 1 || predictions[i] < 0 ||
        predictions[i] > 1)
      raise_contract("metrics: class indices must be 0 or 1");
    m.confusion[static_cast<size_t>(labels[i])]
               [static_cast<size_t>(predictions[i])] += 1;
  }

  const double total = static_cast<double>(labels.size());
  auto ratio = [](double num, double den) {
    return den > 0.0 ? num / den : 0.0;
  };
  for (int k = 0; k < 2; ++k) {
    const auto uk = static_cast<size_t>(k);
    const double tp = static_cast<double>(m.confusion[uk][uk]);
    const double support =
        static_cast<double>(m.confusion[uk][0] + m.confusion[uk][1]);
    const double predicted =
        static_cast<double>(m.confusion[0][uk] + m.confusion[1][uk]);
    const double precision = ratio(tp, predicted);
    const double recall = ratio(tp, support);
    const double f1 = ratio(2.0 * precision * recall, precision + recall);
    const double share = support / total;
    m.weighted_precision += share * precision;
    m.weighted_recall += share * recall;
    m.weighted_f1 += share * f1;
  }
  return m;
}

Adam::Adam(std::vector<Param>& params, double learning_rate, double beta1,
           double beta2, double eps)
    : params_(&params),
      lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Param& p : params) {
    m_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_->size(); ++i) {
    Param& p = (*params_)[i];
    if (!p.trainable) continue;
    const double* g = p.value.grad();
    double* w = p.value.data();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    const auto n = static_cast<size_t>(p.value.numel());
    for (size_t j = 0; j < n; ++j) {
      const double grad = g != nullptr ? g[j] : 0.0;
      if (!std::isfinite(grad))
        raise_numeric("adam: non-finite gradient in '" + p.name +
                      "' at element " + std::to_string(j));
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad * grad;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

ModelInput prepare_input(const Episode& episode, const ModelConfig& model_cfg,
                         const PipelineConfig& pipeline, double fraction,
                         RngState sample_rng, RngState* augment_rng,
                         VisualSample* sample_out) {
  if (pipeline.mfcc.n_coeffs != model_cfg.n_mfcc)
    raise_contract("prepare_input: pipeline yields " +
                   std::to_string(pipeline.mfcc.n_coeffs) +
                   " mfcc coefficients but the model expects " +
                   std::to_string(model_cfg.n_mfcc));
  ModelInput input;
  if (variant_has_vision(model_cfg.variant)) {
    VisualSample sample = assemble_visual_sample(episode, pipeline.vision,
                                                 sample_rng, fraction);
    if (augment_rng != nullptr)
      augment_visual_sample(sample, pipeline.vision, *augment_rng);
    input.visual = visual_input(sample, model_cfg.variant);
    if (sample_out != nullptr) *sample_out = std::move(sample);
  }
  if (variant_has_audio(model_cfg.variant)) {
    const AudioSignal clipped = clip_audio(episode, fraction);
    input.mfcc = audio_input(mfcc_features(clipped, pipeline.mfcc));
  }
  return input;
}

Tensor<double> partial_observation_infer(FinoNet& model,
                                         const Episode& episode,
                                         const PipelineConfig& pipeline,
                                         double fraction, RngState sample_rng,
                                         VisualSample* sample_out) {
  ModelInput input = prepare_input(episode, model.config(), pipeline,
                                   fraction, sample_rng, nullptr, sample_out);
  NoGradGuard guard;
  RngState unused{0, 0};
  return model.forward(input, Mode::Eval, unused);
}

Metrics evaluate(FinoNet& model, const Dataset& data,
                 const std::vector<int>& indices,
                 const PipelineConfig& pipeline, std::uint64_t seed) {
  if (indices.empty()) raise_contract("evaluate: no episodes");
  std::vector<int> labels;
  std::vector<int> predictions;
  labels.reserve(indices.size());
  predictions.reserve(indices.size());
  for (size_t pos = 0; pos < indices.size(); ++pos) {
    const Episode& episode =
        data.episodes[static_cast<size_t>(indices[pos])];
    RngState sample_rng = RngState::derive(seed, "eval-sample", pos);
    Tensor<double> logits =
        partial_observation_infer(model, episode, pipeline, 1.0, sample_rng);
    labels.push_back(static_cast<int>(episode.label));
    predictions.push_back(logits.data()[1] > logits.data()[0] ? 1 : 0);
  }
  return metrics_from_pairs(labels, predictions);
}

TrainResult train(FinoNet& model, const Dataset& data,
                  const std::vector<int>& train_indices,
                  const std::vector<int>& val_indices,
                  const TrainConfig& config, const PipelineConfig& pipeline,
                  std::ostream* log) {
  config.validate();
  if (config.variant != model.config().variant)
    raise_contract(std::string("train: config variant ") +
                   variant_to_string(config.variant) +
                   " does not match the model's " +
                   variant_to_string(model.config().variant));
  if (train_indices.size() < 2)
    raise_data("train: need at least 2 training episodes, got " +
               std::to_string(train_indices.size()));
  if (val_indices.empty()) raise_data("train: validation set is empty");

  int n_success = 0;
  int n_fail = 0;
  for (int idx : train_indices) {
    const Label label = data.episodes[static_cast<size_t>(idx)].label;
    (label == Label::Success ? n_success : n_fail) += 1;
  }
  const std::array<double, 2> weights = class_weights(n_success, n_fail);
  const Tensor<double> weight_tensor =
      Tensor<double>::from_data({2}, {weights[0], weights[1]});

  Adam optimizer(model.params(), config.learning_rate, config.beta1,
                 config.beta2, config.eps);

  TrainResult result;
  ModelSnapshot best = take_snapshot(model);
  double best_f1 = -1.0;
  int epochs_without_improvement = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    // Shuffle positions into the train list; the position doubles as the
    // stable stream key so sample content is independent of batch order.
    std::vector<int> order(train_indices.size());
    std::iota(order.begin(), order.end(), 0);
    RngState shuffle_rng = RngState::derive(config.seed, "epoch-shuffle",
                                            static_cast<std::uint64_t>(epoch));
    shuffle_indices(order, shuffle_rng);

    std::vector<double> episode_losses;
    episode_losses.reserve(order.size());

    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(
          order.size(), start + static_cast<size_t>(config.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      model.zero_grad();

      std::vector<double> batch_losses;
      batch_losses.reserve(end - start);
      for (size_t pos = start; pos < end; ++pos) {
        const auto key = static_cast<std::uint64_t>(order[pos]);
        const auto epoch_key = static_cast<std::uint64_t>(epoch);
        const Episode& episode = data.episodes[static_cast<size_t>(
            train_indices[static_cast<size_t>(order[pos])])];

        RngState sample_rng =
            RngState::derive(config.seed, "train-sample", epoch_key, key);
        RngState augment_rng =
            RngState::derive(config.seed, "train-augment", epoch_key, key);
        ModelInput input = prepare_input(
            episode, model.config(), pipeline, 1.0, sample_rng,
            config.augment ? &augment_rng : nullptr);

        RngState dropout_rng =
            RngState::derive(config.seed, "train-dropout", epoch_key, key);
        Tensor<double> logits =
            model.forward(input, Mode::Train, dropout_rng);
        const std::vector<int> target = {static_cast<int>(episode.label)};
        Tensor<double> loss = softmax_cross_entropy(
            reshape(logits, {1, model.config().n_classes}), target,
            weight_tensor);
        batch_losses.push_back(loss.item());
        // Each episode contributes grad(w_y * ce) / batch; accumulating
        // per episode keeps only one tape alive at a time.
        Tensor<double> scaled = scale(loss, inv_batch);
        if (scaled.requires_grad()) backward(scaled);
      }
      const double batch_loss = canonical_mean(batch_losses);
      if (!std::isfinite(batch_loss))
        raise_numeric("train: loss diverged at epoch " +
                      std::to_string(epoch));
      optimizer.step();
      episode_losses.insert(episode_losses.end(), batch_losses.begin(),
                            batch_losses.end());
    }

    Metrics val = evaluate(model, data, val_indices, pipeline, config.seed);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = canonical_mean(episode_losses);
    record.val_precision = val.weighted_precision;
    record.val_recall = val.weighted_recall;
    record.val_f1 = val.weighted_f1;
    result.history.push_back(record);
    if (log != nullptr) *log << log_line(record) << "\n" << std::flush;

    if (val.weighted_f1 > best_f1) {
      best_f1 = val.weighted_f1;
      result.best_epoch = epoch;
      best = take_snapshot(model);
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= config.patience) break;
    }
    if (config.target_f1 > 0.0 && best_f1 >= config.target_f1) break;
  }

  restore_snapshot(model, best);
  result.best_val_f1 = best_f1;
  result.steps = optimizer.steps_taken();
  return result;
}

BenchResult bench_inference(FinoNet& model, const Episode& episode,
                            const PipelineConfig& pipeline, int repetitions) {
  if (repetitions < 10)
    raise_contract("bench_inference: need at least 10 repetitions");
  ModelInput input = prepare_input(episode, model.config(), pipeline, 1.0,
                                   RngState::derive(0, "bench-sample"));
  NoGradGuard guard;
  RngState unused{0, 0};
  model.forward(input, Mode::Eval, unused);  // warmup, excluded

  using Clock = std::chrono::steady_clock;
  std::vector<double> samples_ms;
  samples_ms.reserve(static_cast<size_t>(repetitions));
  for (int r = 0; r < repetitions; ++r) {
    const auto t0 = Clock::now();
    model.forward(input, Mode::Eval, unused);
    const auto t1 = Clock::now();
    samples_ms.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  BenchResult out;
  out.repetitions = repetitions;
  out.mean_ms = canonical_mean(samples_ms);
  double sq = 0.0;
  for (double ms : samples_ms) sq += (ms - out.mean_ms) * (ms - out.mean_ms);
  out.std_ms = std::sqrt(sq / static_cast<double>(repetitions));
  return out;
}

}  // namespace fino

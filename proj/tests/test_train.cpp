#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fino/checkpoint.hpp"
#include "fino/error.hpp"
#include "fino/model.hpp"
#include "fino/ops.hpp"
#include "fino/rng.hpp"
#include "fino/train.hpp"

using namespace fino;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
void expect_error(Fn&& fn, ErrorKind kind, const std::string& fragment) {
  try {
    fn();
    FAIL_CHECK("expected an error containing '", fragment, "'");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
    CHECK(std::string(e.what()).find(fragment) != std::string::npos);
  }
}

ModelConfig tiny_config(Variant variant = Variant::Rgbda) {
  ModelConfig cfg;
  cfg.block_channels = {3, 4, 5};
  cfg.conv_kernel = 3;
  cfg.audio_filters = 6;
  cfg.audio_kernel = 5;
  cfg.audio_layers = 2;
  cfg.fc1_width = 8;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.n_mfcc = 4;
  cfg.audio_frames = 16;
  cfg.variant = variant;
  cfg.seed = 11;
  return cfg;
}

PipelineConfig tiny_pipeline() {
  PipelineConfig p;
  p.vision.frames_approach = 2;
  p.vision.frames_retreat = 2;
  p.vision.min_frames_after_filter = 4;
  p.mfcc.frame_length = 64;
  p.mfcc.n_mels = 12;
  p.mfcc.n_coeffs = 4;
  p.mfcc.fmax_hz = 2000.0;
  p.mfcc.target_frames = 16;
  return p;
}

// Texture and loudness follow the label so the classes stay separable even
// after per-episode normalization (which erases global brightness shifts):
// failures are a high-contrast checkerboard plus an early wideband burst,
// successes a smooth ramp over a quiet tone.
Episode make_episode(int index, Label label) {
  const int n_frames = 10, h = 8, w = 8;
  const int sample_rate = 4000, n_samples = 4000;
  Episode ep;
  ep.id = std::string(label == Label::Fail ? "fail-" : "success-") +
          std::to_string(index);
  ep.manipulation = "push";
  ep.label = label;
  RngState rng = RngState::derive(900, "episode", static_cast<std::uint64_t>(index));
  const bool fail = label == Label::Fail;
  for (int t = 0; t < n_frames; ++t) {
    ImageU8 img;
    img.height = h;
    img.width = w;
    img.pixels.resize(static_cast<size_t>(h) * w * 3);
    ImageU16 dep;
    dep.height = h;
    dep.width = w;
    dep.pixels.resize(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double checker = (x + y) % 2 == 0 ? 210.0 : 40.0;
        const double stripes = x % 2 == 0 ? 210.0 : 40.0;
        for (int c = 0; c < 3; ++c) {
          const double v =
              (fail ? checker : stripes) + 4.0 * c + rng.next_uniform();
          img.pixels[(static_cast<size_t>(y) * w + x) * 3 +
                     static_cast<size_t>(c)] =
              static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
        dep.pixels[static_cast<size_t>(y) * w + x] = static_cast<std::uint16_t>(
            900 + 20 * t + 5 * y + rng.next_below(10));
      }
    }
    ep.rgb.push_back(std::move(img));
    ep.depth.push_back(std::move(dep));
  }
  ep.audio.sample_rate = sample_rate;
  ep.audio.samples.resize(n_samples);
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < n_samples; ++i)
    ep.audio.samples[static_cast<size_t>(i)] =
        0.05 * std::sin(2.0 * pi * 200.0 * i / sample_rate);
  if (fail) {
    // The burst covers samples [832, 1024): the tail of the head-clipped
    // feature window, past what a 20% observation hears.
    for (int i = 832; i < 1024; ++i)
      ep.audio.samples[static_cast<size_t>(i)] +=
          0.8 * (2.0 * rng.next_uniform() - 1.0);
  }
  ep.timestamps.resize(static_cast<size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i)
    ep.timestamps[static_cast<size_t>(i)] =
        ep.duration_seconds() * i / n_frames;
  return ep;
}

Dataset make_dataset(int n_success, int n_fail) {
  Dataset d;
  for (int i = 0; i < n_success; ++i)
    d.episodes.push_back(make_episode(i, Label::Success));
  for (int i = 0; i < n_fail; ++i)
    d.episodes.push_back(make_episode(100 + i, Label::Fail));
  return d;
}

std::vector<Label> dataset_labels(const Dataset& d) {
  std::vector<Label> labels;
  for (const Episode& ep : d.episodes) labels.push_back(ep.label);
  return labels;
}

std::vector<int> iota_indices(int n) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void check_partition(const SplitIndices& s, int n) {
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(std::is_sorted(s.test.begin(), s.test.end()));
  std::vector<int> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  REQUIRE(static_cast<int>(all.size()) == n);
  for (int i = 0; i < n; ++i) CHECK(all[static_cast<size_t>(i)] == i);
}

int count_class(const std::vector<int>& indices,
                const std::vector<Label>& labels, Label which) {
  int n = 0;
  for (int i : indices)
    if (labels[static_cast<size_t>(i)] == which) ++n;
  return n;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("fino_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("stratified split sends floor(fraction * count) of each class to train") {
  std::vector<Label> labels;
  for (int i = 0; i < 10; ++i) labels.push_back(Label::Success);
  for (int i = 0; i < 20; ++i) labels.push_back(Label::Fail);

  SplitIndices s = stratified_split(labels, 0.7, 42);
  check_partition(s, 30);
  CHECK(count_class(s.train, labels, Label::Success) == 7);
  CHECK(count_class(s.train, labels, Label::Fail) == 14);
  CHECK(count_class(s.test, labels, Label::Success) == 3);
  CHECK(count_class(s.test, labels, Label::Fail) == 6);

  SplitIndices again = stratified_split(labels, 0.7, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  SplitIndices other = stratified_split(labels, 0.7, 43);
  check_partition(other, 30);
  CHECK(other.train != s.train);
}

TEST_CASE("stratified split reproduces the 82/147 corpus partition") {
  std::vector<Label> labels;
  for (int i = 0; i < 82; ++i) labels.push_back(Label::Success);
  for (int i = 0; i < 147; ++i) labels.push_back(Label::Fail);

  SplitIndices s = stratified_split(labels, 0.7, 7);
  check_partition(s, 229);
  CHECK(count_class(s.train, labels, Label::Success) == 57);
  CHECK(count_class(s.train, labels, Label::Fail) == 102);
  CHECK(count_class(s.test, labels, Label::Success) == 25);
  CHECK(count_class(s.test, labels, Label::Fail) == 45);
}

TEST_CASE("stratified split stays within one episode of the fraction per class") {
  RngState rng = RngState::derive(5, "split-property");
  for (int trial = 0; trial < 100; ++trial) {
    const int n_success = 2 + static_cast<int>(rng.next_below(60));
    const int n_fail = 2 + static_cast<int>(rng.next_below(60));
    std::vector<Label> labels;
    for (int i = 0; i < n_success + n_fail; ++i)
      labels.push_back(i % 2 == 0 && i / 2 < n_success ? Label::Success
                                                       : Label::Fail);
    // The interleaving above is lopsided on purpose; recount what we built.
    int actual_success = 0;
    for (Label l : labels)
      if (l == Label::Success) ++actual_success;
    if (actual_success < 2 || static_cast<int>(labels.size()) - actual_success < 2)
      continue;

    SplitIndices s = stratified_split(labels, 0.7, rng.next_u64());
    check_partition(s, static_cast<int>(labels.size()));
    const int train_success = count_class(s.train, labels, Label::Success);
    const int train_fail = count_class(s.train, labels, Label::Fail);
    CHECK(std::abs(train_success - 0.7 * actual_success) < 1.0);
    CHECK(std::abs(train_fail -
                   0.7 * (static_cast<int>(labels.size()) - actual_success)) <
          1.0);
  }
}

TEST_CASE("stratified split rejects single-class data and bad fractions") {
  std::vector<Label> one_class(12, Label::Fail);
  expect_error([&] { stratified_split(one_class, 0.7, 0); }, ErrorKind::Data,
               "both classes");
  std::vector<Label> labels{Label::Success, Label::Success, Label::Fail,
                            Label::Fail};
  expect_error([&] { stratified_split(labels, 0.0, 0); }, ErrorKind::Contract,
               "train_fraction");
  expect_error([&] { stratified_split(labels, 1.0, 0); }, ErrorKind::Contract,
               "train_fraction");
}

TEST_CASE("class weights balance the loss and ignore common scaling") {
  const std::array<double, 2> even = class_weights(50, 50);
  CHECK(even[0] == 1.0);
  CHECK(even[1] == 1.0);

  const std::array<double, 2> skewed = class_weights(57, 102);
  CHECK(skewed[0] == 159.0 / 114.0);
  CHECK(skewed[1] == 159.0 / 204.0);
  // Each class contributes half the total weight.
  CHECK(skewed[0] * 57.0 + skewed[1] * 102.0 == doctest::Approx(159.0));

  const std::array<double, 2> scaled = class_weights(57 * 3, 102 * 3);
  CHECK(scaled[0] == skewed[0]);
  CHECK(scaled[1] == skewed[1]);

  expect_error([] { class_weights(0, 5); }, ErrorKind::Data, "both classes");
  expect_error([] { class_weights(5, 0); }, ErrorKind::Data, "both classes");
}

TEST_CASE("metrics match confusion-matrix arithmetic") {
  SUBCASE("perfect predictions") {
    Metrics m = metrics_from_pairs({0, 1, 0, 1}, {0, 1, 0, 1});
    CHECK(m.confusion[0][0] == 2);
    CHECK(m.confusion[1][1] == 2);
    CHECK(m.confusion[0][1] == 0);
    CHECK(m.confusion[1][0] == 0);
    CHECK(m.weighted_precision == 1.0);
    CHECK(m.weighted_recall == 1.0);
    CHECK(m.weighted_f1 == 1.0);
  }

  SUBCASE("always predicting fail on a 25/45 test split") {
    std::vector<int> labels(70, 1);
    std::fill(labels.begin(), labels.begin() + 25, 0);
    std::vector<int> predictions(70, 1);
    Metrics m = metrics_from_pairs(labels, predictions);
    CHECK(m.confusion[0][1] == 25);
    CHECK(m.confusion[1][1] == 45);
    CHECK(m.total() == 70);
    // Success has no true or predicted positives, so it contributes zero;
    // fail has precision 45/70 and recall 1.
    CHECK(m.weighted_recall == doctest::Approx(45.0 / 70.0).epsilon(1e-12));
    CHECK(m.weighted_precision ==
          doctest::Approx((45.0 / 70.0) * (45.0 / 70.0)).epsilon(1e-12));
    const double fail_f1 = 2.0 * (45.0 / 70.0) / (45.0 / 70.0 + 1.0);
    CHECK(m.weighted_f1 ==
          doctest::Approx((45.0 / 70.0) * fail_f1).epsilon(1e-12));
  }

  SUBCASE("relabeling both classes together leaves weighted scores unchanged") {
    RngState rng = RngState::derive(17, "metrics-swap");
    std::vector<int> labels, predictions, flipped_l, flipped_p;
    for (int i = 0; i < 200; ++i) {
      labels.push_back(static_cast<int>(rng.next_below(2)));
      predictions.push_back(static_cast<int>(rng.next_below(2)));
      flipped_l.push_back(1 - labels.back());
      flipped_p.push_back(1 - predictions.back());
    }
    Metrics a = metrics_from_pairs(labels, predictions);
    Metrics b = metrics_from_pairs(flipped_l, flipped_p);
    CHECK(a.weighted_precision == b.weighted_precision);
    CHECK(a.weighted_recall == b.weighted_recall);
    CHECK(a.weighted_f1 == b.weighted_f1);
    CHECK(a.confusion[0][0] == b.confusion[1][1]);
    CHECK(a.confusion[0][1] == b.confusion[1][0]);
  }

  SUBCASE("input validation") {
    expect_error([] { metrics_from_pairs({0, 1}, {0}); }, ErrorKind::Contract,
                 "labels");
    expect_error([] { metrics_from_pairs({}, {}); }, ErrorKind::Contract,
                 "no samples");
    expect_error([] { metrics_from_pairs({0, 2}, {0, 1}); },
                 ErrorKind::Contract, "0 or 1");
  }
}

TEST_CASE("weighted metrics equal a brute-force recount on random pairs") {
  RngState rng = RngState::derive(23, "metrics-brute");
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_below(1000));
    std::vector<int> labels, predictions;
    for (int i = 0; i < n; ++i) {
      labels.push_back(static_cast<int>(rng.next_below(2)));
      predictions.push_back(static_cast<int>(rng.next_below(2)));
    }
    Metrics m = metrics_from_pairs(labels, predictions);

    // Independent recount straight from the pair list.
    double wp = 0.0, wr = 0.0, wf = 0.0;
    for (int k = 0; k < 2; ++k) {
      int tp = 0, in_class = 0, predicted = 0;
      for (int i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)] == k) ++in_class;
        if (predictions[static_cast<size_t>(i)] == k) ++predicted;
        if (labels[static_cast<size_t>(i)] == k &&
            predictions[static_cast<size_t>(i)] == k)
          ++tp;
      }
      const double p = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
      const double r = in_class > 0 ? static_cast<double>(tp) / in_class : 0.0;
      const double f = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
      const double share = static_cast<double>(in_class) / n;
      wp += share * p;
      wr += share * r;
      wf += share * f;
    }
    CHECK(std::abs(m.weighted_precision - wp) <= 1e-12);
    CHECK(std::abs(m.weighted_recall - wr) <= 1e-12);
    CHECK(std::abs(m.weighted_f1 - wf) <= 1e-12);
    CHECK(m.total() == n);
  }
}

TEST_CASE("adam leaves parameters alone without gradients and on frozen entries") {
  Tensor<double> w = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true);
  Tensor<double> frozen =
      Tensor<double>::from_data({2}, {5.0, 6.0}, true);
  std::vector<Param> params{{"w", w, true}, {"frozen", frozen, false}};
  Adam opt(params, 0.05, 0.9, 0.999, 1e-8);

  // No backward has run, so gradients are absent and count as zero.
  opt.step();
  CHECK(opt.steps_taken() == 1);
  CHECK(w.values() == std::vector<double>{1.0, 2.0, 3.0});

  // A real gradient on the frozen tensor must not move it.
  Tensor<double> g = Tensor<double>::from_data({2}, {10.0, -3.0});
  backward(sum_all(mul(frozen, g)));
  opt.step();
  CHECK(frozen.values() == std::vector<double>{5.0, 6.0});
}

TEST_CASE("the first adam step moves weights by the learning rate regardless of gradient size") {
  Tensor<double> w =
      Tensor<double>::from_data({4}, {0.5, -1.0, 2.0, -3.0}, true);
  const std::vector<double> grads{10.0, -0.01, 3.0, -7.0};
  Tensor<double> g = Tensor<double>::from_data({4}, std::vector<double>(grads));
  std::vector<Param> params{{"w", w, true}};
  const double lr = 0.05;
  Adam opt(params, lr, 0.9, 0.999, 1e-8);

  backward(sum_all(mul(w, g)));
  opt.step();
  const std::vector<double> before{0.5, -1.0, 2.0, -3.0};
  for (int i = 0; i < 4; ++i) {
    const double delta = w.values()[static_cast<size_t>(i)] -
                         before[static_cast<size_t>(i)];
    const double sign = grads[static_cast<size_t>(i)] > 0 ? 1.0 : -1.0;
    CHECK(std::abs(delta + lr * sign) <= lr * 1e-5);
  }
}

TEST_CASE("ten adam steps on a quadratic match an independent reference") {
  const std::vector<double> init{1.0, -2.0, 0.5};
  const std::vector<double> target{0.2, 0.4, -1.0};
  const std::vector<double> curvature{1.0, 3.0, 0.5};
  const double lr = 0.1, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Tensor<double> w =
      Tensor<double>::from_data({3}, std::vector<double>(init), true);
  std::vector<Param> params{{"w", w, true}};
  Adam opt(params, lr, beta1, beta2, eps);

  Tensor<double> neg_target =
      Tensor<double>::from_data({3}, {-target[0], -target[1], -target[2]});
  Tensor<double> c =
      Tensor<double>::from_data({3}, std::vector<double>(curvature));

  // Reference optimizer written directly from the update equations.
  std::vector<double> w_ref = init, m(3, 0.0), v(3, 0.0);

  for (int step = 1; step <= 10; ++step) {
    w.zero_grad();
    Tensor<double> diff = add(w, neg_target);
    backward(sum_all(mul(mul(diff, diff), c)));
    opt.step();

    for (int i = 0; i < 3; ++i) {
      const auto ui = static_cast<size_t>(i);
      const double g = 2.0 * curvature[ui] * (w_ref[ui] - target[ui]);
      m[ui] = beta1 * m[ui] + (1.0 - beta1) * g;
      v[ui] = beta2 * v[ui] + (1.0 - beta2) * g * g;
      const double m_hat = m[ui] / (1.0 - std::pow(beta1, step));
      const double v_hat = v[ui] / (1.0 - std::pow(beta2, step));
      w_ref[ui] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(w.values()[static_cast<size_t>(i)] -
                     w_ref[static_cast<size_t>(i)]) <= 1e-12);
  }
  CHECK(opt.steps_taken() == 10);
  // The iterate should be heading toward the minimum.
  CHECK(std::abs(w.values()[0] - target[0]) < std::abs(init[0] - target[0]));
}

TEST_CASE("adam aborts on non-finite gradients naming the tensor") {
  Tensor<double> w = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  std::vector<Param> params{{"conv.weight", w, true}};
  Adam opt(params, 0.1, 0.9, 0.999, 1e-8);

  Tensor<double> g = Tensor<double>::from_data(
      {2}, {std::numeric_limits<double>::infinity(), 1.0});
  backward(sum_all(mul(w, g)));
  expect_error([&] { opt.step(); }, ErrorKind::Numeric, "conv.weight");
}

TEST_CASE("prepare_input clips audio to the observed fraction") {
  const ModelConfig cfg = tiny_config();
  const PipelineConfig pipeline = tiny_pipeline();
  const Episode fail = make_episode(0, Label::Fail);

  // Route one: prepare_input at fraction 0.4.
  ModelInput partial = prepare_input(fail, cfg, pipeline, 0.4,
                                     RngState::derive(1, "sample"));

  // Route two: truncate the signal by hand, then run the audio frontend.
  const double cutoff = 0.4 * fail.duration_seconds();
  const auto keep = static_cast<size_t>(
      std::floor(cutoff * fail.audio.sample_rate));
  AudioSignal truncated;
  truncated.sample_rate = fail.audio.sample_rate;
  truncated.samples.assign(fail.audio.samples.begin(),
                           fail.audio.samples.begin() +
                               static_cast<std::ptrdiff_t>(keep));
  Tensor<double> expected = audio_input(mfcc_features(truncated, pipeline.mfcc));
  CHECK(partial.mfcc.values() == expected.values());

  // Mechanism: the burst starts at sample 832, so a 20% window (800
  // samples) hears exactly what the success twin's quiet tone sounds like.
  const Episode success = make_episode(0, Label::Success);
  ModelInput fail_early = prepare_input(fail, cfg, pipeline, 0.2,
                                        RngState::derive(1, "sample"));
  ModelInput quiet = prepare_input(success, cfg, pipeline, 0.2,
                                   RngState::derive(1, "sample"));
  CHECK(fail_early.mfcc.values() == quiet.mfcc.values());
  ModelInput full_fail = prepare_input(fail, cfg, pipeline, 1.0,
                                       RngState::derive(1, "sample"));
  ModelInput full_quiet = prepare_input(success, cfg, pipeline, 1.0,
                                        RngState::derive(1, "sample"));
  CHECK(full_fail.mfcc.values() != full_quiet.mfcc.values());

  expect_error(
      [&] {
        PipelineConfig bad = pipeline;
        bad.mfcc.n_coeffs = 5;
        prepare_input(fail, cfg, bad, 1.0, RngState::derive(1, "sample"));
      },
      ErrorKind::Contract, "mfcc coefficients but the model expects");
}

TEST_CASE("partial observation only sees frames inside the window") {
  FinoNet model(tiny_config());
  const PipelineConfig pipeline = tiny_pipeline();
  const Episode ep = make_episode(3, Label::Fail);

  for (double f : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    VisualSample sample;
    Tensor<double> logits = partial_observation_infer(
        model, ep, pipeline, f, RngState::derive(9, "obs"), &sample);
    REQUIRE(logits.numel() == 2);
    CHECK(sample.n_frames == 4);
    REQUIRE(sample.source_indices.size() == 4);
    for (size_t i = 0; i < sample.source_indices.size(); ++i) {
      const int src = sample.source_indices[i];
      REQUIRE(src >= 0);
      REQUIRE(src < ep.n_frames());
      CHECK(ep.timestamps[static_cast<size_t>(src)] <=
            f * ep.duration_seconds() + 1e-12);
      CHECK(sample.timestamps[i] == ep.timestamps[static_cast<size_t>(src)]);
    }
  }

  // At fraction 0.2 only frames 0..2 qualify, so the 2+2 quota must reuse
  // frames rather than reach past the window.
  VisualSample narrow;
  partial_observation_infer(model, ep, pipeline, 0.2,
                            RngState::derive(9, "obs"), &narrow);
  for (int src : narrow.source_indices) CHECK(src <= 2);
}

TEST_CASE("full-fraction inference equals the directly assembled eval path") {
  FinoNet model(tiny_config());
  const PipelineConfig pipeline = tiny_pipeline();
  const Episode ep = make_episode(4, Label::Success);
  const RngState rng = RngState::derive(31, "full");

  Tensor<double> via_partial =
      partial_observation_infer(model, ep, pipeline, 1.0, rng);

  VisualSample sample = assemble_visual_sample(ep, pipeline.vision, rng, 1.0);
  ModelInput input;
  input.visual = visual_input(sample, model.config().variant);
  input.mfcc = audio_input(mfcc_features(ep.audio, pipeline.mfcc));
  NoGradGuard guard;
  RngState unused{0, 0};
  Tensor<double> direct = model.forward(input, Mode::Eval, unused);

  CHECK(via_partial.values() == direct.values());
}

TEST_CASE("evaluate scores argmax predictions with per-position seeding") {
  FinoNet model(tiny_config());
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(3, 3);
  const std::vector<int> indices = iota_indices(6);

  Metrics once = evaluate(model, data, indices, pipeline, 77);
  Metrics twice = evaluate(model, data, indices, pipeline, 77);
  CHECK(once.confusion == twice.confusion);
  CHECK(once.weighted_f1 == twice.weighted_f1);
  CHECK(once.total() == 6);

  // Mirror the documented seeding to rebuild the same predictions.
  std::vector<int> labels, predictions;
  for (size_t pos = 0; pos < indices.size(); ++pos) {
    const Episode& ep = data.episodes[static_cast<size_t>(indices[pos])];
    Tensor<double> logits = partial_observation_infer(
        model, ep, pipeline, 1.0, RngState::derive(77, "eval-sample", pos));
    labels.push_back(static_cast<int>(ep.label));
    predictions.push_back(logits.data()[1] > logits.data()[0] ? 1 : 0);
  }
  Metrics rebuilt = metrics_from_pairs(labels, predictions);
  CHECK(rebuilt.confusion == once.confusion);
  CHECK(rebuilt.weighted_precision == once.weighted_precision);
  CHECK(rebuilt.weighted_recall == once.weighted_recall);
  CHECK(rebuilt.weighted_f1 == once.weighted_f1);

  expect_error([&] { evaluate(model, data, {}, pipeline, 0); },
               ErrorKind::Contract, "no episodes");
}

TEST_CASE("train validates its configuration and inputs") {
  FinoNet model(tiny_config());
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(2, 2);
  const std::vector<int> all = iota_indices(4);
  TrainConfig config;
  config.learning_rate = 1e-3;
  config.max_epochs = 1;

  SUBCASE("config field ranges") {
    auto bad = [&](auto mutate, const char* fragment) {
      TrainConfig c = config;
      mutate(c);
      expect_error([&] { train(model, data, all, all, c, pipeline); },
                   ErrorKind::Contract, fragment);
    };
    bad([](TrainConfig& c) { c.learning_rate = 0.0; }, "learning_rate");
    bad([](TrainConfig& c) { c.beta1 = 1.0; }, "betas");
    bad([](TrainConfig& c) { c.eps = 0.0; }, "eps");
    bad([](TrainConfig& c) { c.batch_size = 0; }, "batch_size");
    bad([](TrainConfig& c) { c.max_epochs = 0; }, "max_epochs");
    bad([](TrainConfig& c) { c.patience = 0; }, "patience");
    bad([](TrainConfig& c) { c.target_f1 = 1.5; }, "target_f1");
  }

  SUBCASE("variant must match the model") {
    TrainConfig c = config;
    c.variant = Variant::A;
    expect_error([&] { train(model, data, all, all, c, pipeline); },
                 ErrorKind::Contract, "variant");
  }

  SUBCASE("training data requirements") {
    expect_error([&] { train(model, data, {0}, all, config, pipeline); },
                 ErrorKind::Data, "at least 2 training episodes");
    expect_error([&] { train(model, data, all, {}, config, pipeline); },
                 ErrorKind::Data, "validation set is empty");
    // Episodes 0 and 1 are both successes, so the split is single-class.
    expect_error([&] { train(model, data, {0, 1}, all, config, pipeline); },
                 ErrorKind::Data, "both classes");
  }
}

TEST_CASE("training on separable classes reaches perfect validation F1") {
  // Plain conv path: at this width, batch statistics computed over a single
  // episode sit far from the running averages used at eval time, and 0.4
  // dropout swamps 3-to-5-channel layers, so the convergence contract is
  // pinned on the ablated model.  Normalization and dropout keep their own
  // coverage in the model and ablation tests.
  ModelConfig cfg = tiny_config();
  cfg.use_batch_norm = false;
  cfg.use_dropout = false;
  FinoNet model(cfg);
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(8, 8);
  SplitIndices split = stratified_split(dataset_labels(data), 0.7, 12);
  REQUIRE(split.train.size() == 10);
  REQUIRE(split.test.size() == 6);

  TrainConfig config;
  config.learning_rate = 1e-2;
  config.batch_size = 4;
  config.max_epochs = 15;
  config.patience = 15;
  config.seed = 5;
  config.target_f1 = 1.0;

  TrainResult result =
      train(model, data, split.train, split.test, config, pipeline);

  REQUIRE(!result.history.empty());
  CHECK(result.best_val_f1 == 1.0);
  // target_f1 stops the loop in the epoch that reached it.
  CHECK(static_cast<int>(result.history.size()) == result.best_epoch);
  CHECK(result.history.back().val_f1 == 1.0);
  for (const EpochRecord& r : result.history)
    CHECK(std::isfinite(r.train_loss));
  // 10 episodes in batches of 4 gives 3 optimizer steps per epoch.
  CHECK(result.steps ==
        static_cast<std::int64_t>(3 * result.history.size()));

  // The model left behind is the best checkpoint, so re-evaluating it
  // reproduces the recorded score exactly.
  Metrics final =
      evaluate(model, data, split.test, pipeline, config.seed);
  CHECK(final.weighted_f1 == result.best_val_f1);
}

TEST_CASE("identical seeds produce identical histories, logs, and checkpoints") {
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(3, 3);
  SplitIndices split = stratified_split(dataset_labels(data), 0.7, 2);
  REQUIRE(split.train.size() == 4);

  TrainConfig config;
  config.learning_rate = 1e-3;
  config.batch_size = 3;  // ragged final batch of one
  config.max_epochs = 3;
  config.patience = 10;
  config.seed = 9;

  auto run = [&](FinoNet& model, std::ostream& log) {
    return train(model, data, split.train, split.test, config, pipeline,
                 &log);
  };

  FinoNet model_a(tiny_config());
  FinoNet model_b(tiny_config());
  std::ostringstream log_a, log_b;
  TrainResult ra = run(model_a, log_a);
  TrainResult rb = run(model_b, log_b);

  CHECK(log_a.str() == log_b.str());
  REQUIRE(ra.history.size() == rb.history.size());
  REQUIRE(ra.history.size() == 3);
  for (size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_precision == rb.history[i].val_precision);
    CHECK(ra.history[i].val_recall == rb.history[i].val_recall);
    CHECK(ra.history[i].val_f1 == rb.history[i].val_f1);
  }
  CHECK(ra.best_epoch == rb.best_epoch);
  CHECK(ra.best_val_f1 == rb.best_val_f1);

  // One log line per epoch in the documented key=value shape.
  std::istringstream lines(log_a.str());
  std::string line;
  int n_lines = 0;
  while (std::getline(lines, line)) {
    ++n_lines;
    CHECK(line.rfind("epoch=", 0) == 0);
    CHECK(line.find(" train_loss=") != std::string::npos);
    CHECK(line.find(" val_precision=") != std::string::npos);
    CHECK(line.find(" val_recall=") != std::string::npos);
    CHECK(line.find(" val_f1=") != std::string::npos);
  }
  CHECK(n_lines == 3);

  const fs::path dir = fresh_dir("determinism");
  CheckpointMeta meta;
  meta.rng_seed = config.seed;
  meta.epoch = ra.best_epoch;
  meta.best_val_f1 = ra.best_val_f1;
  save_checkpoint((dir / "a.ckpt").string(), model_a, meta);
  save_checkpoint((dir / "b.ckpt").string(), model_b, meta);
  CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));
}

TEST_CASE("a fully frozen model is bit-identical after training") {
  FinoNet model(tiny_config());
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(2, 2);
  const std::vector<int> all = iota_indices(4);

  const int touched = model.set_trainable("", false);
  CHECK(touched == static_cast<int>(model.params().size()));

  const fs::path dir = fresh_dir("frozen");
  const CheckpointMeta meta;
  save_checkpoint((dir / "before.ckpt").string(), model, meta);

  TrainConfig config;
  config.learning_rate = 1e-2;
  config.batch_size = 2;
  config.max_epochs = 2;
  config.patience = 10;
  config.seed = 3;

  TrainResult result = train(model, data, all, all, config, pipeline);
  CHECK(result.steps == 4);

  save_checkpoint((dir / "after.ckpt").string(), model, meta);
  CHECK(file_bytes(dir / "before.ckpt") == file_bytes(dir / "after.ckpt"));
}

TEST_CASE("patience stops training after consecutive non-improving epochs") {
  // With everything frozen the validation score repeats forever, so the
  // first epoch is the lone improvement and patience counts from there.
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(2, 2);
  const std::vector<int> all = iota_indices(4);

  TrainConfig config;
  config.learning_rate = 1e-2;
  config.batch_size = 4;
  config.max_epochs = 50;
  config.seed = 3;

  for (int patience : {1, 3}) {
    FinoNet model(tiny_config());
    model.set_trainable("", false);
    config.patience = patience;
    TrainResult result = train(model, data, all, all, config, pipeline);
    CHECK(static_cast<int>(result.history.size()) == 1 + patience);
    CHECK(result.best_epoch == 1);
  }
}

TEST_CASE("batch loss reduction is independent of processing order") {
  FinoNet model(tiny_config());
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(2, 1);
  const std::array<double, 2> weights = class_weights(2, 1);
  Tensor<double> weight_tensor =
      Tensor<double>::from_data({2}, {weights[0], weights[1]});

  // Mirror one training batch: every per-episode stream is keyed by the
  // episode's position, never by its place inside the batch.
  auto episode_loss = [&](int key) {
    const Episode& ep = data.episodes[static_cast<size_t>(key)];
    ModelInput input = prepare_input(
        ep, model.config(), pipeline, 1.0,
        RngState::derive(9, "train-sample", 1, static_cast<std::uint64_t>(key)));
    RngState dropout_rng =
        RngState::derive(9, "train-dropout", 1, static_cast<std::uint64_t>(key));
    NoGradGuard guard;
    Tensor<double> logits = model.forward(input, Mode::Train, dropout_rng);
    Tensor<double> loss =
        softmax_cross_entropy(reshape(logits, {1, 2}),
                              {static_cast<int>(ep.label)}, weight_tensor);
    return loss.item();
  };

  std::vector<double> forward_order, reversed_order;
  for (int key : {0, 1, 2}) forward_order.push_back(episode_loss(key));
  for (int key : {2, 0, 1}) reversed_order.push_back(episode_loss(key));

  CHECK(forward_order[0] == reversed_order[1]);
  CHECK(forward_order[1] == reversed_order[2]);
  CHECK(forward_order[2] == reversed_order[0]);
  CHECK(canonical_mean(forward_order) == canonical_mean(reversed_order));
}

TEST_CASE("training aborts loudly when the loss diverges") {
  ModelConfig cfg = tiny_config(Variant::A);
  cfg.use_batch_norm = false;
  cfg.use_dropout = false;
  FinoNet model(cfg);
  const PipelineConfig pipeline = tiny_pipeline();
  Dataset data = make_dataset(2, 2);
  const std::vector<int> all = iota_indices(4);

  TrainConfig config;
  config.variant = Variant::A;
  // An absurd learning rate inflates the weights past what the forward
  // pass can represent, so the very next batch overflows.
  config.learning_rate = 1e150;
  config.batch_size = 2;
  config.max_epochs = 5;
  config.seed = 1;

  expect_error([&] { train(model, data, all, all, config, pipeline); },
               ErrorKind::Numeric, "diverged at epoch");
}

TEST_CASE("bench_inference reports timings without touching the model") {
  FinoNet model(tiny_config());
  const PipelineConfig pipeline = tiny_pipeline();
  const Episode ep = make_episode(6, Label::Success);

  Tensor<double> before = partial_observation_infer(
      model, ep, pipeline, 1.0, RngState::derive(2, "bench-check"));
  BenchResult bench = bench_inference(model, ep, pipeline, 10);
  Tensor<double> after = partial_observation_infer(
      model, ep, pipeline, 1.0, RngState::derive(2, "bench-check"));

  CHECK(bench.repetitions == 10);
  CHECK(bench.mean_ms > 0.0);
  CHECK(bench.std_ms >= 0.0);
  CHECK(before.values() == after.values());

  expect_error([&] { bench_inference(model, ep, pipeline, 9); },
               ErrorKind::Contract, "at least 10");

  // The fused network does strictly more work than the audio-only one.
  FinoNet audio_only(tiny_config(Variant::A));
  BenchResult audio_bench = bench_inference(audio_only, ep, pipeline, 10);
  CHECK(bench.mean_ms > audio_bench.mean_ms);
}

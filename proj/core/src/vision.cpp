#include "fino/vision.hpp"

#include <algorithm>
#include <cmath>

#include "fino/error.hpp"

namespace fino {

namespace {

// Partial Fisher-Yates: first `take` entries of a shuffled [0,n) range.
std::vector<int> sample_without_replacement(int n, int take, RngState& rng) {
  std::vector<int> pool(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  for (int i = 0; i < take; ++i) {
    const int j = i + static_cast<int>(rng.next_below(
                          static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(take));
  return pool;
}

struct Hsv {
  double h, s, v;  // h in [0,1)
};

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out{0.0, 0.0, mx};
  if (d > 0.0) {
    if (mx == r)
      out.h = std::fmod((g - b) / d, 6.0) / 6.0;
    else if (mx == g)
      out.h = ((b - r) / d + 2.0) / 6.0;
    else
      out.h = ((r - g) / d + 4.0) / 6.0;
    if (out.h < 0.0) out.h += 1.0;
  }
  if (mx > 0.0) out.s = d / mx;
  return out;
}

void hsv_to_rgb(const Hsv& in, double& r, double& g, double& b) {
  const double h6 = in.h * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = in.v * (1.0 - in.s);
  const double q = in.v * (1.0 - in.s * f);
  const double t = in.v * (1.0 - in.s * (1.0 - f));
  switch (sector) {
    case 0: r = in.v; g = t; b = p; break;
    case 1: r = q; g = in.v; b = p; break;
    case 2: r = p; g = in.v; b = t; break;
    case 3: r = p; g = q; b = in.v; break;
    case 4: r = t; g = p; b = in.v; break;
    default: r = in.v; g = p; b = q; break;
  }
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

FilteredFrames filter_occluded(const Episode& episode,
                               const VisionConfig& config) {
  const int n = episode.n_frames();
  if (n < 1) raise_data("episode " + episode.id + ": no frames to filter");
  FilteredFrames out;
  out.kept.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& depth = episode.depth[static_cast<size_t>(i)];
    const std::int64_t total =
        static_cast<std::int64_t>(depth.height) * depth.width;
    std::int64_t near = 0;
    for (std::uint16_t mm : depth.pixels)
      if (static_cast<double>(mm) / 1000.0 < config.near_threshold_m) ++near;
    const double fraction =
        static_cast<double>(near) / static_cast<double>(total);
    if (!(fraction > config.max_near_fraction)) out.kept.push_back(i);
  }
  if (static_cast<int>(out.kept.size()) < config.min_frames_after_filter)
    raise_data("episode " + episode.id + ": occlusion filter left " +
               std::to_string(out.kept.size()) + " frames, need at least " +
               std::to_string(config.min_frames_after_filter));
  if (episode.phases) {
    // Boundaries shift down by the number of dropped frames before them.
    PhaseAnnotations remapped;
    remapped.approach_end = static_cast<int>(
        std::lower_bound(out.kept.begin(), out.kept.end(),
                         episode.phases->approach_end) -
        out.kept.begin());
    remapped.manipulate_end = static_cast<int>(
        std::lower_bound(out.kept.begin(), out.kept.end(),
                         episode.phases->manipulate_end) -
        out.kept.begin());
    out.phases = remapped;
  }
  return out;
}

PhaseSplit split_phases(int n_frames,
                        const std::optional<PhaseAnnotations>& annotations) {
  if (n_frames < 3)
    raise_data("split_phases: timeline of " + std::to_string(n_frames) +
               " frames cannot cover three phases");
  if (annotations) {
    const int a = annotations->approach_end;
    const int m = annotations->manipulate_end;
    if (a >= 1 && m >= a && m < n_frames) return {a, m};
  }
  // Equal thirds; the remainder frames go to the earliest phases.
  const int base = n_frames / 3;
  const int rem = n_frames % 3;
  const int approach = base + (rem > 0 ? 1 : 0);
  const int manipulate = base + (rem > 1 ? 1 : 0);
  return {approach, approach + manipulate};
}

std::vector<int> sample_frames(const PhaseSplit& split, int n_frames,
                               const VisionConfig& config, RngState& rng) {
  if (split.approach_end < 0 || split.manipulate_end < split.approach_end ||
      split.manipulate_end > n_frames)
    raise_contract("sample_frames: phase split out of order");
  if (split.approach_end == 0)
    raise_data("sample_frames: empty approach phase, episode unusable");
  if (split.manipulate_end == n_frames)
    raise_data("sample_frames: empty retreat phase, episode unusable");
  const int approach_n = split.approach_end;
  const int retreat_lo = split.manipulate_end;
  const int retreat_n = n_frames - retreat_lo;

  std::vector<int> picks;
  picks.reserve(static_cast<size_t>(config.frames_approach) +
                static_cast<size_t>(config.frames_retreat));
  auto draw_pool = [&](int lo, int pool_n, int quota) {
    if (pool_n >= quota) {
      auto s = sample_without_replacement(pool_n, quota, rng);
      std::sort(s.begin(), s.end());
      for (int v : s) picks.push_back(lo + v);
    } else {
      // Pool smaller than the quota: sample with replacement.
      std::vector<int> s(static_cast<size_t>(quota));
      for (auto& v : s)
        v = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(pool_n)));
      std::sort(s.begin(), s.end());
      for (int v : s) picks.push_back(lo + v);
    }
  };
  draw_pool(0, approach_n, config.frames_approach);
  draw_pool(retreat_lo, retreat_n, config.frames_retreat);
  return picks;
}

VisualSample assemble_visual_sample(const Episode& episode,
                                    const VisionConfig& config,
                                    RngState frame_rng, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    raise_contract("assemble_visual_sample: fraction must be in (0,1], got " +
                   std::to_string(fraction));
  FilteredFrames filtered = filter_occluded(episode, config);

  // Truncate the surviving timeline to frames within the observed prefix.
  const double cutoff = fraction * episode.duration_seconds();
  std::vector<int> timeline;
  for (int orig : filtered.kept) {
    if (episode.timestamps[static_cast<size_t>(orig)] <= cutoff)
      timeline.push_back(orig);
    else
      break;
  }
  if (timeline.empty())
    raise_data("episode " + episode.id + ": no frames within fraction " +
               std::to_string(fraction));
  const int n = static_cast<int>(timeline.size());

  std::optional<PhaseAnnotations> annotations = filtered.phases;
  const PhaseSplit split = split_phases(n, annotations);
  const std::vector<int> positions =
      sample_frames(split, n, config, frame_rng);

  // Crop rectangle: per-episode metadata wins, otherwise the full frame.
  const int fw = episode.rgb[0].width;
  const int fh = episode.rgb[0].height;
  std::array<int, 4> rect = episode.crop_rect
                                ? *episode.crop_rect
                                : std::array<int, 4>{0, 0, fw, fh};
  if (rect[0] < 0 || rect[1] < 0 || rect[2] < 1 || rect[3] < 1 ||
      rect[0] + rect[2] > fw || rect[1] + rect[3] > fh)
    raise_contract("assemble_visual_sample: crop rect outside the frame");

  VisualSample sample;
  sample.n_frames = static_cast<int>(positions.size());
  sample.width = rect[2];
  sample.height = rect[3];
  sample.data.assign(static_cast<size_t>(sample.n_frames) * 4 *
                         static_cast<size_t>(sample.height) *
                         static_cast<size_t>(sample.width),
                     0.0);
  sample.source_indices.reserve(positions.size());
  sample.timestamps.reserve(positions.size());

  const double depth_scale = 1.0 / config.depth_max_m;
  for (size_t t = 0; t < positions.size(); ++t) {
    const int orig = timeline[static_cast<size_t>(positions[t])];
    sample.source_indices.push_back(orig);
    sample.timestamps.push_back(episode.timestamps[static_cast<size_t>(orig)]);
    const auto& rgb = episode.rgb[static_cast<size_t>(orig)];
    const auto& depth = episode.depth[static_cast<size_t>(orig)];
    for (int y = 0; y < sample.height; ++y) {
      for (int x = 0; x < sample.width; ++x) {
        const int sy = rect[1] + y, sx = rect[0] + x;
        for (int c = 0; c < 3; ++c)
          sample.at(static_cast<int>(t), c, y, x) =
              static_cast<double>(rgb.at(sy, sx, c)) / 255.0;
        const double meters =
            static_cast<double>(depth.at(sy, sx)) / 1000.0;
        sample.at(static_cast<int>(t), 3, y, x) =
            std::min(meters, config.depth_max_m) * depth_scale;
      }
    }
  }
  return sample;
}

void flip_sample(VisualSample& sample, FlipAxis axis) {
  const int h = sample.height, w = sample.width;
  for (int t = 0; t < sample.n_frames; ++t)
    for (int c = 0; c < 4; ++c) {
      if (axis == FlipAxis::Vertical) {
        for (int y = 0; y < h / 2; ++y)
          for (int x = 0; x < w; ++x)
            std::swap(sample.at(t, c, y, x), sample.at(t, c, h - 1 - y, x));
      } else {
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w / 2; ++x)
            std::swap(sample.at(t, c, y, x), sample.at(t, c, y, w - 1 - x));
      }
    }
}

void augment_visual_sample(VisualSample& sample, const VisionConfig& config,
                           RngState& rng) {
  // One coin per transform; parameters are shared by every frame so the
  // sequence stays temporally coherent.
  if (rng.next_bernoulli(config.jitter_p)) {
    const double brightness = rng.next_uniform(config.jitter_lo, config.jitter_hi);
    const double contrast = rng.next_uniform(config.jitter_lo, config.jitter_hi);
    const double saturation = rng.next_uniform(config.jitter_lo, config.jitter_hi);
    const double hue_shift =
        rng.next_uniform(-config.hue_shift_max, config.hue_shift_max);
    for (int t = 0; t < sample.n_frames; ++t) {
      auto for_rgb = [&](auto&& fn) {
        for (int y = 0; y < sample.height; ++y)
          for (int x = 0; x < sample.width; ++x)
            fn(sample.at(t, 0, y, x), sample.at(t, 1, y, x),
               sample.at(t, 2, y, x));
      };
      for_rgb([&](double& r, double& g, double& b) {
        r = clamp01(r * brightness);
        g = clamp01(g * brightness);
        b = clamp01(b * brightness);
      });
      // Contrast pivots on the frame's current mean RGB intensity.
      double mean = 0.0;
      for_rgb([&](double& r, double& g, double& b) { mean += r + g + b; });
      mean /= 3.0 * sample.height * sample.width;
      for_rgb([&](double& r, double& g, double& b) {
        r = clamp01(mean + (r - mean) * contrast);
        g = clamp01(mean + (g - mean) * contrast);
        b = clamp01(mean + (b - mean) * contrast);
      });
      for_rgb([&](double& r, double& g, double& b) {
        const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
        r = clamp01(luma + (r - luma) * saturation);
        g = clamp01(luma + (g - luma) * saturation);
        b = clamp01(luma + (b - luma) * saturation);
      });
      for_rgb([&](double& r, double& g, double& b) {
        Hsv hsv = rgb_to_hsv(r, g, b);
        hsv.h = hsv.h + hue_shift;
        if (hsv.h < 0.0) hsv.h += 1.0;
        if (hsv.h >= 1.0) hsv.h -= 1.0;
        hsv_to_rgb(hsv, r, g, b);
        r = clamp01(r);
        g = clamp01(g);
        b = clamp01(b);
      });
    }
  }
  if (rng.next_bernoulli(config.flip_p)) flip_sample(sample, config.flip_axis);
}

}  // namespace fino

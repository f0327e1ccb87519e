#pragma once

#include <array>
#include <optional>
#include <vector>

#include "fino/episode.hpp"
#include "fino/rng.hpp"

namespace fino {

enum class FlipAxis { Vertical, Horizontal };

struct VisionConfig {
  // Occlusion filter: drop a frame when more than max_near_fraction of its
  // depth pixels are closer than near_threshold_m.
  double near_threshold_m = 0.5;
  double max_near_fraction = 0.2;
  int min_frames_after_filter = 8;

  double depth_max_m = 2.0;  // depth channel normalizer

  // Augmentation (training only): one coin per transform per sequence.
  double jitter_p = 0.2;
  double jitter_lo = 0.8, jitter_hi = 1.2;
  double hue_shift_max = 0.05;
  double flip_p = 0.5;
  FlipAxis flip_axis = FlipAxis::Vertical;

  int frames_approach = 4;
  int frames_retreat = 4;
};

// Occlusion filter result: surviving original frame indices in order, and
// phase annotations remapped onto the surviving timeline.
struct FilteredFrames {
  std::vector<int> kept;
  std::optional<PhaseAnnotations> phases;
};

FilteredFrames filter_occluded(const Episode& episode,
                               const VisionConfig& config);

// Phase boundaries on an n-frame timeline. Annotations are used when they
// leave the approach and retreat non-empty on this timeline (a truncated
// timeline can invalidate them); otherwise the range splits into equal
// thirds, remainder going to the earliest phases.
struct PhaseSplit {
  int approach_end = 0;
  int manipulate_end = 0;
};

PhaseSplit split_phases(int n_frames,
                        const std::optional<PhaseAnnotations>& annotations);

// Uniformly samples approach and retreat positions (4 + 4 by default).
// Sampling is without replacement unless a pool is smaller than its quota.
std::vector<int> sample_frames(const PhaseSplit& split, int n_frames,
                               const VisionConfig& config, RngState& rng);

// [T,4,h,w]: RGB scaled to [0,1], then depth clamped to depth_max_m and
// scaled to [0,1].
struct VisualSample {
  int n_frames = 0;
  int height = 0;
  int width = 0;
  std::vector<int> source_indices;    // original episode frame indices
  std::vector<double> timestamps;
  std::vector<double> data;

  double& at(int t, int c, int y, int x) {
    return data[((static_cast<size_t>(t) * 4 + static_cast<size_t>(c)) *
                     static_cast<size_t>(height) +
                 static_cast<size_t>(y)) *
                    static_cast<size_t>(width) +
                static_cast<size_t>(x)];
  }
  double at(int t, int c, int y, int x) const {
    return data[((static_cast<size_t>(t) * 4 + static_cast<size_t>(c)) *
                     static_cast<size_t>(height) +
                 static_cast<size_t>(y)) *
                    static_cast<size_t>(width) +
                static_cast<size_t>(x)];
  }
};

// Filter -> truncate to the first `fraction` of the timeline -> phases ->
// sample -> crop -> scale. `fraction` must lie in (0, 1]; 1.0 is the full
// episode. The rng seeds frame sampling only, so a fixed (seed, episode)
// pair always selects the same frames.
VisualSample assemble_visual_sample(const Episode& episode,
                                    const VisionConfig& config,
                                    RngState frame_rng, double fraction);

// Color jitter (RGB channels) and flip (all four channels), each gated by
// one Bernoulli draw for the whole sequence.
void augment_visual_sample(VisualSample& sample, const VisionConfig& config,
                           RngState& rng);

// Mirrors every channel of every frame; exposed for involution tests.
void flip_sample(VisualSample& sample, FlipAxis axis);

}  // namespace fino

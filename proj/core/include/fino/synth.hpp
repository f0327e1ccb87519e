#pragma once

#include <cstdint>
#include <string>

#include "fino/episode.hpp"

namespace fino {

// Which modalities carry the failure cue; the other modality is rendered
// from label-independent streams so it holds no class signal at all.
enum class SignalMode { AudioOnly, VisionOnly, Both };

const char* signal_mode_to_string(SignalMode mode);
SignalMode signal_mode_from_string(const std::string& s);

// Recipe for a seeded multimodal dataset: a colored object blob slides
// across a textured table plane toward a goal region while a microphone
// records low-level noise. Failures vanish the blob in retreat frames
// (vision cue) and insert a short wideband transient during manipulation
// (audio cue), gated by signal_mode.
struct SynthSpec {
  int n_episodes = 200;
  double fail_fraction = 0.64;
  int image_hw = 56;
  int n_frames = 24;
  double audio_seconds = 4.0;
  SignalMode signal_mode = SignalMode::Both;
  double noise_level = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

// Deterministic given (spec.seed, label, index). Scene layout, trajectory,
// and sensor noise come from streams keyed only by (seed, index), so paired
// episodes (same index, different label) differ exactly in the failure cues
// of the modalities signal_mode activates.
Episode generate_episode(const SynthSpec& spec, Label label,
                         std::uint64_t index);

// Writes the episode directory layout plus manifest.csv under out_dir and
// returns the same episodes in memory (audio pre-quantized to the on-disk
// grid, so a reload reproduces it exactly). Class counts are exact:
// round(fail_fraction * n_episodes) failures, listed first.
Dataset generate_dataset(const SynthSpec& spec, const std::string& out_dir);

}  // namespace fino

#include "fino/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "fino/error.hpp"
#include "fino/rng.hpp"
#include "fino/wav.hpp"

namespace fino {

namespace fs = std::filesystem;

namespace {

constexpr int kSampleRate = 16000;
constexpr double kBurstSeconds = 0.1;
constexpr int kTableDepthMinMm = 1300;
constexpr int kBlobDepthMinMm = 950;
constexpr int kOccluderDepthMm = 100;

std::uint8_t quantize_u8(double v) {
  const long q = std::lround(v);
  return static_cast<std::uint8_t>(std::clamp(q, 0l, 255l));
}

std::uint16_t quantize_u16(double v) {
  const long q = std::lround(v);
  return static_cast<std::uint16_t>(std::clamp(q, 0l, 65535l));
}

// Everything the renderer needs that is shared between the success and the
// fail variant of an episode. Drawn from a stream keyed by (seed, index)
// only, never by label, so paired episodes share it verbatim.
struct Scene {
  double table_rgb[3];
  double table_depth_mm;
  double blob_rgb[3];
  double blob_depth_mm;
  int radius;
  double x0, y0, x1, y1;  // blob center, start and goal
};

Scene draw_scene(const SynthSpec& spec, RngState& rng) {
  Scene s;
  for (double& c : s.table_rgb)
    c = 90.0 + static_cast<double>(rng.next_below(50));
  s.table_depth_mm =
      static_cast<double>(kTableDepthMinMm + rng.next_below(400));

  const int hi_channel = static_cast<int>(rng.next_below(3));
  for (int c = 0; c < 3; ++c)
    s.blob_rgb[c] = c == hi_channel
                        ? 190.0 + static_cast<double>(rng.next_below(60))
                        : static_cast<double>(rng.next_below(50));
  s.blob_depth_mm = static_cast<double>(kBlobDepthMinMm + rng.next_below(200));

  const int hw = spec.image_hw;
  int radius = std::max(2, hw / 10) + static_cast<int>(rng.next_below(2));
  radius = std::min(radius, (hw - 4) / 2);
  s.radius = radius;

  // Centers stay a pixel clear of the border so the blob never clips and
  // per-frame pixel histograms depend only on its presence, not position.
  const double lo = static_cast<double>(radius + 1);
  const double hi = static_cast<double>(hw - 2 - radius);
  const double span = hi - lo;
  s.x0 = lo + rng.next_uniform() * span * 0.25;
  s.x1 = hi - rng.next_uniform() * span * 0.25;
  s.y0 = lo + rng.next_uniform() * span;
  s.y1 = lo + rng.next_uniform() * span;
  return s;
}

}  // namespace

const char* signal_mode_to_string(SignalMode mode) {
  switch (mode) {
    case SignalMode::AudioOnly: return "audio-only";
    case SignalMode::VisionOnly: return "vision-only";
    default: return "both";
  }
}

SignalMode signal_mode_from_string(const std::string& s) {
  if (s == "audio-only") return SignalMode::AudioOnly;
  if (s == "vision-only") return SignalMode::VisionOnly;
  if (s == "both") return SignalMode::Both;
  raise_data("signal_mode: expected audio-only, vision-only, or both, got \"" +
             s + "\"");
}

void SynthSpec::validate() const {
  if (n_episodes < 1)
    raise_contract("synth: n_episodes must be at least 1, got " +
                   std::to_string(n_episodes));
  if (!(fail_fraction > 0.0 && fail_fraction < 1.0))
    raise_contract("synth: fail_fraction must lie in (0, 1), got " +
                   std::to_string(fail_fraction));
  if (image_hw < 8)
    raise_contract("synth: image_hw must be at least 8, got " +
                   std::to_string(image_hw));
  if (n_frames < 12)
    raise_contract(
        "synth: n_frames must be at least 12 so every phase keeps 4 frames, "
        "got " +
        std::to_string(n_frames));
  if (!(audio_seconds > 0.0))
    raise_contract("synth: audio_seconds must be positive, got " +
                   std::to_string(audio_seconds));
  if (!(noise_level > 0.0 && noise_level < 1.0))
    raise_contract("synth: noise_level must lie in (0, 1), got " +
                   std::to_string(noise_level));
}

Episode generate_episode(const SynthSpec& spec, Label label,
                         std::uint64_t index) {
  spec.validate();

  const int hw = spec.image_hw;
  const int nf = spec.n_frames;
  const int approach_end = nf / 3;
  const int manipulate_end = 2 * nf / 3;
  const int occlude_mid = (approach_end + manipulate_end) / 2;
  const int band_rows = (2 * hw + 4) / 5;  // ceil(0.4 * hw) rows of arm

  const bool vision_cue = label == Label::Fail &&
                          spec.signal_mode != SignalMode::AudioOnly;
  const bool audio_cue = label == Label::Fail &&
                         spec.signal_mode != SignalMode::VisionOnly;

  RngState scene_rng = RngState::derive(spec.seed, "synth-scene", index);
  const Scene scene = draw_scene(spec, scene_rng);

  Episode ep;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ep%04llu",
                  static_cast<unsigned long long>(index));
    ep.id = buf;
  }
  ep.manipulation = "synthetic";
  ep.label = label;
  ep.phases = PhaseAnnotations{approach_end, manipulate_end};

  const double noise_amp = spec.noise_level * 255.0;
  ep.rgb.reserve(static_cast<size_t>(nf));
  ep.depth.reserve(static_cast<size_t>(nf));
  for (int t = 0; t < nf; ++t) {
    // The blob reaches the goal by the last manipulation frame and holds
    // there through retreat; a vision-side failure vanishes it instead.
    const double alpha =
        t >= manipulate_end - 1
            ? 1.0
            : static_cast<double>(t) / static_cast<double>(manipulate_end - 1);
    const long cx = std::lround(scene.x0 + alpha * (scene.x1 - scene.x0));
    const long cy = std::lround(scene.y0 + alpha * (scene.y1 - scene.y0));
    const bool blob_present = !(vision_cue && t >= manipulate_end);
    const bool occluded = t >= occlude_mid - 1 && t <= occlude_mid + 1;
    const long r2 = static_cast<long>(scene.radius) * scene.radius;

    ImageU8 rgb;
    rgb.height = hw;
    rgb.width = hw;
    rgb.pixels.resize(static_cast<size_t>(hw) * hw * 3);
    ImageU16 depth;
    depth.height = hw;
    depth.width = hw;
    depth.pixels.resize(static_cast<size_t>(hw) * hw);

    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        // Noise draws are unconditional so the stream stays aligned across
        // labels and every pixel decision is purely a paint-over.
        double dn[3];
        for (double& d : dn)
          d = (2.0 * scene_rng.next_uniform() - 1.0) * noise_amp;
        const double dz = (2.0 * scene_rng.next_uniform() - 1.0) * 4.0;

        const double* base = scene.table_rgb;
        double depth_mm = scene.table_depth_mm;
        const long dx = static_cast<long>(x) - cx;
        const long dy = static_cast<long>(y) - cy;
        if (blob_present && dx * dx + dy * dy <= r2) {
          base = scene.blob_rgb;
          depth_mm = scene.blob_depth_mm;
        }
        static constexpr double kArmRgb[3] = {70.0, 70.0, 75.0};
        if (occluded && y < band_rows) {
          base = kArmRgb;
          depth_mm = static_cast<double>(kOccluderDepthMm);
        }

        const size_t p = static_cast<size_t>(y) * hw + x;
        for (int c = 0; c < 3; ++c)
          rgb.pixels[p * 3 + static_cast<size_t>(c)] =
              quantize_u8(base[c] + dn[c]);
        depth.pixels[p] = quantize_u16(depth_mm + dz);
      }
    }
    ep.rgb.push_back(std::move(rgb));
    ep.depth.push_back(std::move(depth));
  }

  const long n_samples = std::lround(spec.audio_seconds * kSampleRate);
  ep.audio.sample_rate = kSampleRate;
  ep.audio.samples.resize(static_cast<size_t>(std::max(1l, n_samples)));
  RngState audio_rng = RngState::derive(spec.seed, "synth-audio", index);
  for (double& v : ep.audio.samples)
    v = spec.noise_level * (2.0 * audio_rng.next_uniform() - 1.0);

  if (audio_cue) {
    RngState burst_rng = RngState::derive(spec.seed, "synth-burst", index);
    const double duration = ep.duration_seconds();
    const double t_lo = duration * approach_end / nf;
    const double t_hi = duration * manipulate_end / nf;
    const double slack = std::max(0.0, t_hi - t_lo - kBurstSeconds);
    const double start_s = t_lo + burst_rng.next_uniform() * slack;
    const double amp = 0.6 + 0.2 * burst_rng.next_uniform();
    const long i0 = std::lround(start_s * kSampleRate);
    const long len =
        std::min(std::lround(kBurstSeconds * kSampleRate),
                 static_cast<long>(ep.audio.samples.size()) - i0);
    for (long i = 0; i < len; ++i)
      ep.audio.samples[static_cast<size_t>(i0 + i)] +=
          amp * (2.0 * burst_rng.next_uniform() - 1.0);
  }

  // Snap to the 16-bit grid the WAV container stores, so the in-memory
  // episode and a reload of the written one are bit-identical.
  for (double& v : ep.audio.samples) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    v = static_cast<double>(std::lround(clamped * 32767.0)) / 32767.0;
  }

  const double duration = ep.duration_seconds();
  ep.timestamps.resize(static_cast<size_t>(nf));
  for (int i = 0; i < nf; ++i)
    ep.timestamps[static_cast<size_t>(i)] =
        duration * static_cast<double>(i) / static_cast<double>(nf);
  return ep;
}

namespace {

void write_meta(const fs::path& path, const Episode& ep) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise_data("synth: cannot write " + path.string());
  out << "{\n"
      << "  \"label\": \"" << label_to_string(ep.label) << "\",\n"
      << "  \"manipulation\": \"" << ep.manipulation << "\",\n"
      << "  \"approach_end\": " << ep.phases->approach_end << ",\n"
      << "  \"manipulate_end\": " << ep.phases->manipulate_end << "\n"
      << "}\n";
  if (!out) raise_data("synth: short write to " + path.string());
}

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

}  // namespace

Dataset generate_dataset(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  const int n_fail = static_cast<int>(
      std::lround(spec.fail_fraction * spec.n_episodes));

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) raise_data("synth: cannot create " + out_dir + ": " + ec.message());

  Dataset ds;
  ds.episodes.reserve(static_cast<size_t>(spec.n_episodes));
  std::vector<DatasetEntry> entries;
  entries.reserve(static_cast<size_t>(spec.n_episodes));

  for (int i = 0; i < spec.n_episodes; ++i) {
    const Label label = i < n_fail ? Label::Fail : Label::Success;
    Episode ep = generate_episode(spec, label, static_cast<std::uint64_t>(i));

    const fs::path dir = fs::path(out_dir) / ep.id;
    // A stale directory from an earlier, larger run would leave extra
    // frames behind and corrupt the frame count on load.
    fs::remove_all(dir, ec);
    if (ec) raise_data("synth: cannot clear " + dir.string() + ": " +
                       ec.message());
    fs::create_directories(dir / "rgb", ec);
    if (!ec) fs::create_directories(dir / "depth", ec);
    if (ec) raise_data("synth: cannot create " + dir.string() + ": " +
                       ec.message());

    for (int t = 0; t < ep.n_frames(); ++t) {
      write_png_rgb8((dir / "rgb" / frame_name(t)).string(),
                     ep.rgb[static_cast<size_t>(t)]);
      write_png_gray16((dir / "depth" / frame_name(t)).string(),
                       ep.depth[static_cast<size_t>(t)]);
    }
    write_wav((dir / "audio.wav").string(), ep.audio);
    write_meta(dir / "meta.json", ep);

    entries.push_back({ep.id, label, ep.manipulation});
    ds.episodes.push_back(std::move(ep));
  }

  write_manifest((fs::path(out_dir) / "manifest.csv").string(), entries);
  return ds;
}

}  // namespace fino

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fino/audio.hpp"
#include "fino/image_png.hpp"

namespace fino {

// Class indices are fixed: success = 0, fail = 1.
enum class Label : int { Success = 0, Fail = 1 };

const char* label_to_string(Label label);
Label label_from_string(const std::string& s);

// Frame indices before which the approach / manipulation phases end.
struct PhaseAnnotations {
  int approach_end = 0;
  int manipulate_end = 0;
};

struct Episode {
  std::string id;
  std::string manipulation;
  Label label = Label::Success;
  std::vector<ImageU8> rgb;
  std::vector<ImageU16> depth;        // millimeters
  std::vector<double> timestamps;     // seconds; uniform over audio duration
  AudioSignal audio;
  std::optional<PhaseAnnotations> phases;
  std::optional<std::array<int, 4>> crop_rect;  // x, y, w, h

  int n_frames() const { return static_cast<int>(rgb.size()); }
  double duration_seconds() const {
    return static_cast<double>(audio.samples.size()) /
           static_cast<double>(audio.sample_rate);
  }
};

struct DatasetEntry {
  std::string id;
  Label label = Label::Success;
  std::string manipulation;
};

struct Dataset {
  std::vector<Episode> episodes;  // manifest order
  int count(Label label) const;
};

// Layout on disk: <root>/<id>/rgb/%06d.png, <root>/<id>/depth/%06d.png,
// <root>/<id>/audio.wav, <root>/<id>/meta.json; <root>/manifest.csv lists
// "id,label,manipulation" with a header line.
Episode load_episode(const std::string& root, const DatasetEntry& entry);
std::vector<DatasetEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path,
                    const std::vector<DatasetEntry>& entries);
Dataset load_dataset(const std::string& root);

}  // namespace fino

#include "fino/episode.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fino/error.hpp"
#include "fino/wav.hpp"

namespace fino {

namespace fs = std::filesystem;
using nlohmann::json;

const char* label_to_string(Label label) {
  return label == Label::Success ? "success" : "fail";
}

Label label_from_string(const std::string& s) {
  if (s == "success") return Label::Success;
  if (s == "fail") return Label::Fail;
  raise_data("label: expected \"success\" or \"fail\", got \"" + s + "\"");
}

int Dataset::count(Label label) const {
  int n = 0;
  for (const auto& e : episodes)
    if (e.label == label) ++n;
  return n;
}

namespace {

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

int count_pngs(const fs::path& dir, const std::string& id) {
  if (!fs::is_directory(dir))
    raise_data("episode " + id + ": missing directory " + dir.string());
  int n = 0;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".png") ++n;
  return n;
}

// Mandatory keys raise a data error naming the field; unknown keys are
// ignored so episode metadata can carry extra annotations.
void parse_meta(const fs::path& path, Episode& ep) {
  std::ifstream in(path);
  if (!in) raise_data("episode " + ep.id + ": missing meta.json");
  json meta;
  try {
    in >> meta;
  } catch (const json::parse_error& e) {
    raise_data("episode " + ep.id + ": malformed meta.json: " + e.what());
  }
  if (!meta.is_object())
    raise_data("episode " + ep.id + ": meta.json is not an object");

  if (!meta.contains("label"))
    raise_data("episode " + ep.id + ": meta.json missing field \"label\"");
  if (!meta["label"].is_string())
    raise_data("episode " + ep.id + ": field \"label\" must be a string");
  ep.label = label_from_string(meta["label"].get<std::string>());

  if (!meta.contains("manipulation"))
    raise_data("episode " + ep.id +
               ": meta.json missing field \"manipulation\"");
  if (!meta["manipulation"].is_string())
    raise_data("episode " + ep.id + ": field \"manipulation\" must be a string");
  ep.manipulation = meta["manipulation"].get<std::string>();

  const bool has_a = meta.contains("approach_end");
  const bool has_m = meta.contains("manipulate_end");
  if (has_a != has_m)
    raise_data("episode " + ep.id + ": meta.json missing field \"" +
               (has_a ? std::string("manipulate_end")
                      : std::string("approach_end")) +
               "\" (phase annotations need both)");
  if (has_a) {
    if (!meta["approach_end"].is_number_integer() ||
        !meta["manipulate_end"].is_number_integer())
      raise_data("episode " + ep.id + ": phase annotations must be integers");
    PhaseAnnotations ph;
    ph.approach_end = meta["approach_end"].get<int>();
    ph.manipulate_end = meta["manipulate_end"].get<int>();
    ep.phases = ph;
  }

  if (meta.contains("crop_rect")) {
    const auto& cr = meta["crop_rect"];
    if (!cr.is_array() || cr.size() != 4)
      raise_data("episode " + ep.id +
                 ": field \"crop_rect\" must be [x,y,w,h]");
    std::array<int, 4> rect{};
    for (size_t i = 0; i < 4; ++i) {
      if (!cr[i].is_number_integer())
        raise_data("episode " + ep.id + ": crop_rect entries must be integers");
      rect[i] = cr[i].get<int>();
    }
    ep.crop_rect = rect;
  }
}

}  // namespace

Episode load_episode(const std::string& root, const DatasetEntry& entry) {
  Episode ep;
  ep.id = entry.id;
  const fs::path dir = fs::path(root) / entry.id;
  if (!fs::is_directory(dir))
    raise_data("episode " + entry.id + ": missing directory " + dir.string());

  parse_meta(dir / "meta.json", ep);
  if (ep.label != entry.label)
    raise_data("episode " + entry.id + ": manifest says " +
               label_to_string(entry.label) + " but meta.json says " +
               label_to_string(ep.label));

  const int n_rgb = count_pngs(dir / "rgb", ep.id);
  const int n_depth = count_pngs(dir / "depth", ep.id);
  if (n_rgb < 1) raise_data("episode " + ep.id + ": no RGB frames");
  if (n_rgb != n_depth)
    raise_data("episode " + ep.id + ": " + std::to_string(n_rgb) +
               " RGB frames but " + std::to_string(n_depth) + " depth frames");

  ep.rgb.reserve(static_cast<size_t>(n_rgb));
  ep.depth.reserve(static_cast<size_t>(n_rgb));
  for (int i = 0; i < n_rgb; ++i) {
    ep.rgb.push_back(read_png_rgb8((dir / "rgb" / frame_name(i)).string()));
    ep.depth.push_back(
        read_png_gray16((dir / "depth" / frame_name(i)).string()));
    const auto& rgb = ep.rgb.back();
    const auto& depth = ep.depth.back();
    if (rgb.height != ep.rgb[0].height || rgb.width != ep.rgb[0].width)
      raise_data("episode " + ep.id + ": frame " + std::to_string(i) +
                 " changes RGB dimensions");
    if (depth.height != rgb.height || depth.width != rgb.width)
      raise_data("episode " + ep.id + ": frame " + std::to_string(i) +
                 " depth dimensions do not match RGB");
  }

  ep.audio = read_wav((dir / "audio.wav").string());
  if (ep.audio.samples.empty())
    raise_data("episode " + ep.id + ": empty audio");

  // The layout carries no per-frame clocks, so frames are placed uniformly
  // across the audio duration: t_i = i * duration / n_frames.
  const double duration = ep.duration_seconds();
  ep.timestamps.resize(static_cast<size_t>(n_rgb));
  for (int i = 0; i < n_rgb; ++i)
    ep.timestamps[static_cast<size_t>(i)] =
        duration * static_cast<double>(i) / static_cast<double>(n_rgb);

  if (ep.phases) {
    if (ep.phases->approach_end < 0 ||
        ep.phases->approach_end > ep.phases->manipulate_end ||
        ep.phases->manipulate_end > n_rgb)
      raise_data("episode " + ep.id + ": phase annotations (" +
                 std::to_string(ep.phases->approach_end) + ", " +
                 std::to_string(ep.phases->manipulate_end) +
                 ") out of order for " + std::to_string(n_rgb) + " frames");
  }
  if (ep.crop_rect) {
    const auto& r = *ep.crop_rect;
    if (r[0] < 0 || r[1] < 0 || r[2] < 1 || r[3] < 1 ||
        r[0] + r[2] > ep.rgb[0].width || r[1] + r[3] > ep.rgb[0].height)
      raise_contract("episode " + ep.id + ": crop_rect outside the frame");
  }
  return ep;
}

std::vector<DatasetEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise_data("manifest: cannot open " + path);
  std::vector<DatasetEntry> entries;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line == "id,label,manipulation") continue;  // header
    }
    std::istringstream ls(line);
    DatasetEntry e;
    std::string label;
    if (!std::getline(ls, e.id, ',') || !std::getline(ls, label, ',') ||
        !std::getline(ls, e.manipulation))
      raise_data("manifest: malformed line \"" + line + "\" in " + path);
    e.label = label_from_string(label);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) raise_data("manifest: no entries in " + path);
  return entries;
}

void write_manifest(const std::string& path,
                    const std::vector<DatasetEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise_data("manifest: cannot write " + path);
  out << "id,label,manipulation\n";
  for (const auto& e : entries)
    out << e.id << ',' << label_to_string(e.label) << ',' << e.manipulation
        << '\n';
  if (!out) raise_data("manifest: short write to " + path);
}

Dataset load_dataset(const std::string& root) {
  const auto entries = read_manifest((fs::path(root) / "manifest.csv").string());
  Dataset ds;
  ds.episodes.reserve(entries.size());
  for (const auto& entry : entries)
    ds.episodes.push_back(load_episode(root, entry));
  return ds;
}

}  // namespace fino

#include "fino/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fino/error.hpp"

namespace fino {
namespace {

constexpr char kMagic[8] = {'F', 'I', 'N', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

// All scalar fields are serialized little-endian byte by byte so the file
// format does not depend on host endianness.
template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  U bits = static_cast<U>(value);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  }
  out.write(buf, sizeof(U));
}

void write_f64(std::ostream& out, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  write_le(out, bits);
}

void write_f32(std::ostream& out, float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  write_le(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
  write_le(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) {
      raise_data("checkpoint: cannot open '" + path + "'");
    }
  }

  void read_bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      raise_data("checkpoint: truncated file");
    }
  }

  template <typename T>
  T read_le() {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    char buf[sizeof(U)];
    read_bytes(buf, sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(buf[i]))
              << (8 * i);
    }
    return static_cast<T>(bits);
  }

  double read_f64() {
    std::uint64_t bits = read_le<std::uint64_t>();
    double value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
  }

  float read_f32() {
    std::uint32_t bits = read_le<std::uint32_t>();
    float value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
  }

  std::string read_string(std::size_t max_len) {
    std::uint32_t len = read_le<std::uint32_t>();
    if (len > max_len) {
      raise_data("checkpoint: string length " + std::to_string(len) +
                 " exceeds limit");
    }
    std::string s(len, '\0');
    if (len > 0) {
      read_bytes(s.data(), len);
    }
    return s;
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::ifstream in_;
};

void write_config(std::ostream& out, const ModelConfig& c) {
  for (int ch : c.block_channels) {
    write_le(out, static_cast<std::int32_t>(ch));
  }
  write_le(out, static_cast<std::int32_t>(c.conv_kernel));
  write_le(out, static_cast<std::int32_t>(c.audio_filters));
  write_le(out, static_cast<std::int32_t>(c.audio_kernel));
  write_le(out, static_cast<std::int32_t>(c.audio_layers));
  write_le(out, static_cast<std::int32_t>(c.fc1_width));
  write_le(out, static_cast<std::int32_t>(c.n_classes));
  write_f64(out, c.dropout_p);
  write_le(out, static_cast<std::int32_t>(c.input_h));
  write_le(out, static_cast<std::int32_t>(c.input_w));
  write_le(out, static_cast<std::int32_t>(c.n_mfcc));
  write_le(out, static_cast<std::int32_t>(c.audio_frames));
  write_le(out, static_cast<std::uint8_t>(c.variant));
  write_le(out, static_cast<std::uint8_t>(c.use_batch_norm ? 1 : 0));
  write_le(out, static_cast<std::uint8_t>(c.use_dropout ? 1 : 0));
  write_le(out, static_cast<std::uint64_t>(c.seed));
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  for (int& ch : c.block_channels) {
    ch = r.read_le<std::int32_t>();
  }
  c.conv_kernel = r.read_le<std::int32_t>();
  c.audio_filters = r.read_le<std::int32_t>();
  c.audio_kernel = r.read_le<std::int32_t>();
  c.audio_layers = r.read_le<std::int32_t>();
  c.fc1_width = r.read_le<std::int32_t>();
  c.n_classes = r.read_le<std::int32_t>();
  c.dropout_p = r.read_f64();
  c.input_h = r.read_le<std::int32_t>();
  c.input_w = r.read_le<std::int32_t>();
  c.n_mfcc = r.read_le<std::int32_t>();
  c.audio_frames = r.read_le<std::int32_t>();
  std::uint8_t variant = r.read_le<std::uint8_t>();
  if (variant > static_cast<std::uint8_t>(Variant::Rgbda)) {
    raise_data("checkpoint: unknown variant code " + std::to_string(variant));
  }
  c.variant = static_cast<Variant>(variant);
  c.use_batch_norm = r.read_le<std::uint8_t>() != 0;
  c.use_dropout = r.read_le<std::uint8_t>() != 0;
  c.seed = r.read_le<std::uint64_t>();
  return c;
}

void write_tensor_entry(std::ostream& out, const std::string& name,
                        bool trainable, const std::vector<int64_t>& shape,
                        const double* data, std::size_t numel) {
  write_string(out, name);
  write_le(out, static_cast<std::uint8_t>(trainable ? 1 : 0));
  write_le(out, static_cast<std::uint32_t>(shape.size()));
  for (int64_t d : shape) {
    write_le(out, static_cast<std::int64_t>(d));
  }
  for (std::size_t i = 0; i < numel; ++i) {
    write_f32(out, static_cast<float>(data[i]));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, FinoNet& model,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    raise_data("checkpoint: cannot write '" + path + "'");
  }
  out.write(kMagic, sizeof(kMagic));
  write_le(out, kVersion);
  write_config(out, model.config());

  write_le(out, static_cast<std::uint64_t>(meta.rng_seed));
  write_le(out, static_cast<std::uint64_t>(meta.rng_counter));
  write_le(out, static_cast<std::int32_t>(meta.epoch));
  write_f64(out, meta.best_val_f1);
  write_string(out, meta.note);

  const auto& params = model.params();
  auto stats = model.stats_entries();
  write_le(out,
           static_cast<std::uint32_t>(params.size() + stats.size()));
  for (const Param& p : params) {
    write_tensor_entry(out, p.name, p.trainable, p.value.shape(),
                       p.value.data(),
                       static_cast<std::size_t>(p.value.numel()));
  }
  for (const StatsEntry& s : stats) {
    std::vector<int64_t> shape = {
        static_cast<int64_t>(s.expected_size)};
    write_tensor_entry(out, s.name, false, shape, s.values->data(),
                       s.values->size());
  }
  out.flush();
  if (!out) {
    raise_data("checkpoint: write to '" + path + "' failed");
  }
}

FinoNet load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  Reader r(path);
  char magic[sizeof(kMagic)];
  r.read_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    raise_data("checkpoint: bad magic in '" + path + "'");
  }
  std::uint32_t version = r.read_le<std::uint32_t>();
  if (version != kVersion) {
    raise_data("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig config = read_config(r);

  CheckpointMeta meta;
  meta.rng_seed = r.read_le<std::uint64_t>();
  meta.rng_counter = r.read_le<std::uint64_t>();
  meta.epoch = r.read_le<std::int32_t>();
  meta.best_val_f1 = r.read_f64();
  meta.note = r.read_string(1 << 20);

  FinoNet model(config);
  auto stats = model.stats_entries();
  std::size_t expected_entries = model.params().size() + stats.size();
  std::uint32_t n_entries = r.read_le<std::uint32_t>();
  if (n_entries != expected_entries) {
    raise_data("checkpoint: holds " + std::to_string(n_entries) +
               " tensors but the model defines " +
               std::to_string(expected_entries));
  }

  for (std::uint32_t e = 0; e < n_entries; ++e) {
    std::string name = r.read_string(1 << 16);
    bool trainable = r.read_le<std::uint8_t>() != 0;
    std::uint32_t ndim = r.read_le<std::uint32_t>();
    if (ndim > 8) {
      raise_data("checkpoint: tensor '" + name + "' has rank " +
                 std::to_string(ndim));
    }
    std::vector<int64_t> shape(ndim);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = r.read_le<std::int64_t>();
      if (shape[d] <= 0) {
        raise_data("checkpoint: tensor '" + name +
                   "' has non-positive dimension");
      }
      numel *= static_cast<std::size_t>(shape[d]);
    }

    if (Param* p = model.find_param(name)) {
      if (p->value.shape() != shape) {
        raise_data("checkpoint: tensor '" + name + "' has mismatched shape");
      }
      double* dst = p->value.data();
      for (std::size_t i = 0; i < numel; ++i) {
        dst[i] = static_cast<double>(r.read_f32());
      }
      p->trainable = trainable;
      p->value.set_requires_grad(trainable);
      continue;
    }

    bool matched = false;
    for (StatsEntry& s : stats) {
      if (s.name != name) {
        continue;
      }
      if (ndim != 1 ||
          shape[0] != static_cast<int64_t>(s.expected_size)) {
        raise_data("checkpoint: tensor '" + name + "' has mismatched shape");
      }
      for (std::size_t i = 0; i < numel; ++i) {
        (*s.values)[i] = static_cast<double>(r.read_f32());
      }
      matched = true;
      break;
    }
    if (!matched) {
      raise_data("checkpoint: unknown tensor '" + name + "'");
    }
  }

  if (!r.at_eof()) {
    raise_data("checkpoint: trailing bytes after last tensor");
  }
  if (meta_out != nullptr) {
    *meta_out = meta;
  }
  return model;
}

}  // namespace fino

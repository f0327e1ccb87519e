#include "fino/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "fino/error.hpp"

namespace fino {

namespace {

constexpr int kRequiredRate = 16000;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
}

}  // namespace

AudioSignal read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise_data("wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    raise_data("wav: " + path + " is not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_size = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t size = read_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + size > bytes.size())
      raise_data("wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) raise_data("wav: malformed fmt chunk in " + path);
      format = read_u16(bytes.data() + pos);
      channels = read_u16(bytes.data() + pos + 2);
      rate = read_u32(bytes.data() + pos + 4);
      bits = read_u16(bytes.data() + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + pos;
      data_size = size;
    }
    pos += size + (size & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data == nullptr)
    raise_data("wav: missing fmt or data chunk in " + path);
  if (format != 1)
    raise_data("wav: " + path + " is not integer PCM (format tag " +
               std::to_string(format) + ")");
  if (channels != 1)
    raise_data("wav: " + path + " has " + std::to_string(channels) +
               " channels, expected mono");
  if (bits != 16)
    raise_data("wav: " + path + " has " + std::to_string(bits) +
               "-bit samples, expected 16");
  if (rate != kRequiredRate)
    raise_data("wav: " + path + " sampled at " + std::to_string(rate) +
               " Hz, expected " + std::to_string(kRequiredRate));

  AudioSignal signal;
  signal.sample_rate = static_cast<int>(rate);
  const size_t n = data_size / 2;
  signal.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const std::int16_t s = static_cast<std::int16_t>(
        static_cast<std::uint16_t>(data[2 * i] | (data[2 * i + 1] << 8)));
    // Same scale as the writer, so a round trip only costs the rounding.
    signal.samples[i] = static_cast<double>(s) / 32767.0;
  }
  return signal;
}

void write_wav(const std::string& path, const AudioSignal& signal) {
  const std::uint32_t n = static_cast<std::uint32_t>(signal.samples.size());
  const std::uint32_t data_size = n * 2;
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // integer PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(signal.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(signal.sample_rate) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);
  for (double v : signal.samples) {
    double clamped = v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v);
    const long q = std::lround(clamped * 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise_data("wav: cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) raise_data("wav: short write to " + path);
}

}  // namespace fino

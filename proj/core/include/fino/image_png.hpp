#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fino {

// Interleaved row-major RGB, 8 bits per channel.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * static_cast<size_t>(width) +
                   static_cast<size_t>(x)) * 3 + static_cast<size_t>(c)];
  }
};

// Single-channel 16-bit values (depth in millimeters).
struct ImageU16 {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> pixels;  // height * width

  std::uint16_t at(int y, int x) const {
    return pixels[static_cast<size_t>(y) * static_cast<size_t>(width) +
                  static_cast<size_t>(x)];
  }
};

// Strict readers: the file must be exactly 8-bit RGB / 16-bit grayscale;
// anything else is a data error naming the property. Writers emit fixed
// compression settings so identical images produce identical bytes.
ImageU8 read_png_rgb8(const std::string& path);
void write_png_rgb8(const std::string& path, const ImageU8& image);
ImageU16 read_png_gray16(const std::string& path);
void write_png_gray16(const std::string& path, const ImageU16& image);

}  // namespace fino

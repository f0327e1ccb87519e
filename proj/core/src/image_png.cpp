#include "fino/image_png.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "fino/error.hpp"

namespace fino {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void quiet_warning(png_structp, png_const_charp) {}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

void open_reader(PngReader& r, std::FILE* f, const std::string& path) {
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                 quiet_warning);
  if (!r.png) raise_data("png: out of memory reading " + path);
  r.info = png_create_info_struct(r.png);
  if (!r.info) raise_data("png: out of memory reading " + path);
  png_init_io(r.png, f);
}

void open_writer(PngWriter& w, std::FILE* f, const std::string& path) {
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                  quiet_warning);
  if (!w.png) raise_data("png: out of memory writing " + path);
  w.info = png_create_info_struct(w.png);
  if (!w.info) raise_data("png: out of memory writing " + path);
  png_init_io(w.png, f);
  // Fixed settings keep encoded bytes stable for identical pixels.
  png_set_compression_level(w.png, 6);
  png_set_filter(w.png, 0, PNG_FILTER_NONE);
}

}  // namespace

ImageU8 read_png_rgb8(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) raise_data("png: cannot open " + path);
  PngReader r;
  open_reader(r, f.get(), path);
  if (setjmp(png_jmpbuf(r.png))) raise_data("png: failed to decode " + path);

  png_read_info(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (depth != 8 || color != PNG_COLOR_TYPE_RGB)
    raise_data("png: " + path + " is not 8-bit RGB (depth " +
               std::to_string(depth) + ", color type " + std::to_string(color) +
               ")");
  ImageU8 img;
  img.height = static_cast<int>(png_get_image_height(r.png, r.info));
  img.width = static_cast<int>(png_get_image_width(r.png, r.info));
  img.pixels.resize(static_cast<size_t>(img.height) *
                    static_cast<size_t>(img.width) * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] =
        img.pixels.data() + static_cast<size_t>(y) *
                                static_cast<size_t>(img.width) * 3;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

void write_png_rgb8(const std::string& path, const ImageU8& image) {
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<size_t>(image.height) *
                                 static_cast<size_t>(image.width) * 3)
    raise_contract("png: malformed RGB image buffer for " + path);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) raise_data("png: cannot write " + path);
  PngWriter w;
  open_writer(w, f.get(), path);
  if (setjmp(png_jmpbuf(w.png))) raise_data("png: failed to encode " + path);

  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(
        image.pixels.data() +
        static_cast<size_t>(y) * static_cast<size_t>(image.width) * 3);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

ImageU16 read_png_gray16(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) raise_data("png: cannot open " + path);
  PngReader r;
  open_reader(r, f.get(), path);
  if (setjmp(png_jmpbuf(r.png))) raise_data("png: failed to decode " + path);

  png_read_info(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (depth != 16 || color != PNG_COLOR_TYPE_GRAY)
    raise_data("png: " + path + " is not 16-bit grayscale (depth " +
               std::to_string(depth) + ", color type " +
               std::to_string(color) + ")");
  png_set_swap(r.png);  // PNG stores 16-bit big-endian; we want host order
  ImageU16 img;
  img.height = static_cast<int>(png_get_image_height(r.png, r.info));
  img.width = static_cast<int>(png_get_image_width(r.png, r.info));
  img.pixels.resize(static_cast<size_t>(img.height) *
                    static_cast<size_t>(img.width));
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] = reinterpret_cast<png_bytep>(
        img.pixels.data() + static_cast<size_t>(y) *
                                static_cast<size_t>(img.width));
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

void write_png_gray16(const std::string& path, const ImageU16& image) {
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<size_t>(image.height) *
                                 static_cast<size_t>(image.width))
    raise_contract("png: malformed grayscale image buffer for " + path);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) raise_data("png: cannot write " + path);
  PngWriter w;
  open_writer(w, f.get(), path);
  if (setjmp(png_jmpbuf(w.png))) raise_data("png: failed to encode " + path);

  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_swap(w.png);
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y)
    rows[static_cast<size_t>(y)] = reinterpret_cast<png_bytep>(
        const_cast<std::uint16_t*>(image.pixels.data()) +
        static_cast<size_t>(y) * static_cast<size_t>(image.width));
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

}  // namespace fino

#include "baangp/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "baangp/error.hpp"
#include "baangp/io.hpp"

namespace baangp {

Image::Image(int w, int h, int c, float fill) : width(w), height(h), channels(c) {
  if (w < 0 || h < 0 || c < 1) throw InvalidArgument("image: bad dimensions");
  data.assign(std::size_t(w) * std::size_t(h) * std::size_t(c), fill);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

void write_png_file(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3 && image.channels != 4) {
    throw InvalidArgument("write_png: channels must be 1, 3 or 4");
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("write_png: cannot open " + path.string());
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("write_png: libpng init failed");
  }
  std::vector<png_byte> row(std::size_t(image.width) * std::size_t(image.channels));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("write_png: " + err);
  }
  png_init_io(png, f.get());
  const int color = image.channels == 1 ? PNG_COLOR_TYPE_GRAY
                    : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                                          : PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(png, info, png_uint_32(image.width), png_uint_32(image.height), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const float v = image.data[std::size_t(y) * row.size() + i];
      const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
      row[i] = png_byte(std::lround(c * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

} // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  atomic_write_file(path, [&](const std::filesystem::path& tmp) { write_png_file(tmp, image); });
}

Image read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("read_png: cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("read_png: not a PNG file: " + path.string());
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("read_png: libpng init failed");
  }
  Image image;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("read_png: " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const int c = int(png_get_channels(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * std::size_t(h));
  rows.resize(std::size_t(h));
  for (int y = 0; y < h; ++y) rows[std::size_t(y)] = buffer.data() + stride * std::size_t(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  image = Image(w, h, c);
  for (int y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < std::size_t(w) * std::size_t(c); ++i) {
      image.data[std::size_t(y) * std::size_t(w) * std::size_t(c) + i] = float(rows[std::size_t(y)][i]) / 255.0f;
    }
  }
  return image;
}

Image composite_over(const Image& rgba, const float background[3]) {
  if (rgba.channels == 3) return rgba;
  if (rgba.channels != 4) throw InvalidArgument("composite_over: expected RGB or RGBA");
  Image out(rgba.width, rgba.height, 3);
  for (int y = 0; y < rgba.height; ++y) {
    for (int x = 0; x < rgba.width; ++x) {
      const float a = rgba.at(x, y, 3);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgba.at(x, y, c) * a + background[c] * (1.0f - a);
    }
  }
  return out;
}

} // namespace baangp

#pragma once

// Float images (HWC, values nominally in [0,1]) and 8-bit PNG I/O.

#include <filesystem>
#include <vector>

namespace baangp {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f);

  std::size_t index(int x, int y, int c) const {
    return (std::size_t(y) * std::size_t(width) + std::size_t(x)) * std::size_t(channels) + std::size_t(c);
  }
  float& at(int x, int y, int c) { return data[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data[index(x, y, c)]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

// Values are clamped to [0,1] and rounded to 8 bits. Written atomically.
void write_png(const std::filesystem::path& path, const Image& image);
// Grayscale and palette images are expanded; 16-bit samples are scaled down.
// Channels: 3 (RGB) or 4 (RGBA) as stored.
Image read_png(const std::filesystem::path& path);

// RGBA over a solid background -> RGB.
Image composite_over(const Image& rgba, const float background[3]);

} // namespace baangp

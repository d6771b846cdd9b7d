// Minimal RGB raster with PNG output (zlib deflate, no filtering).

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tgavc::png {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

class Image {
 public:
  Image(int width, int height, Rgb fill = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void rect(int x0, int y0, int x1, int y1, Rgb c);  // filled, inclusive
  void frame(int x0, int y0, int x1, int y1, Rgb c);  // outline

  void write(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<std::uint8_t> pixels_;
};

/// Perceptual-ish colormap for t in [0, 1] (dark blue to yellow).
Rgb colormap(double t);
/// Distinct series colours.
Rgb palette(int i);

}  // namespace tgavc::png

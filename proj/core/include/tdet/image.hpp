#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdet/geometry.hpp"

namespace tdet {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit RGB, row-major, interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * 3;
  }
  bool operator==(const Image&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;

std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Box outline of the given thickness drawn inward from the box edges, clipped
// to the image.
void draw_box(Image& image, const BoxXYXY& box, Rgb color, int thickness = 2);

// Digits, '.', and '-' in a 3x5 pixel font scaled by `scale`.
void draw_label(Image& image, std::string_view text, int x, int y, Rgb color, int scale = 1);

}  // namespace tdet

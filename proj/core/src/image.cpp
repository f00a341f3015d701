#include "tdet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tdet {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->bytes.size()) png_error(png, "truncated PNG data");
  std::memcpy(out, cur->bytes.data() + cur->offset, len);
  cur->offset += len;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void png_flush_cb(png_structp) {}

struct PngErrorState {
  char message[256] = "libpng error";
};

void png_error_cb(png_structp png, png_const_charp msg) {
  auto* state = static_cast<PngErrorState*>(png_get_error_ptr(png));
  std::snprintf(state->message, sizeof(state->message), "%s", msg);
  png_longjmp(png, 1);
}
void png_warning_cb(png_structp, png_const_charp) {}

// The setjmp frames below hold only trivially destructible locals.
bool encode_rows(png_structp png, png_infop info, const Image* image) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_IHDR(png, info, static_cast<png_uint_32>(image->width),
               static_cast<png_uint_32>(image->height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image->height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image->pixels.data() + y * image->width * 3));
  }
  png_write_end(png, nullptr);
  return true;
}

bool read_header(png_structp png, png_infop info, png_uint_32* w, png_uint_32* h,
                 png_size_t* rowbytes) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  *w = png_get_image_width(png, info);
  *h = png_get_image_height(png, info);
  *rowbytes = png_get_rowbytes(png, info);
  return true;
}

bool read_rows(png_structp png, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.width == 0 || image.height == 0 ||
      image.pixels.size() != image.width * image.height * 3) {
    throw ImageError("encode_png: malformed image buffer");
  }
  PngErrorState err;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
  if (!png) throw ImageError("encode_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
  const bool ok = info && encode_rows(png, info, &image);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw ImageError(std::string("encode_png: ") + err.message);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw ImageError("not a PNG image");
  }
  PngErrorState err;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
  if (!png) throw ImageError("decode_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  png_set_read_fn(png, &cursor, png_read_cb);
  png_uint_32 w = 0, h = 0;
  png_size_t rowbytes = 0;
  Image image;
  bool ok = info && read_header(png, info, &w, &h, &rowbytes);
  if (ok && rowbytes != static_cast<png_size_t>(w) * 3) {
    std::snprintf(err.message, sizeof(err.message), "unsupported PNG layout");
    ok = false;
  }
  if (ok) {
    image = Image(w, h);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = image.pixels.data() + y * image.width * 3;
    ok = read_rows(png, rows.data());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw ImageError(std::string("decode_png: ") + err.message);
  return image;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("write failed for " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

void draw_box(Image& image, const BoxXYXY& box, Rgb color, int thickness) {
  if (image.width == 0 || image.height == 0) return;
  const auto w = static_cast<long>(image.width), h = static_cast<long>(image.height);
  const long x1 = std::clamp(static_cast<long>(std::floor(box.x1)), 0L, w - 1);
  const long y1 = std::clamp(static_cast<long>(std::floor(box.y1)), 0L, h - 1);
  const long x2 = std::clamp(static_cast<long>(std::ceil(box.x2)) - 1, 0L, w - 1);
  const long y2 = std::clamp(static_cast<long>(std::ceil(box.y2)) - 1, 0L, h - 1);
  auto put = [&](long x, long y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::copy(color.begin(), color.end(), image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)));
  };
  for (int t = 0; t < thickness; ++t) {
    for (long x = x1; x <= x2; ++x) {
      put(x, y1 + t);
      put(x, y2 - t);
    }
    for (long y = y1; y <= y2; ++y) {
      put(x1 + t, y);
      put(x2 - t, y);
    }
  }
}

namespace {

// 3 columns x 5 rows, bit 2 = leftmost column.
constexpr std::array<std::array<std::uint8_t, 5>, 12> kGlyphs = {{
    {7, 5, 5, 5, 7},  // 0
    {2, 6, 2, 2, 7},  // 1
    {7, 1, 7, 4, 7},  // 2
    {7, 1, 7, 1, 7},  // 3
    {5, 5, 7, 1, 1},  // 4
    {7, 4, 7, 1, 7},  // 5
    {7, 4, 7, 5, 7},  // 6
    {7, 1, 1, 1, 1},  // 7
    {7, 5, 7, 5, 7},  // 8
    {7, 5, 7, 1, 7},  // 9
    {0, 0, 0, 0, 2},  // .
    {0, 0, 7, 0, 0},  // -
}};

int glyph_index(char ch) {
  if (ch >= '0' && ch <= '9') return ch - '0';
  if (ch == '.') return 10;
  if (ch == '-') return 11;
  return -1;
}

}  // namespace

void draw_label(Image& image, std::string_view text, int x, int y, Rgb color, int scale) {
  int pen = x;
  for (char ch : text) {
    const int g = glyph_index(ch);
    if (g >= 0) {
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (!((kGlyphs[static_cast<std::size_t>(g)][static_cast<std::size_t>(row)] >> (2 - col)) & 1)) continue;
          for (int sy = 0; sy < scale; ++sy) {
            for (int sx = 0; sx < scale; ++sx) {
              const int px = pen + col * scale + sx, py = y + row * scale + sy;
              if (px < 0 || py < 0 || px >= static_cast<int>(image.width) ||
                  py >= static_cast<int>(image.height)) {
                continue;
              }
              std::copy(color.begin(), color.end(),
                        image.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py)));
            }
          }
        }
      }
    }
    pen += 4 * scale;
  }
}

}  // namespace tdet

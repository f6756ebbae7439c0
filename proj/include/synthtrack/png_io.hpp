#pragma once

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "synthtrack/core.hpp"

namespace synthtrack {

/// Grayscale image as stored on disk: 8- or 16-bit single channel.
struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 16;
  std::vector<std::uint16_t> pixels;  // row-major

  std::uint16_t max_value() const { return bit_depth == 8 ? 255 : 65535; }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_to_exception(png_structp png, png_const_charp msg) {
  (void)png;
  throw IoError(std::string("png: ") + msg);
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace detail

inline GrayImage read_gray_png(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_to_exception,
                                           detail::png_warning_ignore);
  if (!png) throw IoError("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png: allocation failure");
  }

  GrayImage img;
  try {
    png_init_io(png, file.get());
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) throw IoError("unsupported color type (grayscale required): " + path);
    if (depth != 8 && depth != 16) throw IoError("unsupported bit depth (8 or 16 required): " + path);

    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.bit_depth = depth;
    img.pixels.resize(static_cast<std::size_t>(w) * h);

    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(row_bytes));
    std::vector<png_bytep> row_ptrs(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rows[y].data();
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);

    for (png_uint_32 y = 0; y < h; ++y) {
      for (png_uint_32 x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (depth == 8) {
          img.pixels[i] = rows[y][x];
        } else {
          img.pixels[i] = static_cast<std::uint16_t>((rows[y][2 * x] << 8) | rows[y][2 * x + 1]);
        }
      }
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_gray_png(const std::string& path, const GrayImage& img) {
  if (img.bit_depth != 8 && img.bit_depth != 16) throw IoError("write_gray_png: bit depth must be 8 or 16");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw IoError("write_gray_png: pixel count mismatch");

  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_to_exception,
                                            detail::png_warning_ignore);
  if (!png) throw IoError("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: allocation failure");
  }

  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 img.bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const std::size_t bytes_per_row = static_cast<std::size_t>(img.width) * (img.bit_depth / 8);
    std::vector<png_byte> row(bytes_per_row);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const std::uint16_t v = img.pixels[static_cast<std::size_t>(y) * img.width + x];
        if (img.bit_depth == 8) {
          row[x] = static_cast<png_byte>(v & 0xFF);
        } else {
          row[2 * x] = static_cast<png_byte>(v >> 8);  // network byte order
          row[2 * x + 1] = static_cast<png_byte>(v & 0xFF);
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, info);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace synthtrack

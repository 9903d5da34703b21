#pragma once

#include "geocorr/core.hpp"
#include "geocorr/image.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace geocorr {

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit)
// ---------------------------------------------------------------------------

namespace detail {

inline int pgm_next_int(std::istream& in, const std::string& origin) {
  // skip whitespace and '#' comments
  for (;;) {
    const int c = in.peek();
    if (c == EOF) throw Error(origin + ": truncated PGM header");
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string junk;
      std::getline(in, junk);
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw Error(origin + ": malformed PGM header");
  return value;
}

}  // namespace detail

/// Load an 8-bit binary PGM and binarize at 128 (>= 128 is foreground).
inline MaskImage load_mask_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_mask: cannot open '" + path + "'");
  char p, five;
  in.get(p);
  in.get(five);
  if (p != 'P' || five != '5') throw Error(path + ": not a binary (P5) PGM");
  const int w = detail::pgm_next_int(in, path);
  const int h = detail::pgm_next_int(in, path);
  const int maxval = detail::pgm_next_int(in, path);
  require(w > 0 && h > 0, path + ": bad PGM dimensions");
  require(maxval > 0 && maxval < 256, path + ": only 8-bit PGM supported");
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw Error(path + ": truncated PGM payload");
  MaskImage mask(h, w);
  for (size_t i = 0; i < raw.size(); ++i) mask.data[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

inline void save_mask_pgm(const MaskImage& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_mask: cannot open '" + path + "' for writing");
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<std::uint8_t> raw(mask.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
}

// ---------------------------------------------------------------------------
// PNG (any color type, collapsed to 8-bit gray and binarized at 128)
// ---------------------------------------------------------------------------

inline MaskImage load_mask_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw Error("load_mask: cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error(path + ": libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error(path + ": PNG decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r) rows[static_cast<size_t>(r)] = raw.data() + static_cast<size_t>(r) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  MaskImage mask(h, w);
  for (size_t i = 0; i < raw.size(); ++i) mask.data[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

inline void save_mask_png(const MaskImage& mask, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("save_mask: cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error(path + ": libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error(path + ": PNG encode failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width),
               static_cast<png_uint_32>(mask.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> raw(mask.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
  std::vector<png_bytep> rows(static_cast<size_t>(mask.height));
  for (int r = 0; r < mask.height; ++r)
    rows[static_cast<size_t>(r)] = raw.data() + static_cast<size_t>(r) * mask.width;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Extension-dispatched mask loader/saver (.pgm or .png).
inline MaskImage load_mask(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".pgm") return load_mask_pgm(path);
  if (ext == ".png") return load_mask_png(path);
  throw Error("load_mask: unsupported extension on '" + path + "'");
}

inline void save_mask(const MaskImage& mask, const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".pgm") return save_mask_pgm(mask, path);
  if (ext == ".png") return save_mask_png(mask, path);
  throw Error("save_mask: unsupported extension on '" + path + "'");
}

}  // namespace geocorr

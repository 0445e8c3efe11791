#include <png.h>

#include <cstdio>
#include <memory>

#include "softmine/image.hpp"

namespace softmine::detail {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw ImageError(msg); }
void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

Raster read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageError("cannot open image '" + path.string() + "'");

  png_byte header[8] = {};
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw ImageError("not a PNG file: '" + path.string() + "'");
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw ImageError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  if (!info) throw ImageError("png_create_info_struct failed");

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth != 8) {
    throw ImageError("unsupported bit depth " + std::to_string(bit_depth) + " in '" + path.string() + "'");
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);

  Raster r;
  r.width = static_cast<int>(png_get_image_width(png, info));
  r.height = static_cast<int>(png_get_image_height(png, info));
  r.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  r.bytes.resize(stride * r.height);
  std::vector<png_bytep> rows(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = r.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return r;
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  int color_type = 0;
  switch (raster.channels) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 2: color_type = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGB_ALPHA; break;
    default: throw ImageError("cannot write raster with " + std::to_string(raster.channels) + " channels");
  }
  if (raster.bytes.size() != static_cast<std::size_t>(raster.width) * raster.height * raster.channels) {
    throw ImageError("raster size does not match its dimensions");
  }

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageError("cannot write image '" + path.string() + "'");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw ImageError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (!info) throw ImageError("png_create_info_struct failed");

  png_init_io(png, file.get());
  png_set_IHDR(png, info, raster.width, raster.height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(raster.width) * raster.channels;
  for (int y = 0; y < raster.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raster.bytes.data() + y * stride));
  }
  png_write_end(png, nullptr);
}

}  // namespace softmine::detail

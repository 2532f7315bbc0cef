// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#include "genassets/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "genassets/common.hpp"

namespace ga {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  GA_CHECK(img.channels == 1 || img.channels == 3, ValueError, "write_png: 1 or 3 channels");
  GA_CHECK(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) *
                   static_cast<std::size_t>(img.channels) ==
               img.pixels.size(),
           ShapeError, "write_png: pixel buffer size mismatch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  GA_CHECK(fp != nullptr, IoError, "write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  GA_CHECK(png, IoError, "write_png: init failure");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: encode failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  const std::size_t stride =
      static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels);
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * stride);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  GA_CHECK(fp != nullptr, IoError, "read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  GA_CHECK(png, IoError, "read_png: init failure");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: decode failure for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_packing(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: unsupported channel count in " + path);
  }
  const std::size_t stride =
      static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels);
  img.pixels.resize(stride * static_cast<std::size_t>(img.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

ImageU8 tensor_to_rgb8(const Tensorf& t) {
  GA_CHECK(t.rank() == 3 && t.dim(2) == 3, ShapeError, "tensor_to_rgb8: expected [H,W,3]");
  ImageU8 img;
  img.height = static_cast<int>(t.dim(0));
  img.width = static_cast<int>(t.dim(1));
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const float v = std::min(1.f, std::max(0.f, t.data()[i]));
    img.pixels[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(v * 255.f));
  }
  return img;
}

Tensorf rgb8_to_tensor(const ImageU8& img) {
  GA_CHECK(img.channels == 3, ShapeError, "rgb8_to_tensor: expected RGB image");
  std::vector<float> vals(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    vals[i] = static_cast<float>(img.pixels[i]) / 255.f;
  return Tensorf::from({img.height, img.width, 3}, std::move(vals));
}

ImageU8 gray8(int width, int height, const std::vector<std::uint8_t>& values) {
  GA_CHECK(values.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
           ShapeError, "gray8: buffer size mismatch");
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = 1;
  img.pixels = values;
  return img;
}

}  // namespace ga

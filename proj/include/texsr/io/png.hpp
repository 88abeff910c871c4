#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/raster.hpp"

namespace texsr::io {

/// 8-bit grayscale; samples in [0,1] are scaled by 255 and rounded half-to-even.
inline void write_png(const std::filesystem::path& path, const Raster& r) {
  std::vector<std::uint8_t> px(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double v = std::clamp(r[i], 0.0, 1.0) * 255.0;
    px[i] = static_cast<std::uint8_t>(std::nearbyint(v));
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(r.width());
  image.height = static_cast<png_uint_32>(r.height());
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write PNG '" + path.string() + "': " + msg);
  }
}

/// Any PNG, converted to 8-bit gray and divided by 255.
inline Raster read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    if (!std::filesystem::exists(path)) throw IoError("cannot open '" + path.string() + "'");
    throw ParseError("cannot read PNG '" + path.string() + "': " + msg);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ParseError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  Raster r(Dims{image.width, image.height});
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<double>(px[i]) / 255.0;
  return r;
}

}  // namespace texsr::io

// Copyright 2026 The Gridbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gridbox/preview.hpp"

#include <png.h>

#include <algorithm>
#include <stdexcept>

namespace gridbox::node {

analysis::Image preview_image(const analysis::Image& img) {
  img.validate();
  const std::uint32_t big = std::max(img.rows, img.cols);
  std::uint32_t rows = img.rows;
  std::uint32_t cols = img.cols;
  if (big > kPreviewMax) {
    rows = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::uint64_t{img.rows} * kPreviewMax / big));
    cols = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::uint64_t{img.cols} * kPreviewMax / big));
  }
  std::uint16_t lo = 0;
  std::uint16_t hi = 255;
  if (img.bits == 16) {
    auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    lo = *mn;
    hi = *mx;
  }
  auto to8 = [&](double v) -> std::uint16_t {
    if (img.bits == 8) return static_cast<std::uint16_t>(v + 0.5);
    if (hi == lo) return static_cast<std::uint16_t>(lo >> 8);
    const double w = (v - lo) * 255.0 / (hi - lo);
    return static_cast<std::uint16_t>(std::clamp(w + 0.5, 0.0, 255.0));
  };
  analysis::Image out;
  out.rows = rows;
  out.cols = cols;
  out.bits = 8;
  out.pixels.resize(std::size_t{rows} * cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    const std::uint32_t r0 = static_cast<std::uint32_t>(std::uint64_t{r} * img.rows / rows);
    const std::uint32_t r1 = std::max(r0 + 1, static_cast<std::uint32_t>(std::uint64_t{r + 1} * img.rows / rows));
    for (std::uint32_t c = 0; c < cols; ++c) {
      const std::uint32_t c0 = static_cast<std::uint32_t>(std::uint64_t{c} * img.cols / cols);
      const std::uint32_t c1 = std::max(c0 + 1, static_cast<std::uint32_t>(std::uint64_t{c + 1} * img.cols / cols));
      std::uint64_t sum = 0;
      for (std::uint32_t y = r0; y < r1; ++y) {
        for (std::uint32_t x = c0; x < c1; ++x) sum += img.at(y, x);
      }
      const double mean = static_cast<double>(sum) / (std::uint64_t{r1 - r0} * (c1 - c0));
      out.pixels[std::size_t{r} * cols + c] = to8(mean);
    }
  }
  return out;
}

namespace {

void on_write(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void on_flush(png_structp) {}

}  // namespace

Bytes encode_png(const analysis::Image& gray8) {
  if (gray8.bits != 8) throw std::invalid_argument("PNG preview expects 8-bit samples");
  Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::vector<std::uint8_t> row(gray8.cols);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, on_write, on_flush);
  png_set_IHDR(png, info, gray8.cols, gray8.rows, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t r = 0; r < gray8.rows; ++r) {
    for (std::uint32_t c = 0; c < gray8.cols; ++c) row[c] = static_cast<std::uint8_t>(gray8.at(r, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Bytes render_preview(const analysis::Image& img) { return encode_png(preview_image(img)); }

}  // namespace gridbox::node

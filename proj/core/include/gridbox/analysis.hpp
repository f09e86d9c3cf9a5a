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

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridbox/dataset.hpp"

// Image-analysis algorithms run by gridbox jobs and at ingest: acquisition QC metrics,
// breast segmentation, density, microcalcification detection and a linear intensity
// standardization.
namespace gridbox::analysis {

struct Image {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t bits = 8;  // 8 or 16
  std::vector<std::uint16_t> pixels;  // row-major

  std::uint32_t maxval() const { return (1u << bits) - 1; }
  std::size_t size() const { return pixels.size(); }
  std::uint16_t at(std::uint32_t r, std::uint32_t c) const { return pixels[std::size_t{r} * cols + c]; }

  // rows, cols >= 8; bits in {8,16}; every sample <= maxval.
  void validate() const;

  bool operator==(const Image&) const = default;
};

Image image_from_dataset(const dataset::Dataset& ds);
// Replaces Rows/Columns/BitsAllocated/BitsStored/PixelData with the image's contents.
void store_in_dataset(const Image& img, dataset::Dataset& ds);

enum class Errc { InvalidImage, NoContrast, EmptyForeground, ZeroVariance };

class AnalysisError : public std::runtime_error {
 public:
  AnalysisError(Errc code, const std::string& detail);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

using Histogram = std::array<std::uint64_t, 256>;

// 16-bit samples are binned by sample >> 8.
int bin_of(std::uint16_t sample, std::uint32_t bits);
Histogram histogram(const Image& img);

double mean_brightness(const Image& img);
double rms_contrast(const Image& img);  // population standard deviation

// k in [0,254] maximizing between-class variance with class0 = bins <= k; ties -> smallest k.
int otsu(const Histogram& hist);

struct BreastMask {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> inside;  // 1 = breast
  std::size_t area = 0;
  // Inclusive bounding box.
  std::uint32_t min_row = 0, max_row = 0, min_col = 0, max_col = 0;

  bool contains(std::uint32_t r, std::uint32_t c) const { return inside[std::size_t{r} * cols + c] != 0; }
  bool operator==(const BreastMask&) const = default;
};

// Largest 4-connected component of the pixels above the Otsu threshold.
BreastMask segment_breast(const Image& img);

double breast_density(const Image& img, const BreastMask& mask);

struct McParams {
  int radius = 4;        // structuring element side = 2r + 1
  double k = 4.0;        // threshold = mean + k * std of the residual inside the mask
  std::size_t area_min = 2;
  std::size_t area_max = 100;
};

struct Centroid {
  double row = 0;
  double col = 0;
  bool operator==(const Centroid&) const = default;
};

struct McDetection {
  std::vector<Centroid> centroids;  // sorted by (row, col)
  std::size_t count = 0;
  McParams params;
};

// Grey-level opening with a square structuring element, borders replicated.
std::vector<std::uint16_t> opening(const Image& img, int radius);

McDetection detect_microcalcs(const Image& img, const BreastMask& mask, const McParams& params = {});

// Linear map so mask pixels reach mean 0.5*maxval and std 0.125*maxval; clamped, rounded
// half-up, same bit depth.
Image standardize(const Image& img, const BreastMask& mask);

struct QcReport {
  double mean_brightness = 0;
  double rms_contrast = 0;
  double breast_density = 0;
  std::int64_t microcalc_count = 0;
  std::vector<Centroid> microcalc_locations;
  bool warning = false;  // segmentation impossible; density and count forced to 0
  std::string warning_reason;
};

QcReport qc_report(const Image& img, const McParams& params = {});

}  // namespace gridbox::analysis

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

#include "gridbox/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace gridbox::analysis {

namespace {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::InvalidImage: return "InvalidImage";
    case Errc::NoContrast: return "NoContrast";
    case Errc::EmptyForeground: return "EmptyForeground";
    case Errc::ZeroVariance: return "ZeroVariance";
  }
  return "AnalysisError";
}

// Sliding min or max along rows then columns with edge replication.
template <typename Pick>
std::vector<std::uint16_t> separable_filter(const std::vector<std::uint16_t>& src,
                                            std::uint32_t rows, std::uint32_t cols, int radius,
                                            Pick pick) {
  std::vector<std::uint16_t> tmp(src.size());
  std::vector<std::uint16_t> out(src.size());
  const long r = radius;
  for (std::uint32_t y = 0; y < rows; ++y) {
    const std::uint16_t* line = src.data() + std::size_t{y} * cols;
    for (long x = 0; x < static_cast<long>(cols); ++x) {
      std::uint16_t v = line[std::clamp(x - r, 0L, static_cast<long>(cols) - 1)];
      for (long d = -r + 1; d <= r; ++d) {
        v = pick(v, line[std::clamp(x + d, 0L, static_cast<long>(cols) - 1)]);
      }
      tmp[std::size_t{y} * cols + static_cast<std::size_t>(x)] = v;
    }
  }
  for (long y = 0; y < static_cast<long>(rows); ++y) {
    for (std::uint32_t x = 0; x < cols; ++x) {
      auto sample = [&](long yy) {
        return tmp[static_cast<std::size_t>(std::clamp(yy, 0L, static_cast<long>(rows) - 1)) * cols + x];
      };
      std::uint16_t v = sample(y - r);
      for (long d = -r + 1; d <= r; ++d) v = pick(v, sample(y + d));
      out[static_cast<std::size_t>(y) * cols + x] = v;
    }
  }
  return out;
}

struct Component {
  std::vector<std::size_t> pixels;
};

// Connected components over `on`, discovered in raster order.
template <typename Visit>
void components(const std::vector<std::uint8_t>& on, std::uint32_t rows, std::uint32_t cols,
                bool eight_connected, Visit visit) {
  std::vector<std::uint8_t> seen(on.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < on.size(); ++start) {
    if (!on[start] || seen[start]) continue;
    Component comp;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      std::size_t p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      long y = static_cast<long>(p / cols);
      long x = static_cast<long>(p % cols);
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (!eight_connected && dy != 0 && dx != 0) continue;
          long ny = y + dy;
          long nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(rows) || nx >= static_cast<long>(cols)) continue;
          std::size_t q = static_cast<std::size_t>(ny) * cols + static_cast<std::size_t>(nx);
          if (on[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    visit(comp);
  }
}

__extension__ typedef unsigned __int128 u128;

double population_std(double sum, double sum_sq, double n) {
  double mean = sum / n;
  double var = sum_sq / n - mean * mean;
  return var > 0 ? std::sqrt(var) : 0.0;
}

}  // namespace

AnalysisError::AnalysisError(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

void Image::validate() const {
  if (bits != 8 && bits != 16) throw AnalysisError(Errc::InvalidImage, "bits must be 8 or 16");
  if (rows < 8 || cols < 8) throw AnalysisError(Errc::InvalidImage, "image must be at least 8x8");
  if (pixels.size() != std::size_t{rows} * cols) {
    throw AnalysisError(Errc::InvalidImage, "pixel count does not match geometry");
  }
  const auto mv = maxval();
  if (std::any_of(pixels.begin(), pixels.end(), [&](std::uint16_t v) { return v > mv; })) {
    throw AnalysisError(Errc::InvalidImage, "sample exceeds maxval");
  }
}

Image image_from_dataset(const dataset::Dataset& ds) {
  using namespace dataset::tags;
  auto rows = ds.get_us(kRows);
  auto cols = ds.get_us(kColumns);
  auto bits = ds.get_us(kBitsAllocated);
  const auto* px = ds.find(kPixelData);
  if (!rows || !cols || !bits || !px) throw AnalysisError(Errc::InvalidImage, "dataset has no image");
  Image img;
  img.rows = *rows;
  img.cols = *cols;
  img.bits = *bits;
  std::size_t n = std::size_t{img.rows} * img.cols;
  img.pixels.resize(n);
  if (img.bits == 8) {
    if (px->value.size() < n) throw AnalysisError(Errc::InvalidImage, "short pixel data");
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = px->value[i];
  } else {
    if (px->value.size() < 2 * n) throw AnalysisError(Errc::InvalidImage, "short pixel data");
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = get_u16le(px->value.data() + 2 * i);
  }
  img.validate();
  return img;
}

void store_in_dataset(const Image& img, dataset::Dataset& ds) {
  using namespace dataset::tags;
  ds.set_us(kRows, static_cast<std::uint16_t>(img.rows));
  ds.set_us(kColumns, static_cast<std::uint16_t>(img.cols));
  ds.set_us(kBitsAllocated, static_cast<std::uint16_t>(img.bits));
  ds.set_us(kBitsStored, static_cast<std::uint16_t>(img.bits));
  Bytes data;
  data.reserve(img.pixels.size() * (img.bits / 8));
  for (auto v : img.pixels) {
    if (img.bits == 8) {
      data.push_back(static_cast<std::uint8_t>(v));
    } else {
      put_u16le(data, v);
    }
  }
  ds.set(kPixelData, std::move(data));
}

int bin_of(std::uint16_t sample, std::uint32_t bits) { return sample >> (bits - 8); }

Histogram histogram(const Image& img) {
  Histogram h{};
  for (auto v : img.pixels) ++h[static_cast<std::size_t>(bin_of(v, img.bits))];
  return h;
}

double mean_brightness(const Image& img) {
  std::uint64_t sum = 0;
  for (auto v : img.pixels) sum += v;
  return static_cast<double>(sum) / static_cast<double>(img.pixels.size());
}

double rms_contrast(const Image& img) {
  // Exact integer moments: N*sum(x^2) - sum(x)^2 = N^2 * variance.
  u128 sum = 0;
  u128 sum_sq = 0;
  for (auto v : img.pixels) {
    sum += v;
    sum_sq += static_cast<std::uint64_t>(v) * v;
  }
  const u128 n = img.pixels.size();
  const u128 scaled = n * sum_sq - sum * sum;
  const double var = static_cast<double>(scaled) / (static_cast<double>(n) * static_cast<double>(n));
  return std::sqrt(var);
}

int otsu(const Histogram& hist) {
  int nonempty = 0;
  std::uint64_t total = 0;
  long double weighted = 0;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    if (hist[i]) ++nonempty;
    total += hist[i];
    weighted += static_cast<long double>(i) * hist[i];
  }
  if (nonempty < 2) throw AnalysisError(Errc::NoContrast, "histogram has a single populated bin");
  const long double n = static_cast<long double>(total);
  std::uint64_t n0 = 0;
  long double s0 = 0;
  long double best = -1;
  int best_k = 0;
  for (int k = 0; k <= 254; ++k) {
    n0 += hist[static_cast<std::size_t>(k)];
    s0 += static_cast<long double>(k) * hist[static_cast<std::size_t>(k)];
    const std::uint64_t n1 = total - n0;
    long double between = 0;
    if (n0 != 0 && n1 != 0) {
      const long double diff = n * s0 - static_cast<long double>(n0) * weighted;
      between = diff * diff / (static_cast<long double>(n0) * static_cast<long double>(n1) * n * n);
    }
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  return best_k;
}

BreastMask segment_breast(const Image& img) {
  const int k = otsu(histogram(img));
  std::vector<std::uint8_t> fg(img.pixels.size());
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = bin_of(img.pixels[i], img.bits) > k;
  std::vector<std::size_t> best;
  components(fg, img.rows, img.cols, false, [&](Component& c) {
    if (c.pixels.size() > best.size()) best = std::move(c.pixels);
  });
  if (best.empty()) throw AnalysisError(Errc::EmptyForeground, "no pixels above threshold");
  BreastMask mask;
  mask.rows = img.rows;
  mask.cols = img.cols;
  mask.inside.assign(img.pixels.size(), 0);
  mask.area = best.size();
  mask.min_row = img.rows;
  mask.min_col = img.cols;
  for (auto p : best) {
    mask.inside[p] = 1;
    auto r = static_cast<std::uint32_t>(p / img.cols);
    auto c = static_cast<std::uint32_t>(p % img.cols);
    mask.min_row = std::min(mask.min_row, r);
    mask.max_row = std::max(mask.max_row, r);
    mask.min_col = std::min(mask.min_col, c);
    mask.max_col = std::max(mask.max_col, c);
  }
  return mask;
}

double breast_density(const Image& img, const BreastMask& mask) {
  Histogram h{};
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (mask.inside[i]) {
      ++h[static_cast<std::size_t>(bin_of(img.pixels[i], img.bits))];
      ++n;
    }
  }
  if (n == 0) throw AnalysisError(Errc::EmptyForeground, "empty mask");
  if (std::count_if(h.begin(), h.end(), [](std::uint64_t c) { return c != 0; }) < 2) return 0.0;
  const int k2 = otsu(h);
  std::uint64_t dense = 0;
  for (std::size_t b = static_cast<std::size_t>(k2) + 1; b < h.size(); ++b) dense += h[b];
  return static_cast<double>(dense) / static_cast<double>(n);
}

std::vector<std::uint16_t> opening(const Image& img, int radius) {
  auto eroded = separable_filter(img.pixels, img.rows, img.cols, radius,
                                 [](std::uint16_t a, std::uint16_t b) { return std::min(a, b); });
  return separable_filter(eroded, img.rows, img.cols, radius,
                          [](std::uint16_t a, std::uint16_t b) { return std::max(a, b); });
}

McDetection detect_microcalcs(const Image& img, const BreastMask& mask, const McParams& params) {
  McDetection det;
  det.params = params;
  const auto opened = opening(img, params.radius);
  std::vector<double> residual(img.pixels.size());
  double sum = 0;
  double sum_sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    residual[i] = static_cast<double>(img.pixels[i]) - static_cast<double>(opened[i]);
    if (mask.inside[i]) {
      sum += residual[i];
      sum_sq += residual[i] * residual[i];
      ++n;
    }
  }
  if (n == 0) throw AnalysisError(Errc::EmptyForeground, "empty mask");
  const double threshold = sum / static_cast<double>(n) +
                           params.k * population_std(sum, sum_sq, static_cast<double>(n));
  std::vector<std::uint8_t> candidate(residual.size());
  for (std::size_t i = 0; i < residual.size(); ++i) {
    candidate[i] = mask.inside[i] && residual[i] > threshold;
  }
  components(candidate, img.rows, img.cols, true, [&](const Component& c) {
    if (c.pixels.size() < params.area_min || c.pixels.size() > params.area_max) return;
    double rs = 0;
    double cs = 0;
    for (auto p : c.pixels) {
      rs += static_cast<double>(p / img.cols);
      cs += static_cast<double>(p % img.cols);
    }
    const double a = static_cast<double>(c.pixels.size());
    det.centroids.push_back(Centroid{rs / a, cs / a});
  });
  std::sort(det.centroids.begin(), det.centroids.end(), [](const Centroid& a, const Centroid& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  det.count = det.centroids.size();
  return det;
}

Image standardize(const Image& img, const BreastMask& mask) {
  double sum = 0;
  double sum_sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (!mask.inside[i]) continue;
    const double v = img.pixels[i];
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  if (n == 0) throw AnalysisError(Errc::EmptyForeground, "empty mask");
  const double sd = population_std(sum, sum_sq, static_cast<double>(n));
  if (sd == 0) throw AnalysisError(Errc::ZeroVariance, "mask pixels are constant");
  const double maxval = img.maxval();
  const double gain = 0.125 * maxval / sd;
  const double offset = 0.5 * maxval - gain * (sum / static_cast<double>(n));
  Image out = img;
  for (auto& v : out.pixels) {
    const double mapped = std::floor(gain * v + offset + 0.5);
    v = static_cast<std::uint16_t>(std::clamp(mapped, 0.0, maxval));
  }
  return out;
}

QcReport qc_report(const Image& img, const McParams& params) {
  QcReport report;
  report.mean_brightness = mean_brightness(img);
  report.rms_contrast = rms_contrast(img);
  try {
    const BreastMask mask = segment_breast(img);
    report.breast_density = breast_density(img, mask);
    auto det = detect_microcalcs(img, mask, params);
    report.microcalc_count = static_cast<std::int64_t>(det.count);
    report.microcalc_locations = std::move(det.centroids);
  } catch (const AnalysisError& e) {
    if (e.code() != Errc::NoContrast && e.code() != Errc::EmptyForeground) throw;
    report.breast_density = 0;
    report.microcalc_count = 0;
    report.microcalc_locations.clear();
    report.warning = true;
    report.warning_reason = e.what();
  }
  return report;
}

}  // namespace gridbox::analysis

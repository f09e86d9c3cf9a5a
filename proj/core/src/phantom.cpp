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

#include "gridbox/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gridbox::simnet {

namespace {

constexpr double kSpotMargin = 12;  // 3 * default detector radius
constexpr double kMinWidth = 9;     // default detector structuring element

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check(bool ok, const char* what) {
  if (!ok) throw BadSpec(what);
}

}  // namespace

PhantomSpec spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  try {
    s.rows = j.value("rows", s.rows);
    s.cols = j.value("cols", s.cols);
    s.bits = j.value("bits", s.bits);
    s.background = j.value("background", s.background);
    s.tissue = j.value("tissue", s.tissue);
    s.dense = j.value("dense", s.dense);
    s.dense_fraction = j.value("dense_fraction", s.dense_fraction);
    s.radius_fraction = j.value("radius_fraction", s.radius_fraction);
    s.noise = j.value("noise", s.noise);
    s.spots = j.value("spots", s.spots);
    s.amplitude_sigmas = j.value("amplitude_sigmas", s.amplitude_sigmas);
    s.seed = j.value("seed", s.seed);
    s.patient_id = j.value("patient_id", s.patient_id);
    s.patient_name = j.value("patient_name", s.patient_name);
    s.study_uid = j.value("study_uid", s.study_uid);
    s.sop_uid = j.value("sop_uid", s.sop_uid);
    s.study_date = j.value("study_date", s.study_date);
    s.sex = j.value("sex", s.sex);
    s.age = j.value("age", s.age);
  } catch (const nlohmann::json::exception& e) {
    throw BadSpec(e.what());
  }
  return s;
}

nlohmann::json to_json(const PhantomTruth& t) {
  auto spots = nlohmann::json::array();
  for (const auto& c : t.spots) spots.push_back({c.row, c.col});
  return {{"mask_area", t.mask_area},
          {"dense_area", t.dense_area},
          {"dense_fraction", t.dense_fraction},
          {"spots", std::move(spots)},
          {"noise_sigma", t.noise_sigma},
          {"spot_amplitude", t.spot_amplitude}};
}

Phantom generate_phantom(const PhantomSpec& s) {
  check(s.rows >= 80 && s.cols >= 80 && s.rows <= 4096 && s.cols <= 4096, "rows and cols must be in [80, 4096]");
  check(s.bits == 8 || s.bits == 16, "bits must be 8 or 16");
  check(s.noise >= 0 && s.noise <= 20, "noise must be in [0, 20]");
  check(s.spots >= 0 && s.spots <= 64, "spots must be in [0, 64]");
  check(s.spots == 0 || s.noise > 0, "spots need noise to define their amplitude");
  check(s.dense_fraction >= 0 && s.dense_fraction <= 1, "dense_fraction must be in [0, 1]");
  check(s.radius_fraction > 0 && s.radius_fraction < 0.5, "radius_fraction must be in (0, 0.5)");
  const double sigma = std::sqrt(s.noise * (s.noise + 1) / 3.0);
  const double amplitude = s.amplitude_sigmas * sigma;
  check(0 <= s.background - s.noise && s.background < s.tissue && s.tissue < s.dense &&
            s.dense + amplitude + s.noise <= 255,
        "levels must satisfy 0 <= background < tissue < dense and leave headroom");

  const std::uint32_t rows = s.rows;
  const std::uint32_t cols = s.cols;
  const double cr = (rows - 1) / 2.0;
  // Every tissue row must be at least one structuring element wide, so shrink the radius
  // until the outermost row is.
  double radius = s.radius_fraction * std::min(rows, cols);
  while (true) {
    const double dy = std::floor(radius - (cr - std::floor(cr))) + (cr - std::floor(cr));
    if (std::floor(std::sqrt(radius * radius - dy * dy)) + 1 >= kMinWidth) break;
    radius = dy - 1e-9;
    check(radius > 32, "tissue region too small");
  }
  auto in_disc = [&](double r, double c) { return (r - cr) * (r - cr) + c * c <= radius * radius; };

  PhantomTruth truth;
  truth.noise_sigma = sigma;
  truth.spot_amplitude = amplitude;
  truth.mask.assign(std::size_t{rows} * cols, 0);
  std::vector<std::size_t> per_col(cols, 0);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      if (in_disc(r, c)) {
        truth.mask[std::size_t{r} * cols + c] = 1;
        ++per_col[c];
        ++truth.mask_area;
      }
    }
  }

  // Dense band = tissue columns < cut, cut chosen closest to the requested fraction.
  std::uint32_t cut = 0;
  {
    double best = s.dense_fraction;
    std::size_t acc = 0;
    for (std::uint32_t c = 0; c < cols && per_col[c] > 0; ++c) {
      acc += per_col[c];
      const double err = std::abs(static_cast<double>(acc) / truth.mask_area - s.dense_fraction);
      if (err < best) {
        best = err;
        cut = c + 1;
      }
    }
    if (cut > 0 && cut < kMinWidth) cut = static_cast<std::uint32_t>(kMinWidth);
    for (std::uint32_t c = 0; c < cut; ++c) truth.dense_area += per_col[c];
    truth.dense_fraction = static_cast<double>(truth.dense_area) / truth.mask_area;
  }

  std::mt19937_64 rng(s.seed);
  for (int attempt = 0; static_cast<int>(truth.spots.size()) < s.spots; ++attempt) {
    check(attempt < 200000, "cannot place the requested spots");
    // early spots can box the rest out; start over
    if (attempt > 0 && attempt % 2000 == 0) truth.spots.clear();
    const double r0 = unit(rng) * rows;
    const double c0 = unit(rng) * cols;
    const double dist = std::sqrt((r0 - cr) * (r0 - cr) + c0 * c0);
    if (radius - dist < kSpotMargin || c0 < kSpotMargin) continue;
    if (r0 < kSpotMargin || r0 > rows - 1 - kSpotMargin || c0 > cols - 1 - kSpotMargin) continue;
    if (cut > 0 && std::abs(c0 - (cut - 0.5)) < 5) continue;
    bool clear = true;
    for (const auto& p : truth.spots) {
      if (std::hypot(p.row - r0, p.col - c0) < kSpotMargin) clear = false;
    }
    if (clear) truth.spots.push_back({r0, c0});
  }

  const double scale = s.bits == 16 ? 257.0 : 1.0;
  const double maxval = s.bits == 16 ? 65535.0 : 255.0;
  analysis::Image img;
  img.rows = rows;
  img.cols = cols;
  img.bits = s.bits;
  img.pixels.resize(std::size_t{rows} * cols);
  const double reach = 6 * s.spot_sigma;
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      const std::size_t i = std::size_t{r} * cols + c;
      double v = !truth.mask[i] ? s.background : c < cut ? s.dense : s.tissue;
      for (const auto& p : truth.spots) {
        const double dr = r - p.row, dc = c - p.col;
        if (std::abs(dr) > reach || std::abs(dc) > reach) continue;
        v += amplitude * std::exp(-(dr * dr + dc * dc) / (2 * s.spot_sigma * s.spot_sigma));
      }
      if (s.noise > 0) v += static_cast<double>(rng() % (2 * static_cast<std::uint64_t>(s.noise) + 1)) - s.noise;
      img.pixels[i] = static_cast<std::uint16_t>(std::clamp(std::floor(v * scale + 0.5), 0.0, maxval));
    }
  }
  std::sort(truth.spots.begin(), truth.spots.end(),
            [](const auto& a, const auto& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });

  Phantom out;
  out.image = img;
  auto& ds = out.dataset;
  const std::string seed = std::to_string(s.seed);
  ds.set_string(dataset::tags::kSopInstanceUid, s.sop_uid.empty() ? "1.2.826.0.1.3680043.10.9.1." + seed : s.sop_uid);
  ds.set_string(dataset::tags::kStudyDate, s.study_date);
  ds.set_string(dataset::tags::kModality, "MG");
  ds.set_string(dataset::tags::kPatientName, s.patient_name.empty() ? "PHANTOM^" + seed : s.patient_name);
  ds.set_string(dataset::tags::kPatientId, s.patient_id.empty() ? "PID-" + seed : s.patient_id);
  ds.set_string(dataset::tags::kPatientBirthDate, "19700101");
  ds.set_string(dataset::tags::kPatientSex, s.sex);
  ds.set_string(dataset::tags::kPatientAge, s.age);
  ds.set_string(dataset::tags::kStudyInstanceUid,
                s.study_uid.empty() ? "1.2.826.0.1.3680043.10.9.2." + seed : s.study_uid);
  analysis::store_in_dataset(img, ds);
  out.mgd = dataset::encode(ds);
  out.truth = std::move(truth);
  return out;
}

}  // namespace gridbox::simnet

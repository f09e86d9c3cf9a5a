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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/analysis.hpp"
#include "gridbox/bytes.hpp"
#include "gridbox/dataset.hpp"

// Synthetic mammograms with exact ground truth.
//
// A half-disc of tissue (value `tissue`) against the left border on a flat background,
// a dense band at the chest wall covering roughly `dense_fraction` of the tissue, bounded
// uniform noise, and k Gaussian spots of sigma 1.5 px. Levels are given on the 8-bit scale
// and rescaled for 16-bit images.
namespace gridbox::simnet {

struct PhantomSpec {
  std::uint32_t rows = 128;
  std::uint32_t cols = 128;
  std::uint32_t bits = 8;
  double background = 20;
  double tissue = 110;
  double dense = 170;
  double dense_fraction = 0.3;
  double radius_fraction = 0.45;  // of min(rows, cols)
  int noise = 3;                  // uniform integer noise in [-noise, noise]
  int spots = 0;
  double spot_sigma = 1.5;
  double amplitude_sigmas = 8;  // spot amplitude in units of the noise std
  std::uint64_t seed = 1;

  // Identity of the generated acquisition.
  std::string patient_id;  // default "PID-<seed>"
  std::string patient_name;
  std::string study_uid;  // default derived from seed
  std::string sop_uid;    // default derived from seed
  std::string study_date = "20260115";
  std::string sex = "F";
  std::string age = "052Y";
};

PhantomSpec spec_from_json(const nlohmann::json& j);

struct BadSpec : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct PhantomTruth {
  std::vector<std::uint8_t> mask;  // tissue pixels, row-major
  std::size_t mask_area = 0;
  std::size_t dense_area = 0;
  double dense_fraction = 0;  // dense_area / mask_area
  std::vector<analysis::Centroid> spots;  // sorted by (row, col)
  double noise_sigma = 0;
  double spot_amplitude = 0;  // 8-bit scale
};

nlohmann::json to_json(const PhantomTruth& t);

struct Phantom {
  analysis::Image image;
  dataset::Dataset dataset;
  Bytes mgd;
  PhantomTruth truth;
};

// Deterministic in the spec. Throws BadSpec.
Phantom generate_phantom(const PhantomSpec& spec);

}  // namespace gridbox::simnet

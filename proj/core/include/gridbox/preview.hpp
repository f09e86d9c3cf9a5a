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

#include "gridbox/analysis.hpp"
#include "gridbox/bytes.hpp"

namespace gridbox::node {

inline constexpr std::uint32_t kPreviewMax = 512;

// Area-average downscale so the larger side is at most 512. 16-bit input is windowed to
// its own min/max.
analysis::Image preview_image(const analysis::Image& img);

// 8-bit grayscale PNG.
Bytes encode_png(const analysis::Image& gray8);

Bytes render_preview(const analysis::Image& img);

}  // namespace gridbox::node

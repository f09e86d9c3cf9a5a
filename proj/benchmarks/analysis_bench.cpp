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

#include <benchmark/benchmark.h>

#include "gridbox/analysis.hpp"
#include "gridbox/phantom.hpp"

namespace {

using namespace gridbox;

analysis::Image image_of(std::int64_t side, std::uint32_t bits = 8) {
  simnet::PhantomSpec s;
  s.rows = s.cols = static_cast<std::uint32_t>(side);
  s.bits = bits;
  s.spots = 4;
  return simnet::generate_phantom(s).image;
}

void BM_Otsu(benchmark::State& state) {
  const auto h = analysis::histogram(image_of(512));
  for (auto _ : state) benchmark::DoNotOptimize(analysis::otsu(h));
}
BENCHMARK(BM_Otsu);

void BM_Segment(benchmark::State& state) {
  const auto img = image_of(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(analysis::segment_breast(img));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * img.size()));
}
BENCHMARK(BM_Segment)->Arg(256)->Arg(1024);

void BM_Opening(benchmark::State& state) {
  const auto img = image_of(512);
  for (auto _ : state) benchmark::DoNotOptimize(analysis::opening(img, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Opening)->Arg(2)->Arg(4)->Arg(8);

void BM_Detect(benchmark::State& state) {
  const auto img = image_of(state.range(0));
  const auto mask = analysis::segment_breast(img);
  for (auto _ : state) benchmark::DoNotOptimize(analysis::detect_microcalcs(img, mask));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * img.size()));
}
BENCHMARK(BM_Detect)->Arg(256)->Arg(1024);

void BM_QcReport(benchmark::State& state) {
  const auto img = image_of(1024, static_cast<std::uint32_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(analysis::qc_report(img));
}
BENCHMARK(BM_QcReport)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

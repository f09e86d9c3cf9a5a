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
#include <filesystem>
#include <optional>
#include <stdexcept>

#include <nlohmann/json.hpp>

// Scripted simnet runs.
//
//   {"name": "...", "topology": {...}, "steps": [{"op": "ingest", ...}, ...]}
//
// ops: ingest, partition, isolate, heal, advance, wait_converged, query, submit_job,
// wait_job, kill, restart, crash_at, flip_frames, store, assert.
namespace gridbox::simnet {

struct BadScenario : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ScenarioOptions {
  std::optional<std::uint64_t> seed;  // overrides topology.seed
  std::filesystem::path root;         // data dirs; temp when empty
};

// The report: {name, seed, passed, steps, assertions, counters, acknowledged, virtual_ms,
// state_digest, wall_ms}. Everything except wall_ms is a function of (scenario, seed).
nlohmann::json run_scenario(const nlohmann::json& scenario, const ScenarioOptions& options = {});

}  // namespace gridbox::simnet

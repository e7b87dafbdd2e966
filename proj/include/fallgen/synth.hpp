// Copyright 2026 The fallgen Authors
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
#include <vector>

#include "fallgen/sequence.hpp"

namespace fallgen {

inline constexpr int kMinPhaseFrames = 4;

/// Procedural stand-in for captured falls. Each attribute drives a distinct,
/// measurable feature of its phase; the full effect table is documented in
/// docs/synthetic_generator.md. Deterministic given `seed`.
MotionSequence synthesize_fall(const AttributeConfig& attrs, const PhaseDurations& durations, double fps,
                               std::uint64_t seed, BodyModel body = BodyModel::Male);

/// Durations drawn uniformly from the desk-scale ranges
/// impact [12, 20], glitch [16, 26], fall [20, 30] frames.
PhaseDurations random_durations(Rng& rng);

struct SynthOptions {
  int count = 200;
  std::uint64_t seed = 0;
  double fps = 30.0;
  BodyModel body = BodyModel::Male;
};

/// Random attributes and durations per sample; sample i depends only on
/// mix_seed(seed, i) so the result is independent of thread scheduling.
std::vector<MotionSequence> synthesize_dataset(const SynthOptions& options);

}  // namespace fallgen

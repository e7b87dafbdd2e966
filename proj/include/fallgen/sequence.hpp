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
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fallgen/attributes.hpp"
#include "fallgen/kinematics.hpp"

namespace fallgen {

inline constexpr int kSequenceSchemaVersion = 1;
inline constexpr int kManifestSchemaVersion = 1;

/// Impact = [0, impact_end), Glitch = [impact_end, glitch_end),
/// Fall = [glitch_end, K).
struct PhaseBoundaries {
  int impact_end = 0;
  int glitch_end = 0;

  bool operator==(const PhaseBoundaries&) const = default;
};

struct PhaseDurations {
  int impact = 0;
  int glitch = 0;
  int fall = 0;

  int total() const { return impact + glitch + fall; }
  int of(Phase phase) const;
  bool operator==(const PhaseDurations&) const = default;
};

struct MotionSequence {
  double fps = 30.0;
  std::vector<Pose> frames;
  PhaseBoundaries boundaries;
  AttributeConfig attributes;

  int frame_count() const { return static_cast<int>(frames.size()); }

  /// Half-open frame range [first, second) of a phase.
  std::pair<int, int> phase_range(Phase phase) const;
  PhaseDurations durations() const;

  /// Throws InvalidSequence unless 0 < M < N < K, fps > 0, every value is
  /// finite and frame 0 sits on the horizontal origin.
  void validate() const;

  bool operator==(const MotionSequence&) const = default;
};

/// Translates every frame horizontally so frame 0's root sits over the
/// world origin. Heights are untouched.
MotionSequence normalize_origin(MotionSequence seq);

/// One frame as {root_pos, root_rot6d, joint_rot6d}. `path` prefixes field
/// names in ParseError messages, e.g. "frames[2].".
nlohmann::ordered_json pose_to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& doc, const std::string& path = "");

nlohmann::ordered_json sequence_to_json(const MotionSequence& seq);
MotionSequence sequence_from_json(const nlohmann::json& doc);

void save_sequence(const MotionSequence& seq, const std::filesystem::path& path);
MotionSequence load_sequence(const std::filesystem::path& path);

/// One file per trial plus manifest.json listing the splits.
struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::uint64_t seed = 0;
  std::vector<std::string> files;
  std::vector<int> train;
  std::vector<int> test;
};

/// Deterministic, disjoint train/test split of [0, count).
std::pair<std::vector<int>, std::vector<int>> split_indices(int count, double test_fraction, std::uint64_t seed);

void write_dataset(const std::filesystem::path& dir, const std::vector<MotionSequence>& sequences,
                   std::uint64_t seed, double test_fraction = 0.2);
/// Same layout with explicit split indices.
void write_dataset(const std::filesystem::path& dir, const std::vector<MotionSequence>& sequences,
                   std::uint64_t seed, const std::vector<int>& train, const std::vector<int>& test);

struct Dataset {
  DatasetManifest manifest;
  std::vector<MotionSequence> sequences;

  std::vector<MotionSequence> subset(const std::vector<int>& indices) const;
  std::vector<MotionSequence> train() const { return subset(manifest.train); }
  std::vector<MotionSequence> test() const { return subset(manifest.test); }
};

/// Loads a dataset directory. A directory without manifest.json is read as
/// every *.json file in name order, all assigned to the test split.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace fallgen

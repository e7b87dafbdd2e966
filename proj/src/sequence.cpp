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

#include "fallgen/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fallgen/error.hpp"

namespace fallgen {

namespace fs = std::filesystem;

namespace {

const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw Error(Errc::ParseError, "missing field '" + path + key + "'");
  }
  return obj.at(key);
}

double require_number(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number()) {
    throw Error(Errc::ParseError, "field '" + path + "' must be a number");
  }
  return v.get<double>();
}

template <std::size_t N>
std::array<double, N> require_array(const nlohmann::json& v, const std::string& path) {
  if (!v.is_array() || v.size() != N) {
    throw Error(Errc::ParseError, "field '" + path + "' must be an array of " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    out[i] = require_number(v[i], path + "[" + std::to_string(i) + "]");
  }
  return out;
}

Rotation6D rot6d_from(const std::array<double, 6>& v) {
  return Rotation6D{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])};
}

nlohmann::ordered_json rot6d_json(const Rotation6D& r) {
  return nlohmann::ordered_json::array({r.a.x(), r.a.y(), r.a.z(), r.b.x(), r.b.y(), r.b.z()});
}

bool finite_pose(const Pose& p) {
  const auto flat = p.flatten();
  return std::all_of(flat.begin(), flat.end(), [](double v) { return std::isfinite(v); });
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::IoError, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(Errc::IoError, "cannot write " + path.string());
  }
  out << text;
  if (!out) {
    throw Error(Errc::IoError, "short write to " + path.string());
  }
}

nlohmann::json parse_with_context(const std::string& text, const fs::path& path) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(Errc::ParseError, path.string() + ":" + std::to_string(line) + ": malformed or truncated JSON (" +
                                      e.what() + ")");
  }
}

}  // namespace

nlohmann::ordered_json pose_to_json(const Pose& p) {
  nlohmann::ordered_json f;
  f["root_pos"] = {p.root_translation.x(), p.root_translation.y(), p.root_translation.z()};
  f["root_rot6d"] = rot6d_json(p.root_rotation);
  auto joints = nlohmann::ordered_json::array();
  for (const auto& r : p.joint_rotations) {
    joints.push_back(rot6d_json(r));
  }
  f["joint_rot6d"] = std::move(joints);
  return f;
}

Pose pose_from_json(const nlohmann::json& f, const std::string& path) {
  Pose p;
  const auto pos = require_array<3>(require(f, "root_pos", path), path + "root_pos");
  p.root_translation = Vec3(pos[0], pos[1], pos[2]);
  p.root_rotation = rot6d_from(require_array<6>(require(f, "root_rot6d", path), path + "root_rot6d"));
  const auto& joints = require(f, "joint_rot6d", path);
  if (!joints.is_array() || joints.size() != static_cast<std::size_t>(kNumJoints)) {
    throw Error(Errc::ParseError, "field '" + path + "joint_rot6d' must hold 24 rotations");
  }
  for (int j = 0; j < kNumJoints; ++j) {
    p.joint_rotations[j] = rot6d_from(require_array<6>(joints[j], path + "joint_rot6d[" + std::to_string(j) + "]"));
  }
  return p;
}

int PhaseDurations::of(Phase phase) const {
  switch (phase) {
    case Phase::Impact: return impact;
    case Phase::Glitch: return glitch;
    case Phase::Fall: return fall;
  }
  return 0;
}

std::pair<int, int> MotionSequence::phase_range(Phase phase) const {
  switch (phase) {
    case Phase::Impact: return {0, boundaries.impact_end};
    case Phase::Glitch: return {boundaries.impact_end, boundaries.glitch_end};
    case Phase::Fall: return {boundaries.glitch_end, frame_count()};
  }
  return {0, 0};
}

PhaseDurations MotionSequence::durations() const {
  return {boundaries.impact_end, boundaries.glitch_end - boundaries.impact_end, frame_count() - boundaries.glitch_end};
}

void MotionSequence::validate() const {
  const int k = frame_count();
  const int m = boundaries.impact_end;
  const int n = boundaries.glitch_end;
  if (!(0 < m && m < n && n < k)) {
    throw Error(Errc::InvalidSequence, "phase boundaries must satisfy 0 < M < N < K (M=" + std::to_string(m) +
                                           ", N=" + std::to_string(n) + ", K=" + std::to_string(k) + ")");
  }
  if (!(fps > 0.0) || !std::isfinite(fps)) {
    throw Error(Errc::InvalidSequence, "fps must be positive");
  }
  for (int f = 0; f < k; ++f) {
    if (!finite_pose(frames[f])) {
      throw Error(Errc::InvalidSequence, "frame " + std::to_string(f) + " has non-finite values");
    }
  }
  const Vec3& p0 = frames.front().root_translation;
  if (std::abs(p0.x()) > 1e-9 || std::abs(p0.z()) > 1e-9) {
    throw Error(Errc::InvalidSequence, "frame 0 root is not on the horizontal origin");
  }
}

MotionSequence normalize_origin(MotionSequence seq) {
  if (seq.frames.empty()) {
    throw Error(Errc::EmptySequence, "cannot normalize an empty sequence");
  }
  const double dx = seq.frames.front().root_translation.x();
  const double dz = seq.frames.front().root_translation.z();
  for (auto& f : seq.frames) {
    f.root_translation.x() -= dx;
    f.root_translation.z() -= dz;
  }
  return seq;
}

nlohmann::ordered_json sequence_to_json(const MotionSequence& seq) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kSequenceSchemaVersion;
  doc["fps"] = seq.fps;
  nlohmann::ordered_json attrs;
  for (auto slot : kAttributeSlots) {
    attrs[std::string(slot_field_name(slot))] = seq.attributes.id(slot);
  }
  doc["attributes"] = std::move(attrs);
  doc["boundaries"] = {{"impact_end", seq.boundaries.impact_end}, {"glitch_end", seq.boundaries.glitch_end}};
  auto frames = nlohmann::ordered_json::array();
  for (const auto& p : seq.frames) {
    frames.push_back(pose_to_json(p));
  }
  doc["frames"] = std::move(frames);
  return doc;
}

MotionSequence sequence_from_json(const nlohmann::json& doc) {
  const auto& version = require(doc, "schema_version", "");
  if (!version.is_number_integer() || version.get<int>() != kSequenceSchemaVersion) {
    throw Error(Errc::SchemaVersionMismatch,
                "expected schema_version " + std::to_string(kSequenceSchemaVersion) + ", got " + version.dump());
  }
  MotionSequence seq;
  seq.fps = require_number(require(doc, "fps", ""), "fps");

  const auto& attrs = require(doc, "attributes", "");
  for (auto slot : kAttributeSlots) {
    const std::string field(slot_field_name(slot));
    const auto& v = require(attrs, field.c_str(), "attributes.");
    if (!v.is_string()) {
      throw Error(Errc::ParseError, "field 'attributes." + field + "' must be a string");
    }
    try {
      seq.attributes.set(slot, parse_label(slot, v.get<std::string>()));
    } catch (const Error& e) {
      throw Error(Errc::ParseError, e.what());
    }
  }

  const auto& bounds = require(doc, "boundaries", "");
  const auto& m = require(bounds, "impact_end", "boundaries.");
  const auto& n = require(bounds, "glitch_end", "boundaries.");
  if (!m.is_number_integer() || !n.is_number_integer()) {
    throw Error(Errc::ParseError, "boundaries must be integers");
  }
  seq.boundaries = {m.get<int>(), n.get<int>()};

  const auto& frames = require(doc, "frames", "");
  if (!frames.is_array()) {
    throw Error(Errc::ParseError, "field 'frames' must be an array");
  }
  seq.frames.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    seq.frames.push_back(pose_from_json(frames[i], "frames[" + std::to_string(i) + "]."));
  }
  seq.validate();
  return seq;
}

void save_sequence(const MotionSequence& seq, const fs::path& path) {
  seq.validate();
  write_file(path, sequence_to_json(seq).dump() + "\n");
}

MotionSequence load_sequence(const fs::path& path) {
  const std::string text = read_file(path);
  const auto doc = parse_with_context(text, path);
  try {
    return sequence_from_json(doc);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int count, double test_fraction, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[i] = i;
  Rng rng = make_rng(seed, 0x5911);
  // Fisher-Yates with the portable integer draw.
  for (int i = count - 1; i > 0; --i) {
    std::swap(order[i], order[uniform_int(rng, 0, i)]);
  }
  const int n_test = std::clamp(static_cast<int>(std::lround(test_fraction * count)), count > 1 ? 1 : 0,
                                std::max(count - 1, 0));
  std::vector<int> test(order.begin(), order.begin() + n_test);
  std::vector<int> train(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

void write_dataset(const fs::path& dir, const std::vector<MotionSequence>& sequences, std::uint64_t seed,
                   double test_fraction) {
  const auto [train, test] = split_indices(static_cast<int>(sequences.size()), test_fraction, seed);
  write_dataset(dir, sequences, seed, train, test);
}

void write_dataset(const fs::path& dir, const std::vector<MotionSequence>& sequences, std::uint64_t seed,
                   const std::vector<int>& train, const std::vector<int>& test) {
  const int count = static_cast<int>(sequences.size());
  for (const auto* split : {&train, &test}) {
    for (int i : *split) {
      if (i < 0 || i >= count) {
        throw Error(Errc::InvalidConfig, "split index " + std::to_string(i) + " outside 0.." + std::to_string(count - 1));
      }
    }
  }
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["schema_version"] = kManifestSchemaVersion;
  manifest["seed"] = seed;
  manifest["count"] = sequences.size();
  auto files = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    std::ostringstream name;
    name << "trial_" << std::setw(4) << std::setfill('0') << i << ".json";
    save_sequence(sequences[i], dir / name.str());
    files.push_back(name.str());
  }
  manifest["files"] = std::move(files);
  manifest["splits"] = {{"train", train}, {"test", test}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<MotionSequence> Dataset::subset(const std::vector<int>& indices) const {
  std::vector<MotionSequence> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(sequences.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw Error(Errc::IoError, dir.string() + " is not a directory");
  }
  Dataset ds;
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    const auto doc = parse_with_context(read_file(manifest_path), manifest_path);
    const auto& version = require(doc, "schema_version", "");
    if (!version.is_number_integer() || version.get<int>() != kManifestSchemaVersion) {
      throw Error(Errc::SchemaVersionMismatch, "manifest schema_version " + version.dump());
    }
    ds.manifest.seed = require(doc, "seed", "").get<std::uint64_t>();
    ds.manifest.files = require(doc, "files", "").get<std::vector<std::string>>();
    const auto& splits = require(doc, "splits", "");
    ds.manifest.train = require(splits, "train", "splits.").get<std::vector<int>>();
    ds.manifest.test = require(splits, "test", "splits.").get<std::vector<int>>();
  } else {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        ds.manifest.files.push_back(entry.path().filename().string());
      }
    }
    std::sort(ds.manifest.files.begin(), ds.manifest.files.end());
    for (int i = 0; i < static_cast<int>(ds.manifest.files.size()); ++i) ds.manifest.test.push_back(i);
  }
  for (const auto& f : ds.manifest.files) {
    ds.sequences.push_back(load_sequence(dir / f));
  }
  const int n = static_cast<int>(ds.sequences.size());
  for (const auto* split : {&ds.manifest.train, &ds.manifest.test}) {
    for (int i : *split) {
      if (i < 0 || i >= n) throw Error(Errc::ParseError, "manifest split index out of range");
    }
  }
  return ds;
}

}  // namespace fallgen

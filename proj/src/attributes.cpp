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

#include "fallgen/attributes.hpp"

#include "fallgen/error.hpp"

namespace fallgen {

namespace {

constexpr std::array<VocabEntry, 4> kLocations{{
    {"head", "Head"},
    {"torso", "Torso"},
    {"arms", "Arms"},
    {"legs", "Legs"},
}};

constexpr std::array<VocabEntry, 5> kImpactQualities{{
    {"push", "Push"},
    {"prick", "Prick"},
    {"shot", "Shot"},
    {"contraction", "Contraction"},
    {"explosion", "Explosion"},
}};

constexpr std::array<VocabEntry, 8> kGlitchQualities{{
    {"shake", "Shake"},
    {"flail", "Flail"},
    {"flash", "Flash"},
    {"stutter", "Stutter"},
    {"contort", "Contort"},
    {"stumble", "Stumble"},
    {"spin", "Spin"},
    {"freeze", "Freeze"},
}};

constexpr std::array<VocabEntry, 5> kFallQualities{{
    {"release", "Release"},
    {"let_go", "Let Go"},
    {"hinge", "Hinge"},
    {"surrender", "Surrender"},
    {"suspend", "Suspend"},
}};

}  // namespace

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::Impact: return "impact";
    case Phase::Glitch: return "glitch";
    case Phase::Fall: return "fall";
  }
  return "";
}

std::span<const VocabEntry> vocabulary(AttributeSlot slot) {
  switch (slot) {
    case AttributeSlot::ImpactLocation: return kLocations;
    case AttributeSlot::ImpactQuality: return kImpactQualities;
    case AttributeSlot::GlitchQuality: return kGlitchQualities;
    case AttributeSlot::FallQuality: return kFallQualities;
  }
  return {};
}

std::string_view slot_field_name(AttributeSlot slot) {
  switch (slot) {
    case AttributeSlot::ImpactLocation: return "impact_location";
    case AttributeSlot::ImpactQuality: return "impact_quality";
    case AttributeSlot::GlitchQuality: return "glitch_quality";
    case AttributeSlot::FallQuality: return "fall_quality";
  }
  return "";
}

int vocabulary_size(AttributeSlot slot) { return static_cast<int>(vocabulary(slot).size()); }

int parse_label(AttributeSlot slot, std::string_view id) {
  const auto vocab = vocabulary(slot);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i].id == id) {
      return static_cast<int>(i);
    }
  }
  std::string allowed;
  for (const auto& v : vocab) {
    if (!allowed.empty()) allowed += ", ";
    allowed += v.id;
  }
  throw Error(Errc::UnknownLabel, std::string(slot_field_name(slot)) + ": '" + std::string(id) +
                                      "' is not one of [" + allowed + "]");
}

int AttributeConfig::index(AttributeSlot slot) const {
  switch (slot) {
    case AttributeSlot::ImpactLocation: return static_cast<int>(impact_location);
    case AttributeSlot::ImpactQuality: return static_cast<int>(impact_quality);
    case AttributeSlot::GlitchQuality: return static_cast<int>(glitch_quality);
    case AttributeSlot::FallQuality: return static_cast<int>(fall_quality);
  }
  return -1;
}

void AttributeConfig::set(AttributeSlot slot, int value) {
  if (value < 0 || value >= vocabulary_size(slot)) {
    throw Error(Errc::UnknownLabel, std::string(slot_field_name(slot)) + ": index " + std::to_string(value) +
                                        " out of range");
  }
  switch (slot) {
    case AttributeSlot::ImpactLocation: impact_location = static_cast<ImpactLocation>(value); break;
    case AttributeSlot::ImpactQuality: impact_quality = static_cast<ImpactQuality>(value); break;
    case AttributeSlot::GlitchQuality: glitch_quality = static_cast<GlitchQuality>(value); break;
    case AttributeSlot::FallQuality: fall_quality = static_cast<FallQuality>(value); break;
  }
}

std::string_view AttributeConfig::id(AttributeSlot slot) const { return vocabulary(slot)[index(slot)].id; }

AttributeConfig random_attributes(Rng& rng) {
  AttributeConfig a;
  for (auto slot : kAttributeSlots) {
    a.set(slot, uniform_int(rng, 0, vocabulary_size(slot) - 1));
  }
  return a;
}

std::string to_string(const AttributeConfig& a) {
  std::string s;
  for (auto slot : kAttributeSlots) {
    if (!s.empty()) s += '/';
    s += a.id(slot);
  }
  return s;
}

}  // namespace fallgen

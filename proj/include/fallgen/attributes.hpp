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

#include <array>
#include <span>
#include <string>
#include <string_view>

#include "fallgen/rng.hpp"

namespace fallgen {

enum class Phase { Impact = 0, Glitch = 1, Fall = 2 };
inline constexpr std::array<Phase, 3> kPhases{Phase::Impact, Phase::Glitch, Phase::Fall};
std::string_view phase_name(Phase phase);

enum class ImpactLocation { Head, Torso, Arms, Legs };
enum class ImpactQuality { Push, Prick, Shot, Contraction, Explosion };
enum class GlitchQuality { Shake, Flail, Flash, Stutter, Contort, Stumble, Spin, Freeze };
enum class FallQuality { Release, LetGo, Hinge, Surrender, Suspend };

/// The four conditioning slots, in the order the interface presents them.
enum class AttributeSlot { ImpactLocation, ImpactQuality, GlitchQuality, FallQuality };
inline constexpr std::array<AttributeSlot, 4> kAttributeSlots{AttributeSlot::ImpactLocation, AttributeSlot::ImpactQuality,
                                                              AttributeSlot::GlitchQuality, AttributeSlot::FallQuality};

struct VocabEntry {
  std::string_view id;
  std::string_view display;
};

std::span<const VocabEntry> vocabulary(AttributeSlot slot);
std::string_view slot_field_name(AttributeSlot slot);  // e.g. "impact_location"
int vocabulary_size(AttributeSlot slot);

/// Looks up an id in a closed vocabulary; throws UnknownLabel naming the
/// field and the allowed values.
int parse_label(AttributeSlot slot, std::string_view id);

struct AttributeConfig {
  ImpactLocation impact_location = ImpactLocation::Torso;
  ImpactQuality impact_quality = ImpactQuality::Push;
  GlitchQuality glitch_quality = GlitchQuality::Shake;
  FallQuality fall_quality = FallQuality::Release;

  int index(AttributeSlot slot) const;
  void set(AttributeSlot slot, int value);
  std::string_view id(AttributeSlot slot) const;

  bool operator==(const AttributeConfig&) const = default;
};

inline constexpr int kImpactClasses = 4 * 5;
inline constexpr int kGlitchClasses = 8;
inline constexpr int kFallClasses = 5;

/// Joint (location, quality) class used by the Impact recognition head.
inline int impact_class(const AttributeConfig& a) {
  return static_cast<int>(a.impact_location) * 5 + static_cast<int>(a.impact_quality);
}

AttributeConfig random_attributes(Rng& rng);

std::string to_string(const AttributeConfig& a);

}  // namespace fallgen

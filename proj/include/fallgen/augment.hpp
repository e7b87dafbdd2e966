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
#include <span>

#include "fallgen/rng.hpp"
#include "fallgen/sequence.hpp"

namespace fallgen {

struct FftJitter {
  double magnitude_jitter = 0.1;  // alpha in [0, 1): gains ~ U[1-alpha, 1+alpha]
  double phase_jitter = 0.3;      // beta in [0, pi): shifts ~ U[-beta, beta]
  int protected_bins = 2;         // bins below this index pass through untouched

  void validate() const;  // throws InvalidJitterRange
};

/// Frames blended on each side of a phase boundary after per-segment jitter.
inline constexpr int kCrossfadeFrames = 3;

/// Spectral kernel for one scalar channel: real FFT, random gain and phase
/// shift on every bin at index >= protected_bins, inverse FFT. In place.
/// Draws two uniforms per perturbed bin from `rng`, in bin order.
void jitter_spectrum(std::span<double> channel, const FftJitter& jitter, Rng& rng);

/// Frequency-domain augmentation. Each phase segment of each flattened pose
/// channel is jittered independently, the perturbation is crossfaded across
/// phase boundaries, rotations are projected back onto SO(3) and the origin
/// is re-normalized. K, boundaries, fps and attributes are preserved.
MotionSequence augment_fft(const MotionSequence& seq, const FftJitter& jitter, std::uint64_t seed);

/// Rotates the whole sequence about the world vertical through the origin.
MotionSequence rotate_yaw(const MotionSequence& seq, double theta);

/// The yaw angle `augment_yaw` draws for a seed, uniform in [0, 2 pi).
double draw_yaw(std::uint64_t seed);

MotionSequence augment_yaw(const MotionSequence& seq, std::uint64_t seed);

}  // namespace fallgen

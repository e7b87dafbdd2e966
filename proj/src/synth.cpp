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

#include "fallgen/synth.hpp"
#include "fallgen/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fallgen/error.hpp"

namespace fallgen {

namespace {

constexpr double kPi = std::numbers::pi;

// SMPL joint ids used by the generator.
enum Joint : int {
  kPelvis = 0, kLHip = 1, kRHip = 2, kSpine1 = 3, kLKnee = 4, kRKnee = 5, kSpine2 = 6, kLAnkle = 7, kRAnkle = 8,
  kSpine3 = 9, kLFoot = 10, kRFoot = 11, kNeck = 12, kLCollar = 13, kRCollar = 14, kHead = 15, kLShoulder = 16,
  kRShoulder = 17, kLElbow = 18, kRElbow = 19, kLWrist = 20, kRWrist = 21, kLHand = 22, kRHand = 23,
};

constexpr std::array<int, 5> kSpineChain{kSpine1, kSpine2, kSpine3, kNeck, kHead};

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// One additive motion layer.
struct Layer {
  std::array<Vec3, kNumJoints> aa{};  // axis-angle offsets per joint
  Vec3 disp = Vec3::Zero();           // horizontal displacement in the initial heading frame
  double height = 0.0;
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  Layer() { aa.fill(Vec3::Zero()); }
};

// Sample-level random parameters, all drawn before the frame loop.
struct Params {
  double impact_amp, glitch_amp, fall_amp;
  double freq;
  double side;       // +1 left, -1 right for lateral effects
  double spin_turns;  // signed
  double heading0;
  double end_height;
  std::array<double, kNumJoints> phase_a, phase_b;
};

Params draw_params(Rng& rng) {
  Params p{};
  p.impact_amp = uniform(rng, 0.85, 1.15);
  p.glitch_amp = uniform(rng, 0.85, 1.15);
  p.fall_amp = uniform(rng, 0.9, 1.1);
  p.freq = uniform(rng, 0.9, 1.1);
  p.side = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : -1.0;
  p.spin_turns = 1.25 * uniform(rng, 0.9, 1.1) * (uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : -1.0);
  p.heading0 = uniform(rng, -0.25, 0.25);
  p.end_height = uniform(rng, 0.11, 0.15);
  for (int j = 0; j < kNumJoints; ++j) {
    p.phase_a[j] = uniform(rng, 0.0, 2.0 * kPi);
    p.phase_b[j] = uniform(rng, 0.0, 2.0 * kPi);
  }
  return p;
}

Layer impact_layer(const AttributeConfig& attrs, const Params& prm, double u) {
  Layer l;
  double env = 0.0;
  double amp = 0.0;
  switch (attrs.impact_quality) {
    case ImpactQuality::Push:
      env = smoothstep(0.0, 0.45, u);
      amp = 0.7;
      break;
    case ImpactQuality::Prick:
      env = std::exp(-std::pow((u - 0.35) / 0.06, 2));
      amp = 0.4;
      break;
    case ImpactQuality::Shot:
      env = u < 0.2 ? 0.0 : std::exp(-(u - 0.2) / 0.15);
      amp = 1.1;
      break;
    case ImpactQuality::Contraction:
      env = smoothstep(0.1, 0.8, u);
      amp = 0.9;
      break;
    case ImpactQuality::Explosion:
      env = (1.0 - std::exp(-u / 0.06)) * (1.0 - 0.4 * smoothstep(0.4, 1.0, u));
      amp = 0.9;
      break;
  }
  const double a = amp * env * prm.impact_amp;
  // Contraction curls inward; every other quality drives the site outward.
  const double s = attrs.impact_quality == ImpactQuality::Contraction ? -1.0 : 1.0;
  const double side = prm.side;
  const int shoulder = side > 0 ? kLShoulder : kRShoulder;
  const int elbow = side > 0 ? kLElbow : kRElbow;
  const int collar = side > 0 ? kLCollar : kRCollar;
  const int hip = side > 0 ? kLHip : kRHip;
  const int knee = side > 0 ? kLKnee : kRKnee;

  switch (attrs.impact_location) {
    case ImpactLocation::Head:
      l.aa[kNeck] += s * a * Vec3(-0.6, 0.0, 0.2 * side);
      l.aa[kHead] += s * a * Vec3(-0.8, 0.0, 0.0);
      break;
    case ImpactLocation::Torso:
      l.aa[kSpine1] += s * a * Vec3(-0.4, 0.0, 0.0);
      l.aa[kSpine2] += s * a * Vec3(-0.6, 0.0, 0.15 * side);
      l.aa[kSpine3] += s * a * Vec3(-0.6, 0.0, 0.0);
      break;
    case ImpactLocation::Arms:
      l.aa[shoulder] += a * Vec3(0.0, 0.3 * side, s * 1.2 * side);
      l.aa[elbow] += a * Vec3(0.0, -1.0 * side, 0.0);
      l.aa[collar] += s * a * Vec3(0.0, 0.0, 0.3 * side);
      break;
    case ImpactLocation::Legs:
      l.aa[hip] += a * Vec3(s * 0.8, 0.0, 0.3 * side);
      l.aa[knee] += a * Vec3(1.0, 0.0, 0.0);
      l.height -= 0.08 * a;
      l.roll += 0.15 * side * a;
      break;
  }

  switch (attrs.impact_quality) {
    case ImpactQuality::Push:
      l.disp.z() -= 0.3 * a;
      break;
    case ImpactQuality::Shot:
      l.disp.z() -= 0.12 * a;
      l.pitch -= 0.15 * a;
      break;
    case ImpactQuality::Contraction:
      l.height -= 0.12 * a;
      l.pitch += 0.25 * a;
      break;
    case ImpactQuality::Explosion:
      l.aa[kLShoulder] += a * Vec3(0.0, 0.0, 0.8);
      l.aa[kRShoulder] += a * Vec3(0.0, 0.0, -0.8);
      l.aa[kLHip] += a * Vec3(0.0, 0.0, 0.3);
      l.aa[kRHip] += a * Vec3(0.0, 0.0, -0.3);
      l.aa[kHead] += a * Vec3(-0.4, 0.0, 0.0);
      l.aa[kSpine3] += a * Vec3(-0.3, 0.0, 0.0);
      l.height += 0.05 * a;
      break;
    case ImpactQuality::Prick:
      break;
  }
  return l;
}

Layer glitch_layer(GlitchQuality q, const Params& prm, double u, double tau) {
  Layer l;
  const double amp = prm.glitch_amp;
  const double f = prm.freq;
  switch (q) {
    case GlitchQuality::Shake:
      for (int j : {kSpine1, kSpine2, kSpine3, kNeck, kHead, kLCollar, kRCollar, kLShoulder, kRShoulder, kLElbow,
                    kRElbow}) {
        l.aa[j] += 0.13 * amp *
                   Vec3(std::sin(2 * kPi * 9.0 * f * tau + prm.phase_a[j]), std::sin(2 * kPi * 7.0 * f * tau + prm.phase_b[j]),
                        0.0);
      }
      l.disp.x() += 0.012 * std::sin(2 * kPi * 11.0 * f * tau);
      break;
    case GlitchQuality::Flail:
      l.aa[kLShoulder] += amp * Vec3(0.9 * std::sin(2 * kPi * 1.7 * f * tau + prm.phase_a[kLShoulder]), 0.0,
                                     1.1 * std::sin(2 * kPi * 1.3 * f * tau + prm.phase_b[kLShoulder]) + 0.6);
      l.aa[kRShoulder] += amp * Vec3(0.9 * std::sin(2 * kPi * 1.9 * f * tau + prm.phase_a[kRShoulder]), 0.0,
                                     -1.1 * std::sin(2 * kPi * 1.4 * f * tau + prm.phase_b[kRShoulder]) - 0.6);
      l.aa[kLElbow] += amp * Vec3(0.0, -0.9 * std::abs(std::sin(2 * kPi * 2.0 * f * tau)), 0.0);
      l.aa[kRElbow] += amp * Vec3(0.0, 0.9 * std::abs(std::sin(2 * kPi * 2.2 * f * tau)), 0.0);
      l.aa[kSpine2] += amp * Vec3(0.0, 0.25 * std::sin(2 * kPi * 1.5 * f * tau), 0.0);
      break;
    case GlitchQuality::Flash: {
      const double e = amp * std::exp(-std::pow((u - 0.5) / 0.12, 2));
      l.aa[kLShoulder] += e * Vec3(0.0, 0.0, 1.4);
      l.aa[kRShoulder] += e * Vec3(0.0, 0.0, -1.4);
      l.aa[kLHip] += e * Vec3(0.0, 0.0, 0.4);
      l.aa[kRHip] += e * Vec3(0.0, 0.0, -0.4);
      l.aa[kHead] += e * Vec3(-0.5, 0.0, 0.0);
      l.aa[kSpine3] += e * Vec3(-0.3, 0.0, 0.0);
      break;
    }
    case GlitchQuality::Stutter: {
      const double steps = 5.0;
      const double cycle = u * steps;
      const double frac = cycle - std::floor(cycle);
      const double progress = (std::floor(cycle) + smoothstep(0.0, 0.25, frac)) / steps;
      l.disp.z() += 0.45 * amp * progress;
      const double jerk = std::exp(-frac / 0.08);
      l.aa[kSpine2] += amp * Vec3(0.35 * jerk, 0.0, 0.0);
      l.aa[kHead] += amp * Vec3(0.3 * jerk, 0.0, 0.0);
      const double parity = static_cast<int>(std::floor(cycle)) % 2 == 0 ? 1.0 : -1.0;
      l.aa[kLHip] += amp * Vec3(-0.35 * parity * jerk, 0.0, 0.0);
      l.aa[kRHip] += amp * Vec3(0.35 * parity * jerk, 0.0, 0.0);
      break;
    }
    case GlitchQuality::Contort: {
      const double e = amp * smoothstep(0.0, 0.6, u) * prm.side;
      for (int j : {kSpine1, kSpine2, kSpine3}) l.aa[j] += e * Vec3(0.0, 0.5, 0.25);
      l.aa[kNeck] += e * Vec3(0.0, 0.4, 0.0);
      l.aa[kLShoulder] += e * Vec3(0.0, -0.5, 0.0);
      l.aa[kRShoulder] += e * Vec3(0.0, -0.5, 0.0);
      l.aa[kLHip] += e * Vec3(0.0, 0.3, 0.0);
      l.aa[kRHip] += e * Vec3(0.0, 0.3, 0.0);
      break;
    }
    case GlitchQuality::Stumble: {
      l.disp.z() += 0.7 * amp * (u + 0.08 * std::sin(2 * kPi * 2.5 * u));
      l.pitch += amp * (0.3 * std::sin(kPi * u) + 0.15 * std::sin(2 * kPi * 3.0 * u));
      const double step = std::sin(2 * kPi * 2.0 * f * tau);
      l.aa[kLHip] += amp * Vec3(-0.7 * step, 0.0, 0.0);
      l.aa[kRHip] += amp * Vec3(0.7 * step, 0.0, 0.0);
      l.aa[kLKnee] += amp * Vec3(0.6 * std::max(step, 0.0), 0.0, 0.0);
      l.aa[kRKnee] += amp * Vec3(0.6 * std::max(-step, 0.0), 0.0, 0.0);
      l.aa[kLShoulder] += amp * Vec3(0.0, 0.0, 0.6 * std::sin(kPi * u));
      l.aa[kRShoulder] += amp * Vec3(0.0, 0.0, -0.6 * std::sin(kPi * u));
      break;
    }
    case GlitchQuality::Spin: {
      l.yaw += 2.0 * kPi * prm.spin_turns * smoothstep(0.0, 1.0, u);
      const double out = 0.5 * amp * std::sin(kPi * u);
      l.aa[kLShoulder] += Vec3(0.0, 0.0, out);
      l.aa[kRShoulder] += Vec3(0.0, 0.0, -out);
      break;
    }
    case GlitchQuality::Freeze:
      break;
  }
  return l;
}

// `carried` is the pose offset inherited from the earlier phases; the fall
// layer may attenuate it (hinge keeps the spine rigid).
Layer fall_layer(FallQuality q, const Params& prm, double u, double h_start, double& carried_spine_gain) {
  Layer l;
  const double a = prm.fall_amp;
  const double h_end = prm.end_height;
  carried_spine_gain = 1.0;
  switch (q) {
    case FallQuality::Release: {
      l.height = lerp(h_start, h_end, smoothstep(0.0, 0.8, u));
      l.pitch += 1.35 * a * smoothstep(0.35, 1.0, u);
      const double buckle = smoothstep(0.0, 0.5, u);
      l.aa[kLKnee] += a * Vec3(1.6 * buckle, 0.0, 0.0);
      l.aa[kRKnee] += a * Vec3(1.6 * buckle, 0.0, 0.0);
      l.aa[kLHip] += a * Vec3(-1.0 * smoothstep(0.0, 0.6, u), 0.0, 0.0);
      l.aa[kRHip] += a * Vec3(-1.0 * smoothstep(0.0, 0.6, u), 0.0, 0.0);
      for (int j : {kSpine1, kSpine2, kSpine3}) l.aa[j] += a * Vec3(0.35 * buckle, 0.0, 0.0);
      l.aa[kHead] += a * Vec3(0.5 * buckle, 0.0, 0.0);
      l.disp.z() += 0.35 * smoothstep(0.35, 1.0, u);
      break;
    }
    case FallQuality::LetGo: {
      const double drop = std::min(1.0, std::pow(u / 0.45, 2));
      l.height = lerp(h_start, h_end, drop);
      l.pitch -= 1.45 * a * smoothstep(0.1, 0.7, u);
      const double fly = smoothstep(0.0, 0.4, u);
      l.aa[kLShoulder] += a * Vec3(0.0, 0.0, 1.2 * fly);
      l.aa[kRShoulder] += a * Vec3(0.0, 0.0, -1.2 * fly);
      l.aa[kLHip] += a * Vec3(0.0, 0.0, 0.35 * fly);
      l.aa[kRHip] += a * Vec3(0.0, 0.0, -0.35 * fly);
      l.disp.z() -= 0.4 * drop;
      break;
    }
    case FallQuality::Hinge: {
      l.height = lerp(h_start, h_end, u);
      l.pitch -= 1.5 * a * u;
      const double bend = smoothstep(0.0, 0.7, u);
      l.aa[kLKnee] += a * Vec3(1.5 * bend, 0.0, 0.0);
      l.aa[kRKnee] += a * Vec3(1.5 * bend, 0.0, 0.0);
      l.disp.z() -= 0.5 * u;
      carried_spine_gain = 1.0 - smoothstep(0.0, 0.15, u);
      break;
    }
    case FallQuality::Surrender: {
      const double kneel = smoothstep(0.0, 0.45, u);
      const double slump = smoothstep(0.5, 1.0, u);
      l.height = lerp(lerp(h_start, 0.55 * h_start, kneel), h_end, slump);
      l.aa[kLKnee] += a * Vec3(1.7 * kneel, 0.0, 0.0);
      l.aa[kRKnee] += a * Vec3(1.7 * kneel, 0.0, 0.0);
      l.aa[kLHip] += a * Vec3(-0.2 * kneel, 0.0, 0.0);
      l.aa[kRHip] += a * Vec3(-0.2 * kneel, 0.0, 0.0);
      l.aa[kLShoulder] += a * Vec3(0.0, 0.0, 2.2 * kneel * (1.0 - 0.5 * slump));
      l.aa[kRShoulder] += a * Vec3(0.0, 0.0, -2.2 * kneel * (1.0 - 0.5 * slump));
      l.aa[kHead] += a * Vec3(0.4 * kneel, 0.0, 0.0);
      l.roll += 1.4 * a * prm.side * slump;
      l.pitch += 0.4 * a * slump;
      break;
    }
    case FallQuality::Suspend: {
      const double prof = smoothstep(0.0, 1.0, u);
      l.height = lerp(h_start, h_end, prof) + 0.06 * std::sin(3.0 * kPi * u) * (1.0 - u);
      l.pitch -= 1.3 * a * prof;
      l.aa[kLShoulder] += a * Vec3(-0.8 * prof, 0.0, 0.4 * prof);
      l.aa[kRShoulder] += a * Vec3(-0.8 * prof, 0.0, -0.4 * prof);
      for (int j : {kSpine2, kSpine3}) l.aa[j] += a * Vec3(-0.2 * prof, 0.0, 0.0);
      l.disp.z() -= 0.3 * prof;
      break;
    }
  }
  return l;
}

void accumulate(Layer& into, const Layer& l, double joint_gain) {
  for (int j = 0; j < kNumJoints; ++j) into.aa[j] += joint_gain * l.aa[j];
  into.disp += l.disp;
  into.height += l.height;
  into.yaw += l.yaw;
  into.pitch += joint_gain * l.pitch;
  into.roll += joint_gain * l.roll;
}

Layer base_layer() {
  Layer l;
  // arms hanging at the sides, slight elbow bend
  l.aa[kLShoulder] = Vec3(0.0, 0.0, -1.25);
  l.aa[kRShoulder] = Vec3(0.0, 0.0, 1.25);
  l.aa[kLElbow] = Vec3(0.0, -0.2, 0.0);
  l.aa[kRElbow] = Vec3(0.0, 0.2, 0.0);
  return l;
}

Rotation6D to_6d(const Mat3& m) { return Rotation6D{m.col(0), m.col(1)}; }

}  // namespace

PhaseDurations random_durations(Rng& rng) {
  return {uniform_int(rng, 12, 20), uniform_int(rng, 16, 26), uniform_int(rng, 20, 30)};
}

MotionSequence synthesize_fall(const AttributeConfig& attrs, const PhaseDurations& durations, double fps,
                               std::uint64_t seed, BodyModel body) {
  if (durations.impact < kMinPhaseFrames || durations.glitch < kMinPhaseFrames || durations.fall < kMinPhaseFrames) {
    throw Error(Errc::DurationTooShort, "every phase needs at least 4 frames");
  }
  if (!(fps > 0.0)) {
    throw Error(Errc::InvalidConfig, "fps must be positive");
  }
  const Skeleton& skeleton = skeleton_preset(body);
  Rng rng = make_rng(seed, 0x5EED);
  const Params prm = draw_params(rng);

  const int m = durations.impact;
  const int n = m + durations.glitch;
  const int k = n + durations.fall;
  const double h0 = skeleton.root_height;
  constexpr double kDecaySeconds = 0.35;
  constexpr double kNoise = 0.008;

  MotionSequence seq;
  seq.fps = fps;
  seq.attributes = attrs;
  seq.boundaries = {m, n};
  seq.frames.resize(static_cast<std::size_t>(k));

  Layer impact_end_state = impact_layer(attrs, prm, 1.0);
  Layer glitch_end_state = glitch_layer(attrs.glitch_quality, prm, 1.0, (durations.glitch - 1) / fps);
  double fall_start_height = h0;

  for (int f = 0; f < k; ++f) {
    Layer total = base_layer();
    double spine_gain = 1.0;
    Layer fall;
    if (f < m) {
      const double u = static_cast<double>(f) / (m - 1);
      accumulate(total, impact_layer(attrs, prm, u), 1.0);
    } else {
      const double after = (f - m + 1) / fps;
      accumulate(total, impact_end_state, std::exp(-after / kDecaySeconds));
    }
    if (f >= m && f < n) {
      const int local = f - m;
      const double u = static_cast<double>(local) / (durations.glitch - 1);
      accumulate(total, glitch_layer(attrs.glitch_quality, prm, u, local / fps), 1.0);
    } else if (f >= n) {
      const double after = (f - n + 1) / fps;
      accumulate(total, glitch_end_state, std::exp(-after / kDecaySeconds));
    }

    double height = h0 + total.height;
    if (f == n) {
      // height at the last glitch frame anchors the descent
      Layer prev = base_layer();
      accumulate(prev, impact_end_state, std::exp(-(n - m) / fps / kDecaySeconds));
      accumulate(prev, glitch_end_state, 1.0);
      fall_start_height = h0 + prev.height;
    }
    if (f >= n) {
      const double u = static_cast<double>(f - n) / (durations.fall - 1);
      fall = fall_layer(attrs.fall_quality, prm, u, fall_start_height, spine_gain);
      for (int j : kSpineChain) total.aa[j] *= spine_gain;
      height = fall.height;
      fall.height = 0.0;
      accumulate(total, fall, 1.0);
    }

    Pose& pose = seq.frames[static_cast<std::size_t>(f)];
    const Vec3 disp = yaw_matrix(prm.heading0) * total.disp;
    pose.root_translation = Vec3(disp.x(), height, disp.z());
    const Mat3 root = yaw_matrix(prm.heading0 + total.yaw) * axis_angle_matrix(Vec3(total.pitch, 0.0, 0.0)) *
                      axis_angle_matrix(Vec3(0.0, 0.0, total.roll));
    pose.root_rotation = to_6d(root);
    for (int j = 0; j < kNumJoints; ++j) {
      Vec3 noise(standard_normal(rng), standard_normal(rng), standard_normal(rng));
      double gain = kNoise;
      if (f >= n && std::find(kSpineChain.begin(), kSpineChain.end(), j) != kSpineChain.end()) gain *= spine_gain;
      pose.joint_rotations[j] = to_6d(axis_angle_matrix(total.aa[j] + gain * noise));
    }
  }
  return normalize_origin(std::move(seq));
}

std::vector<MotionSequence> synthesize_dataset(const SynthOptions& options) {
  std::vector<MotionSequence> out(static_cast<std::size_t>(options.count));
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < options.count; ++i) {
    errors.capture([&] {
      Rng rng = make_rng(options.seed, static_cast<std::uint64_t>(i));
      const AttributeConfig attrs = random_attributes(rng);
      const PhaseDurations durations = random_durations(rng);
      out[static_cast<std::size_t>(i)] = synthesize_fall(attrs, durations, options.fps, rng(), options.body);
    });
  }
  errors.rethrow();
  return out;
}

}  // namespace fallgen

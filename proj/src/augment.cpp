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

#include "fallgen/augment.hpp"

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "fallgen/error.hpp"

namespace fallgen {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n), spectrum_(static_cast<std::size_t>(n / 2 + 1)), buffer_(static_cast<std::size_t>(n)) {
    std::lock_guard lock(fftw_planner_mutex());
    auto* spec = reinterpret_cast<fftw_complex*>(spectrum_.data());
    forward_ = fftw_plan_dft_r2c_1d(n, buffer_.data(), spec, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, spec, buffer_.data(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::vector<std::complex<double>>& forward(std::span<const double> x) {
    std::copy(x.begin(), x.end(), buffer_.begin());
    fftw_execute(forward_);
    return spectrum_;
  }

  // Consumes the spectrum; writes the normalized signal to `x`.
  void inverse(std::span<double> x) {
    fftw_execute(inverse_);
    const double scale = 1.0 / n_;
    for (int i = 0; i < n_; ++i) x[i] = buffer_[i] * scale;
  }

 private:
  int n_;
  std::vector<std::complex<double>> spectrum_;
  std::vector<double> buffer_;
  fftw_plan forward_{};
  fftw_plan inverse_{};
};

void jitter_with(RealFft& fft, std::span<double> channel, const FftJitter& jitter, Rng& rng) {
  auto& spec = fft.forward(channel);
  for (std::size_t bin = static_cast<std::size_t>(jitter.protected_bins); bin < spec.size(); ++bin) {
    const double gain = uniform(rng, 1.0 - jitter.magnitude_jitter, 1.0 + jitter.magnitude_jitter);
    const double shift = uniform(rng, -jitter.phase_jitter, jitter.phase_jitter);
    spec[bin] *= std::polar(gain, shift);
  }
  fft.inverse(channel);
}

}  // namespace

void FftJitter::validate() const {
  if (!(magnitude_jitter >= 0.0 && magnitude_jitter < 1.0)) {
    throw Error(Errc::InvalidJitterRange, "magnitude jitter must lie in [0, 1)");
  }
  if (!(phase_jitter >= 0.0 && phase_jitter < std::numbers::pi)) {
    throw Error(Errc::InvalidJitterRange, "phase jitter must lie in [0, pi)");
  }
  if (protected_bins < 1) {
    throw Error(Errc::InvalidJitterRange, "at least the DC bin must be protected");
  }
}

void jitter_spectrum(std::span<double> channel, const FftJitter& jitter, Rng& rng) {
  jitter.validate();
  if (channel.empty()) return;
  RealFft fft(static_cast<int>(channel.size()));
  jitter_with(fft, channel, jitter, rng);
}

MotionSequence augment_fft(const MotionSequence& seq, const FftJitter& jitter, std::uint64_t seed) {
  jitter.validate();
  const int k = seq.frame_count();
  if (k < 4) {
    throw Error(Errc::SequenceTooShort, "FFT augmentation needs at least 4 frames");
  }
  seq.validate();

  // Row-major K x kPoseDim copy of the original and the per-segment deltas.
  std::vector<double> orig(static_cast<std::size_t>(k) * kPoseDim);
  for (int f = 0; f < k; ++f) {
    const auto flat = seq.frames[f].flatten();
    std::copy(flat.begin(), flat.end(), orig.begin() + static_cast<std::ptrdiff_t>(f) * kPoseDim);
  }
  std::vector<double> delta(orig.size(), 0.0);
  auto at = [](std::vector<double>& v, int frame, int c) -> double& {
    return v[static_cast<std::size_t>(frame) * kPoseDim + static_cast<std::size_t>(c)];
  };

  Rng rng = make_rng(seed, 0xFF7);
  std::vector<double> channel;
  for (Phase phase : kPhases) {
    const auto [begin, end] = seq.phase_range(phase);
    const int len = end - begin;
    RealFft fft(len);
    channel.resize(static_cast<std::size_t>(len));
    for (int c = 0; c < kPoseDim; ++c) {
      for (int t = 0; t < len; ++t) channel[t] = at(orig, begin + t, c);
      jitter_with(fft, channel, jitter, rng);
      for (int t = 0; t < len; ++t) at(delta, begin + t, c) = channel[t] - at(orig, begin + t, c);
    }
  }

  // Crossfade the perturbation across each boundary. Each segment's delta is
  // an inverse DFT, so its periodic extension is exact outside the segment.
  std::vector<double> blended = delta;
  const std::array<std::pair<Phase, Phase>, 2> seams{{{Phase::Impact, Phase::Glitch}, {Phase::Glitch, Phase::Fall}}};
  for (const auto& [left_phase, right_phase] : seams) {
    const auto [ls, le] = seq.phase_range(left_phase);
    const auto [rs, re] = seq.phase_range(right_phase);
    const int left_len = le - ls;
    const int right_len = re - rs;
    const int boundary = rs;
    for (int t = boundary - 1; t <= boundary + 1; ++t) {
      if (t < 0 || t >= k) continue;
      const double w = static_cast<double>(t - boundary + 2) / (kCrossfadeFrames + 1);
      const int li = ls + (((t - ls) % left_len) + left_len) % left_len;
      const int ri = rs + (((t - rs) % right_len) + right_len) % right_len;
      for (int c = 0; c < kPoseDim; ++c) {
        at(blended, t, c) = (1.0 - w) * at(delta, li, c) + w * at(delta, ri, c);
      }
    }
  }

  MotionSequence out = seq;
  std::vector<double> flat(kPoseDim);
  for (int f = 0; f < k; ++f) {
    for (int c = 0; c < kPoseDim; ++c) flat[c] = at(orig, f, c) + at(blended, f, c);
    Pose p = Pose::unflatten(flat);
    p.root_rotation = reorthonormalize(p.root_rotation);
    for (auto& r : p.joint_rotations) r = reorthonormalize(r);
    out.frames[f] = p;
  }
  return normalize_origin(std::move(out));
}

MotionSequence rotate_yaw(const MotionSequence& seq, double theta) {
  if (seq.frames.empty()) {
    throw Error(Errc::EmptySequence, "cannot rotate an empty sequence");
  }
  const Mat3 r = yaw_matrix(theta);
  MotionSequence out = seq;
  for (auto& f : out.frames) {
    f.root_translation = r * f.root_translation;
    f.root_rotation.a = r * f.root_rotation.a;
    f.root_rotation.b = r * f.root_rotation.b;
  }
  return out;
}

double draw_yaw(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x7A3);
  return uniform(rng, 0.0, 2.0 * std::numbers::pi);
}

MotionSequence augment_yaw(const MotionSequence& seq, std::uint64_t seed) {
  if (seq.frames.empty()) {
    throw Error(Errc::EmptySequence, "cannot rotate an empty sequence");
  }
  return rotate_yaw(seq, draw_yaw(seed));
}

}  // namespace fallgen

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

#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "fallgen/error.hpp"
#include "fallgen/kinematics.hpp"
#include "fallgen/rng.hpp"

// Asserts that `expr` throws fallgen::Error with the given code.
#define CHECK_THROWS_CODE(expr, errc)                                   \
  do {                                                                  \
    bool fallgen_thrown_ = false;                                       \
    try {                                                               \
      (void)(expr);                                                     \
    } catch (const ::fallgen::Error& e) {                               \
      fallgen_thrown_ = true;                                           \
      CHECK_MESSAGE(e.code() == (errc), "unexpected code: ", e.what()); \
    }                                                                   \
    CHECK_MESSAGE(fallgen_thrown_, "expected " #errc);                  \
  } while (false)

namespace fallgen::testing {

// Rodrigues' formula written out by hand so the oracle shares no code with
// the library's rotation helpers.
inline Mat3 rodrigues(const Vec3& axis_angle) {
  const double theta = std::sqrt(axis_angle.dot(axis_angle));
  if (theta == 0.0) return Mat3::Identity();
  const double x = axis_angle.x() / theta, y = axis_angle.y() / theta, z = axis_angle.z() / theta;
  const double c = std::cos(theta), s = std::sin(theta), t = 1.0 - c;
  Mat3 m;
  m << t * x * x + c, t * x * y - s * z, t * x * z + s * y,
       t * x * y + s * z, t * y * y + c, t * y * z - s * x,
       t * x * z - s * y, t * y * z + s * x, t * z * z + c;
  return m;
}

inline Vec3 random_vec(Rng& rng, double scale = 1.0) {
  return Vec3(uniform(rng, -scale, scale), uniform(rng, -scale, scale), uniform(rng, -scale, scale));
}

inline Mat3 random_rotation(Rng& rng) {
  Vec3 axis = random_vec(rng);
  while (axis.norm() < 1e-3) axis = random_vec(rng);
  return rodrigues(axis.normalized() * uniform(rng, 0.0, 3.14159));
}

inline Pose random_pose(Rng& rng, double spread = 1.0) {
  Pose p;
  p.root_translation = random_vec(rng, spread);
  auto as6 = [](const Mat3& m) { return Rotation6D{m.col(0), m.col(1)}; };
  p.root_rotation = as6(random_rotation(rng));
  for (auto& r : p.joint_rotations) r = as6(rodrigues(random_vec(rng, 0.8)));
  return p;
}

// Central finite differences of a scalar function of a parameter vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Worst relative error over entries whose absolute difference exceeds
// `abs_floor`; entries within the floor count as exact.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double abs_floor = 1e-7) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    if (diff <= abs_floor) continue;
    worst = std::max(worst, diff / std::max(std::abs(a[i]), std::abs(b[i])));
  }
  return worst;
}

}  // namespace fallgen::testing

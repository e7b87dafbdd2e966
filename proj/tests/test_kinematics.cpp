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

#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/LU>

#include "fallgen/kinematics.hpp"
#include "test_util.hpp"

using namespace fallgen;
using fallgen::testing::random_pose;
using fallgen::testing::random_rotation;
using fallgen::testing::random_vec;
using fallgen::testing::rodrigues;

namespace {

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

Pose rotate_root(Pose p, const Mat3& r) {
  const Mat3 root = r * rot6d_to_matrix(p.root_rotation);
  p.root_rotation = Rotation6D{root.col(0), root.col(1)};
  return p;
}

Skeleton toy_chain() {
  Skeleton s;
  s.joint_names = {"root", "mid", "tip"};
  s.parent_index = {-1, 0, 1};
  s.bone_offset = {Vec3::Zero(), Vec3(1, 0, 0), Vec3(1, 0, 0)};
  s.validate();
  return s;
}

}  // namespace

TEST_CASE("rot6d_to_matrix canonical examples") {
  CHECK(max_abs(rot6d_to_matrix({Vec3(1, 0, 0), Vec3(0, 1, 0)}) - Mat3::Identity()) == 0.0);
  CHECK(max_abs(rot6d_to_matrix({Vec3(2, 0, 0), Vec3(0, 3, 0)}) - Mat3::Identity()) < 1e-15);

  // Hand Gram-Schmidt: b1 = (1,1,0)/sqrt2, b2 = (-1,1,0)/sqrt2, b3 = z.
  const double r = 1.0 / std::sqrt(2.0);
  Mat3 expected;
  expected << r, -r, 0,
              r, r, 0,
              0, 0, 1;
  CHECK(max_abs(rot6d_to_matrix({Vec3(1, 1, 0), Vec3(0, 1, 0)}) - expected) < 1e-15);
}

TEST_CASE("rot6d_to_matrix rejects degenerate inputs") {
  CHECK_THROWS_CODE(rot6d_to_matrix({Vec3::Zero(), Vec3(0, 1, 0)}), Errc::DegenerateRotation);
  CHECK_THROWS_CODE(rot6d_to_matrix({Vec3(1e-9, 0, 0), Vec3(0, 1, 0)}), Errc::DegenerateRotation);
  CHECK_THROWS_CODE(rot6d_to_matrix({Vec3(1, 2, 3), Vec3(2, 4, 6)}), Errc::DegenerateRotation);
  CHECK_THROWS_CODE(rot6d_to_matrix({Vec3(NAN, 0, 0), Vec3(0, 1, 0)}), Errc::DegenerateRotation);
}

TEST_CASE("matrix_to_rot6d examples") {
  const auto id = matrix_to_rot6d(Mat3::Identity());
  CHECK(id.a == Vec3(1, 0, 0));
  CHECK(id.b == Vec3(0, 1, 0));

  // 90 degree yaw about +Y from the hand-written exponential map.
  const auto yaw = matrix_to_rot6d(rodrigues(Vec3(0, std::numbers::pi / 2, 0)));
  CHECK((yaw.a - Vec3(0, 0, -1)).norm() < 1e-15);
  CHECK((yaw.b - Vec3(0, 1, 0)).norm() < 1e-15);
  CHECK(max_abs(yaw_matrix(std::numbers::pi / 2) - rodrigues(Vec3(0, std::numbers::pi / 2, 0))) < 1e-15);

  CHECK_THROWS_CODE(matrix_to_rot6d(2.0 * Mat3::Identity()), Errc::NotARotation);
  Mat3 reflection = Mat3::Identity();
  reflection(2, 2) = -1.0;
  CHECK_THROWS_CODE(matrix_to_rot6d(reflection), Errc::NotARotation);
}

TEST_CASE("matrix -> 6D -> matrix round trip over random rotations") {
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 m = random_rotation(rng);
    worst = std::max(worst, max_abs(rot6d_to_matrix(matrix_to_rot6d(m)) - m));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("6D conversion is orthonormal and right-handed for arbitrary inputs") {
  Rng rng(12);
  for (int i = 0; i < 2000; ++i) {
    const Rotation6D r{random_vec(rng, 5.0), random_vec(rng, 5.0)};
    const Mat3 m = rot6d_to_matrix(r);
    CHECK(max_abs(m.transpose() * m - Mat3::Identity()) < 1e-6);
    CHECK(std::abs(m.determinant() - 1.0) < 1e-6);
  }
}

TEST_CASE("6D conversion nullspace: scale of a, a-multiples added to b") {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const Rotation6D r{random_vec(rng), random_vec(rng)};
    const Mat3 base = rot6d_to_matrix(r);
    const double s = uniform(rng, 0.1, 10.0);
    CHECK(max_abs(rot6d_to_matrix({s * r.a, r.b}) - base) < 1e-9);
    const double t = uniform(rng, -5.0, 5.0);
    CHECK(max_abs(rot6d_to_matrix({r.a, r.b + t * r.a}) - base) < 1e-9);
  }
}

TEST_CASE("pose flattening layout") {
  Rng rng(14);
  const Pose p = random_pose(rng);
  const auto flat = p.flatten();
  CHECK(flat.size() == 153);
  CHECK(flat[0] == p.root_translation.x());
  CHECK(flat[3] == p.root_rotation.a.x());
  CHECK(flat[8] == p.root_rotation.b.z());
  CHECK(flat[9] == p.joint_rotations[0].a.x());
  CHECK(flat[152] == p.joint_rotations[23].b.z());
  CHECK(Pose::unflatten(flat) == p);
  CHECK_THROWS_CODE(Pose::unflatten(std::vector<double>(10)), Errc::ShapeMismatch);
}

TEST_CASE("skeleton presets share topology and differ in lengths") {
  const auto& male = skeleton_preset(BodyModel::Male);
  const auto& female = skeleton_preset(BodyModel::Female);
  CHECK(male.num_joints() == 24);
  CHECK(male.joint_names == female.joint_names);
  CHECK(male.parent_index == female.parent_index);
  CHECK(male.bone_offset[0].isZero());
  bool differs = false;
  for (int j = 0; j < 24; ++j) differs |= (male.bone_offset[j] != female.bone_offset[j]);
  CHECK(differs);
  CHECK(female.root_height < male.root_height);

  const auto doc = skeleton_to_json(male);
  CHECK(doc["model"] == "male");
  CHECK(doc["joint_names"].size() == 24);
  CHECK(skeleton_presets_document()["schema_version"] == 1);
}

TEST_CASE("skeleton validation catches malformed trees") {
  Skeleton s = toy_chain();
  s.parent_index = {-1, 2, 1};  // cycle
  CHECK_THROWS_CODE(s.validate(), Errc::InvalidSkeleton);
  s = toy_chain();
  s.parent_index = {-1, -1, 1};  // two roots
  CHECK_THROWS_CODE(s.validate(), Errc::InvalidSkeleton);
  s = toy_chain();
  s.bone_offset[0] = Vec3(0, 1, 0);
  CHECK_THROWS_CODE(s.validate(), Errc::InvalidSkeleton);
}

TEST_CASE("rest-pose FK equals cumulative bone offsets") {
  const auto& sk = skeleton_preset(BodyModel::Male);
  Pose p;  // identity rotations, root at origin
  const auto pos = forward_kinematics(sk, p);
  for (int j = 0; j < 24; ++j) {
    Vec3 expected = Vec3::Zero();
    for (int k = j; k >= 0; k = sk.parent_index[k]) expected += sk.bone_offset[k];
    CHECK((pos[j] - expected).norm() < 1e-15);
  }
  p.root_translation = Vec3(0, 0, 1);
  const auto shifted = forward_kinematics(sk, p);
  for (int j = 0; j < 24; ++j) CHECK((shifted[j] - pos[j] - Vec3(0, 0, 1)).norm() < 1e-15);
}

TEST_CASE("FK on a hand-built 3-joint chain") {
  // Root and mid each yawed 90 degrees. By hand:
  //   p1 = Ry(90) (1,0,0) = (0,0,-1)
  //   p2 = p1 + Ry(180) (1,0,0) = (-1,0,-1)
  const Skeleton s = toy_chain();
  const Mat3 yaw90 = rodrigues(Vec3(0, std::numbers::pi / 2, 0));
  const std::vector<Mat3> local{yaw90, yaw90, Mat3::Identity()};
  const auto t = forward_kinematics(s, Vec3::Zero(), Mat3::Identity(), local);
  CHECK((t.positions[0] - Vec3(0, 0, 0)).norm() < 1e-15);
  CHECK((t.positions[1] - Vec3(0, 0, -1)).norm() < 1e-15);
  CHECK((t.positions[2] - Vec3(-1, 0, -1)).norm() < 1e-15);
}

TEST_CASE("FK is equivariant under a global root rotation") {
  const auto& sk = skeleton_preset(BodyModel::Female);
  Rng rng(15);
  for (int i = 0; i < 50; ++i) {
    const Pose p = random_pose(rng);
    const Mat3 r = random_rotation(rng);
    const auto before = forward_kinematics(sk, p);
    const auto after = forward_kinematics(sk, rotate_root(p, r));
    for (int j = 0; j < 24; ++j) {
      const Vec3 expected = r * (before[j] - p.root_translation) + p.root_translation;
      CHECK((after[j] - expected).norm() < 1e-6);
    }
  }
}

TEST_CASE("witness points") {
  const auto& sk = skeleton_preset(BodyModel::Male);
  Rng rng(16);

  WitnessCloud zero = make_witness_cloud(sk);
  for (auto& o : zero.local_offsets) o.setZero();
  const Pose p = random_pose(rng);
  const auto joints = forward_kinematics(sk, p);
  const auto pts = witness_points(sk, zero, p);
  REQUIRE(pts.size() == 144);
  for (int j = 0; j < 24; ++j)
    for (int k = 0; k < 6; ++k) CHECK((pts[j * 6 + k] - joints[j]).norm() == 0.0);

  const WitnessCloud cloud = make_witness_cloud(sk);
  const Pose rest;
  const auto rest_joints = forward_kinematics(sk, rest);
  const auto rest_pts = witness_points(sk, cloud, rest);
  for (int j = 0; j < 24; ++j)
    for (int k = 0; k < 6; ++k)
      CHECK((rest_pts[j * 6 + k] - rest_joints[j] - cloud.local_offsets[j * 6 + k]).norm() < 1e-15);

  // Rigid equivariance against an explicitly transformed oracle.
  const Mat3 r = random_rotation(rng);
  const auto moved = witness_points(sk, cloud, rotate_root(p, r));
  const auto base = witness_points(sk, cloud, p);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK((moved[i] - (r * (base[i] - p.root_translation) + p.root_translation)).norm() < 1e-6);
  }
}

TEST_CASE("witness VJP matches finite differences") {
  const auto& sk = skeleton_preset(BodyModel::Male);
  const WitnessCloud cloud = make_witness_cloud(sk);
  Rng rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    const Pose p = random_pose(rng);
    // Perturb off the manifold so the Gram-Schmidt path is exercised.
    auto flat = p.flatten();
    std::vector<double> x(flat.begin(), flat.end());
    for (std::size_t i = 3; i < x.size(); ++i) x[i] += uniform(rng, -0.2, 0.2);
    std::vector<double> weights(144 * 3);
    for (auto& w : weights) w = uniform(rng, -1.0, 1.0);

    auto objective = [&](const std::vector<double>& v) {
      std::vector<double> out(144 * 3);
      witness_points_flat(sk, cloud, v, out);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
      return s;
    };
    std::vector<double> analytic(153, 0.0);
    witness_points_vjp(sk, cloud, x, weights, analytic);
    const auto numeric = fallgen::testing::numeric_gradient(objective, x);
    CHECK(fallgen::testing::max_relative_error(analytic, numeric) < 1e-4);
  }
}

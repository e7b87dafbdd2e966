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
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace fallgen {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kNumJoints = 24;
// root translation (3) + root rotation (6) + 24 joint rotations (6 each)
inline constexpr int kPoseDim = 3 + 6 + kNumJoints * 6;

inline constexpr double kDegenerateEps = 1e-8;
inline constexpr double kOrthonormalTol = 1e-6;

/// Rotation stored as the first two columns of its matrix. Inputs need not
/// be orthonormal; Gram-Schmidt is applied on conversion.
struct Rotation6D {
  Vec3 a = Vec3::UnitX();
  Vec3 b = Vec3::UnitY();

  bool operator==(const Rotation6D&) const = default;
};

Mat3 rot6d_to_matrix(const Rotation6D& r);
Rotation6D matrix_to_rot6d(const Mat3& m);

/// Projects an arbitrary 6D value back onto the rotation manifold.
inline Rotation6D reorthonormalize(const Rotation6D& r) { return matrix_to_rot6d(rot6d_to_matrix(r)); }

/// Rotation about the world vertical (+Y), right-handed.
Mat3 yaw_matrix(double theta);

/// Exponential map (Rodrigues); `axis_angle` direction is the axis, norm the angle.
Mat3 axis_angle_matrix(const Vec3& axis_angle);

/// Heading angle of a rotation about +Y, taken from where it sends +Z.
double heading_of(const Mat3& m);

struct Pose {
  Vec3 root_translation = Vec3::Zero();
  Rotation6D root_rotation;
  std::array<Rotation6D, kNumJoints> joint_rotations{};

  std::array<double, kPoseDim> flatten() const;
  static Pose unflatten(std::span<const double> values);

  bool operator==(const Pose&) const = default;
};

enum class BodyModel { Male, Female };

std::string_view body_model_name(BodyModel model);
BodyModel parse_body_model(std::string_view name);  // throws InvalidConfig

struct Skeleton {
  std::vector<std::string> joint_names;
  std::vector<int> parent_index;  // -1 for the root
  std::vector<Vec3> bone_offset;  // meters, rest-pose translation from parent
  BodyModel preset = BodyModel::Male;
  double root_height = 0.0;  // pelvis height when standing in the rest pose

  int num_joints() const { return static_cast<int>(parent_index.size()); }

  /// Throws InvalidSkeleton unless this is a single-rooted tree whose
  /// parents precede their children and whose root offset is zero.
  void validate() const;
};

/// The 24-joint presets bundled with the library (data/skeleton_presets.json).
const Skeleton& skeleton_preset(BodyModel model);

/// The raw versioned presets document.
const nlohmann::json& skeleton_presets_document();

/// Per-preset view served to clients: joint names, parents, offsets.
nlohmann::ordered_json skeleton_to_json(const Skeleton& skeleton);

/// Standing rest pose: identity rotations, root above the origin at root_height.
Pose rest_pose(const Skeleton& skeleton);

struct WitnessCloud {
  int points_per_joint = 6;
  std::vector<Vec3> local_offsets;  // num_joints * points_per_joint, bone-local frame
};

/// Points at +/- spread along each bone-local axis; further points (beyond 6)
/// cycle the axes at growing radius.
WitnessCloud make_witness_cloud(const Skeleton& skeleton, int points_per_joint = 6, double spread = 0.05);

struct JointTransforms {
  std::vector<Vec3> positions;
  std::vector<Mat3> rotations;  // world rotations
};

/// Core FK over any tree. `local_rotations` holds one matrix per joint.
JointTransforms forward_kinematics(const Skeleton& skeleton, const Vec3& root_translation, const Mat3& root_rotation,
                                   std::span<const Mat3> local_rotations);

JointTransforms forward_kinematics_full(const Skeleton& skeleton, const Pose& pose);

std::vector<Vec3> forward_kinematics(const Skeleton& skeleton, const Pose& pose);

std::vector<Vec3> witness_points(const Skeleton& skeleton, const WitnessCloud& cloud, const Pose& pose);

/// Writes witness points for a flattened pose (kPoseDim values) into `out`
/// as x,y,z triples.
void witness_points_flat(const Skeleton& skeleton, const WitnessCloud& cloud, std::span<const double> pose,
                         std::span<double> out);

/// Vector-Jacobian product of `witness_points_flat`: accumulates
/// d<grad_points, witness(pose)>/d pose into `grad_pose`.
void witness_points_vjp(const Skeleton& skeleton, const WitnessCloud& cloud, std::span<const double> pose,
                        std::span<const double> grad_points, std::span<double> grad_pose);

}  // namespace fallgen

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

#include "fallgen/kinematics.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Geometry>

#include "fallgen/error.hpp"
#include "skeleton_presets_data.hpp"

namespace fallgen {

namespace {

void require_finite(const Rotation6D& r) {
  if (!r.a.allFinite() || !r.b.allFinite()) {
    throw Error(Errc::DegenerateRotation, "non-finite 6D component");
  }
}

// Gram-Schmidt intermediates kept for the reverse pass.
struct GramSchmidt {
  Vec3 b1, b2, b3;
  Vec3 u;
  double norm_a = 0.0;
  double norm_u = 0.0;
};

GramSchmidt gram_schmidt(const Rotation6D& r) {
  require_finite(r);
  GramSchmidt gs;
  gs.norm_a = r.a.norm();
  if (gs.norm_a <= kDegenerateEps) {
    throw Error(Errc::DegenerateRotation, "first column norm below 1e-8");
  }
  gs.b1 = r.a / gs.norm_a;
  gs.u = r.b - gs.b1.dot(r.b) * gs.b1;
  gs.norm_u = gs.u.norm();
  if (gs.norm_u <= kDegenerateEps) {
    throw Error(Errc::DegenerateRotation, "orthogonalized second column norm below 1e-8");
  }
  gs.b2 = gs.u / gs.norm_u;
  gs.b3 = gs.b1.cross(gs.b2);
  return gs;
}

// Reverse pass of gram_schmidt: given dL/dM (columns g1, g2, g3), returns
// dL/da and dL/db.
void gram_schmidt_vjp(const Rotation6D& r, const GramSchmidt& gs, const Mat3& grad_m, Vec3& grad_a,
                      Vec3& grad_b) {
  Vec3 g1 = grad_m.col(0);
  Vec3 g2 = grad_m.col(1);
  const Vec3 g3 = grad_m.col(2);

  // b3 = b1 x b2
  g1 += gs.b2.cross(g3);
  g2 += g3.cross(gs.b1);

  // b2 = u / |u|
  const Vec3 gu = (g2 - gs.b2 * gs.b2.dot(g2)) / gs.norm_u;

  // u = b - (b1.b) b1
  const double b1_dot_gu = gs.b1.dot(gu);
  grad_b = gu - gs.b1 * b1_dot_gu;
  g1 += -b1_dot_gu * r.b - gs.b1.dot(r.b) * gu;

  // b1 = a / |a|
  grad_a = (g1 - gs.b1 * gs.b1.dot(g1)) / gs.norm_a;
}

Rotation6D rot6d_at(std::span<const double> v, std::size_t offset) {
  Rotation6D r;
  r.a = Vec3(v[offset], v[offset + 1], v[offset + 2]);
  r.b = Vec3(v[offset + 3], v[offset + 4], v[offset + 5]);
  return r;
}

Skeleton load_preset(BodyModel model) {
  const auto& doc = skeleton_presets_document();
  Skeleton s;
  s.preset = model;
  s.joint_names = doc.at("joint_names").get<std::vector<std::string>>();
  s.parent_index = doc.at("parent_index").get<std::vector<int>>();
  const auto& preset = doc.at("presets").at(std::string(body_model_name(model)));
  s.root_height = preset.at("root_height").get<double>();
  for (const auto& o : preset.at("bone_offset")) {
    s.bone_offset.emplace_back(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());
  }
  s.validate();
  return s;
}

}  // namespace

Mat3 rot6d_to_matrix(const Rotation6D& r) {
  const GramSchmidt gs = gram_schmidt(r);
  Mat3 m;
  m.col(0) = gs.b1;
  m.col(1) = gs.b2;
  m.col(2) = gs.b3;
  return m;
}

Rotation6D matrix_to_rot6d(const Mat3& m) {
  if (!m.allFinite()) {
    throw Error(Errc::NotARotation, "non-finite matrix");
  }
  const double ortho_err = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > kOrthonormalTol || m.determinant() <= 0.0) {
    throw Error(Errc::NotARotation, "matrix is not orthonormal with det +1 (error " + std::to_string(ortho_err) + ")");
  }
  return Rotation6D{m.col(0), m.col(1)};
}

Mat3 yaw_matrix(double theta) {
  return Eigen::AngleAxisd(theta, Vec3::UnitY()).toRotationMatrix();
}

Mat3 axis_angle_matrix(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-14) {
    return Mat3::Identity();
  }
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

double heading_of(const Mat3& m) {
  const Vec3 forward = m * Vec3::UnitZ();
  return std::atan2(forward.x(), forward.z());
}

std::array<double, kPoseDim> Pose::flatten() const {
  std::array<double, kPoseDim> out{};
  std::size_t k = 0;
  auto put3 = [&](const Vec3& v) {
    out[k++] = v.x();
    out[k++] = v.y();
    out[k++] = v.z();
  };
  put3(root_translation);
  put3(root_rotation.a);
  put3(root_rotation.b);
  for (const auto& r : joint_rotations) {
    put3(r.a);
    put3(r.b);
  }
  return out;
}

Pose Pose::unflatten(std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(kPoseDim)) {
    throw Error(Errc::ShapeMismatch, "pose expects 153 values, got " + std::to_string(values.size()));
  }
  Pose p;
  p.root_translation = Vec3(values[0], values[1], values[2]);
  p.root_rotation = rot6d_at(values, 3);
  for (int j = 0; j < kNumJoints; ++j) {
    p.joint_rotations[j] = rot6d_at(values, 9 + 6 * static_cast<std::size_t>(j));
  }
  return p;
}

std::string_view body_model_name(BodyModel model) {
  return model == BodyModel::Male ? "male" : "female";
}

BodyModel parse_body_model(std::string_view name) {
  if (name == "male") return BodyModel::Male;
  if (name == "female") return BodyModel::Female;
  throw Error(Errc::InvalidConfig, "unknown body model '" + std::string(name) + "' (allowed: male, female)");
}

void Skeleton::validate() const {
  const int n = num_joints();
  if (n == 0 || static_cast<int>(bone_offset.size()) != n ||
      (!joint_names.empty() && static_cast<int>(joint_names.size()) != n)) {
    throw Error(Errc::InvalidSkeleton, "joint arrays disagree in length");
  }
  if (parent_index[0] != -1) {
    throw Error(Errc::InvalidSkeleton, "joint 0 must be the root");
  }
  for (int j = 1; j < n; ++j) {
    // parents precede children: no cycles, single root, all reachable
    if (parent_index[j] < 0 || parent_index[j] >= j) {
      throw Error(Errc::InvalidSkeleton, "joint " + std::to_string(j) + " has invalid parent");
    }
  }
  if (!bone_offset[0].isZero()) {
    throw Error(Errc::InvalidSkeleton, "root bone offset must be zero");
  }
}

const nlohmann::json& skeleton_presets_document() {
  static const nlohmann::json doc = nlohmann::json::parse(detail::kSkeletonPresetsJson);
  return doc;
}

const Skeleton& skeleton_preset(BodyModel model) {
  static const Skeleton male = load_preset(BodyModel::Male);
  static const Skeleton female = load_preset(BodyModel::Female);
  return model == BodyModel::Male ? male : female;
}

nlohmann::ordered_json skeleton_to_json(const Skeleton& skeleton) {
  nlohmann::ordered_json out;
  out["schema_version"] = skeleton_presets_document().at("schema_version");
  out["model"] = body_model_name(skeleton.preset);
  out["joint_names"] = skeleton.joint_names;
  out["parent_index"] = skeleton.parent_index;
  out["root_height"] = skeleton.root_height;
  auto offsets = nlohmann::ordered_json::array();
  for (const auto& o : skeleton.bone_offset) {
    offsets.push_back({o.x(), o.y(), o.z()});
  }
  out["bone_offset"] = std::move(offsets);
  return out;
}

Pose rest_pose(const Skeleton& skeleton) {
  Pose p;
  p.root_translation = Vec3(0.0, skeleton.root_height, 0.0);
  return p;
}

WitnessCloud make_witness_cloud(const Skeleton& skeleton, int points_per_joint, double spread) {
  if (points_per_joint < 1) {
    throw Error(Errc::InvalidConfig, "points_per_joint must be positive");
  }
  WitnessCloud cloud;
  cloud.points_per_joint = points_per_joint;
  cloud.local_offsets.reserve(static_cast<std::size_t>(skeleton.num_joints() * points_per_joint));
  for (int j = 0; j < skeleton.num_joints(); ++j) {
    for (int k = 0; k < points_per_joint; ++k) {
      const int axis = (k / 2) % 3;
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      const double radius = spread * (1.0 + static_cast<double>(k / 6));
      Vec3 o = Vec3::Zero();
      o[axis] = sign * radius;
      cloud.local_offsets.push_back(o);
    }
  }
  return cloud;
}

JointTransforms forward_kinematics(const Skeleton& skeleton, const Vec3& root_translation, const Mat3& root_rotation,
                                   std::span<const Mat3> local_rotations) {
  const int n = skeleton.num_joints();
  if (static_cast<int>(local_rotations.size()) != n) {
    throw Error(Errc::ShapeMismatch, "expected one local rotation per joint");
  }
  JointTransforms t;
  t.positions.resize(n);
  t.rotations.resize(n);
  t.positions[0] = root_translation;
  t.rotations[0] = root_rotation * local_rotations[0];
  for (int j = 1; j < n; ++j) {
    const int p = skeleton.parent_index[j];
    t.positions[j] = t.positions[p] + t.rotations[p] * skeleton.bone_offset[j];
    t.rotations[j] = t.rotations[p] * local_rotations[j];
  }
  return t;
}

JointTransforms forward_kinematics_full(const Skeleton& skeleton, const Pose& pose) {
  if (skeleton.num_joints() != kNumJoints) {
    throw Error(Errc::ShapeMismatch, "pose FK requires a 24-joint skeleton");
  }
  std::array<Mat3, kNumJoints> local;
  for (int j = 0; j < kNumJoints; ++j) {
    local[j] = rot6d_to_matrix(pose.joint_rotations[j]);
  }
  return forward_kinematics(skeleton, pose.root_translation, rot6d_to_matrix(pose.root_rotation), local);
}

std::vector<Vec3> forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
  return forward_kinematics_full(skeleton, pose).positions;
}

std::vector<Vec3> witness_points(const Skeleton& skeleton, const WitnessCloud& cloud, const Pose& pose) {
  const JointTransforms t = forward_kinematics_full(skeleton, pose);
  const int ppj = cloud.points_per_joint;
  std::vector<Vec3> out;
  out.reserve(cloud.local_offsets.size());
  for (int j = 0; j < skeleton.num_joints(); ++j) {
    for (int k = 0; k < ppj; ++k) {
      out.push_back(t.positions[j] + t.rotations[j] * cloud.local_offsets[static_cast<std::size_t>(j * ppj + k)]);
    }
  }
  return out;
}

void witness_points_flat(const Skeleton& skeleton, const WitnessCloud& cloud, std::span<const double> pose,
                         std::span<double> out) {
  const auto points = witness_points(skeleton, cloud, Pose::unflatten(pose));
  if (out.size() != points.size() * 3) {
    throw Error(Errc::ShapeMismatch, "witness output buffer has wrong size");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[3 * i] = points[i].x();
    out[3 * i + 1] = points[i].y();
    out[3 * i + 2] = points[i].z();
  }
}

void witness_points_vjp(const Skeleton& skeleton, const WitnessCloud& cloud, std::span<const double> pose,
                        std::span<const double> grad_points, std::span<double> grad_pose) {
  const int n = skeleton.num_joints();
  const int ppj = cloud.points_per_joint;
  if (n != kNumJoints || grad_pose.size() != static_cast<std::size_t>(kPoseDim) ||
      grad_points.size() != static_cast<std::size_t>(n * ppj * 3)) {
    throw Error(Errc::ShapeMismatch, "witness VJP buffers have wrong size");
  }

  const Rotation6D root6 = rot6d_at(pose, 3);
  const GramSchmidt root_gs = gram_schmidt(root6);
  const Mat3 root_rot = (Mat3() << root_gs.b1, root_gs.b2, root_gs.b3).finished();

  std::array<Rotation6D, kNumJoints> local6;
  std::array<GramSchmidt, kNumJoints> local_gs;
  std::array<Mat3, kNumJoints> local;
  for (int j = 0; j < n; ++j) {
    local6[j] = rot6d_at(pose, 9 + 6 * static_cast<std::size_t>(j));
    local_gs[j] = gram_schmidt(local6[j]);
    local[j] << local_gs[j].b1, local_gs[j].b2, local_gs[j].b3;
  }
  const JointTransforms t =
      forward_kinematics(skeleton, Vec3(pose[0], pose[1], pose[2]), root_rot, std::span<const Mat3>(local));

  std::array<Vec3, kNumJoints> grad_pos;
  std::array<Mat3, kNumJoints> grad_rot;
  for (int j = 0; j < n; ++j) {
    grad_pos[j].setZero();
    grad_rot[j].setZero();
    for (int k = 0; k < ppj; ++k) {
      const std::size_t idx = static_cast<std::size_t>(j * ppj + k);
      const Vec3 g(grad_points[3 * idx], grad_points[3 * idx + 1], grad_points[3 * idx + 2]);
      grad_pos[j] += g;
      grad_rot[j] += g * cloud.local_offsets[idx].transpose();
    }
  }

  // Children are visited before parents because parent_index[j] < j.
  std::array<Mat3, kNumJoints> grad_local;
  for (int j = n - 1; j >= 1; --j) {
    const int p = skeleton.parent_index[j];
    grad_pos[p] += grad_pos[j];
    grad_rot[p] += grad_pos[j] * skeleton.bone_offset[j].transpose();
    // G_j = G_p * L_j
    grad_rot[p] += grad_rot[j] * local[j].transpose();
    grad_local[j] = t.rotations[p].transpose() * grad_rot[j];
  }
  // G_0 = R_root * L_0
  const Mat3 grad_root_rot = grad_rot[0] * local[0].transpose();
  grad_local[0] = root_rot.transpose() * grad_rot[0];

  grad_pose[0] += grad_pos[0].x();
  grad_pose[1] += grad_pos[0].y();
  grad_pose[2] += grad_pos[0].z();

  auto scatter = [&](std::size_t offset, const Rotation6D& r, const GramSchmidt& gs, const Mat3& gm) {
    Vec3 ga, gb;
    gram_schmidt_vjp(r, gs, gm, ga, gb);
    for (int i = 0; i < 3; ++i) {
      grad_pose[offset + i] += ga[i];
      grad_pose[offset + 3 + i] += gb[i];
    }
  };
  scatter(3, root6, root_gs, grad_root_rot);
  for (int j = 0; j < n; ++j) {
    scatter(9 + 6 * static_cast<std::size_t>(j), local6[j], local_gs[j], grad_local[j]);
  }
}

}  // namespace fallgen

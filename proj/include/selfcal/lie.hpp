/******************************************************************************
 * Copyright 2026 The selfcal Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/
#pragma once

// Minimal SO(3)/SE(3) algebra: Rodrigues exponential/logarithm and the local
// (tangent-plane) pose update used by every pose parameterization in this
// library. Rotation increments are applied by left multiplication,
// R <- exp(omega^) * R, and all Jacobians elsewhere are derived against that
// convention.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>

namespace selfcal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat25 = Eigen::Matrix<double, 2, 5>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat35 = Eigen::Matrix<double, 3, 5>;

/// Skew-symmetric matrix such that skew(a) * b = a x b.
inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// SO(3) exponential map (Rodrigues), with a Taylor branch near zero so the
/// map is continuous at ||omega|| -> 0.
inline Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b;  // R = I + a*W + b*W^2
  if (theta < 1e-6) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 w = skew(omega);
  return Mat3::Identity() + a * w + b * w * w;
}

/// SO(3) logarithm. Valid for rotation angles below pi; for angles under
/// 1e-7 the first-order expansion is used.
inline Vec3 so3_log(const Mat3& rot) {
  const double cos_theta = std::clamp((rot.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  Vec3 v(rot(2, 1) - rot(1, 2), rot(0, 2) - rot(2, 0), rot(1, 0) - rot(0, 1));
  if (theta < 1e-7) {
    return 0.5 * v;
  }
  return (theta / (2.0 * std::sin(theta))) * v;
}

/// Rigid camera-to-world transform. Value type; rotation kept orthonormal by
/// construction (updates go through so3_exp).
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return Pose{}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  Pose compose(const Pose& rhs) const {
    Pose out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }
};

inline Vec3 se3_apply(const Pose& pose, const Vec3& p) { return pose.apply(p); }

/// Local update with delta = (translation increment, rotation tangent
/// increment): t <- t + dt, R <- so3_exp(dw) * R.
inline Pose se3_local_update(const Pose& pose, const Vec6& delta) {
  Pose out;
  out.translation = pose.translation + delta.head<3>();
  out.rotation = so3_exp(delta.tail<3>()) * pose.rotation;
  return out;
}

/// Tangent difference that se3_local_update(a, d) == b solves for d.
inline Vec6 se3_local_difference(const Pose& b, const Pose& a) {
  Vec6 d;
  d.head<3>() = b.translation - a.translation;
  d.tail<3>() = so3_log(b.rotation * a.rotation.transpose());
  return d;
}

}  // namespace selfcal

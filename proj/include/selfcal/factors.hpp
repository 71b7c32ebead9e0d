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

// Inverse-depth transfer measurement model: a landmark is the unit ray of
// its first observation in a reference keyframe plus an inverse range rho.
// The model unprojects the reference pixel, scales by 1/rho, moves the point
// through world coordinates into the measurement camera and projects it.
//
// The reference pixel is a fixed constant, never an estimated quantity. The
// reference and measurement frames normally share one intrinsics vector;
// across a calibration-change boundary each side uses the intrinsics
// assigned to its own frame, in which case the intrinsics are not being
// estimated and no intrinsics Jacobian is produced.

#include <cmath>

#include "selfcal/camera.hpp"
#include "selfcal/lie.hpp"

namespace selfcal {

struct BehindCamera : std::runtime_error {
  BehindCamera() : std::runtime_error("landmark behind measurement camera") {}
};

/// Inverse-depth landmark anchored at its first observation.
struct Landmark {
  int ref_frame_id = -1;
  Vec2 p_r = Vec2::Zero();  // first observation, pixels
  double rho = 0.0;         // inverse range along the reference ray, 1/m
};

/// One pixel observation of a landmark in a (non-reference) keyframe.
struct Measurement {
  int landmark_id = -1;
  int frame_id = -1;
  Vec2 z = Vec2::Zero();
  double sigma = 1.0;
};

/// Predicts the pixel of a landmark in the measurement camera. intr_r is
/// used to unproject the reference pixel, intr_m to project into the
/// measurement frame.
inline Vec2 predict(const Intrinsics& intr_r, const Intrinsics& intr_m,
                    const Pose& t_wc_r, const Pose& t_wc_m, const Landmark& lm) {
  const Vec3 ray = unproject(intr_r, lm.p_r);
  const Vec3 x_world = t_wc_r.apply(ray / lm.rho);
  const Vec3 p_cam = t_wc_m.inverse().apply(x_world);
  if (!(p_cam.z() > 0.0)) {
    throw BehindCamera();
  }
  return project(intr_m, p_cam);
}

/// Single-intrinsics convenience overload.
inline Vec2 predict(const Intrinsics& intr, const Pose& t_wc_r,
                    const Pose& t_wc_m, const Landmark& lm) {
  return predict(intr, intr, t_wc_r, t_wc_m, lm);
}

/// Whitened residual (z - h)/sigma and its Jacobians. Pose Jacobians are
/// with respect to the se3 local update (translation first, rotation
/// tangent second) of each pose. d_intrinsics is only valid when the model
/// was evaluated with a single shared intrinsics vector.
struct ResidualExpansion {
  Vec2 residual;
  Mat26 d_pose_ref;
  Mat26 d_pose_meas;
  Vec2 d_rho;
  Mat25 d_intrinsics;
  bool has_intrinsics_jacobian = false;
};

inline ResidualExpansion residual_and_jacobians(
    const Intrinsics& intr_r, const Intrinsics& intr_m, const Pose& t_wc_r,
    const Pose& t_wc_m, const Landmark& lm, const Measurement& meas,
    bool with_intrinsics_jacobian) {
  const auto unp = unproject_expand(intr_r, lm.p_r);
  const double inv_rho = 1.0 / lm.rho;
  const Vec3 q_r = unp.ray * inv_rho;           // point in reference camera
  const Vec3 r_q = t_wc_r.rotation * q_r;       // rotated into world
  const Vec3 x_world = r_q + t_wc_r.translation;
  const Vec3 y = x_world - t_wc_m.translation;
  const Mat3 rm_t = t_wc_m.rotation.transpose();
  const Vec3 p_cam = rm_t * y;
  if (!(p_cam.z() > 0.0)) {
    throw BehindCamera();
  }
  const auto proj = project_expand(intr_m, p_cam);

  const double inv_sigma = 1.0 / meas.sigma;
  ResidualExpansion out;
  out.residual = (meas.z - proj.pixel) * inv_sigma;

  // d(residual)/d(.) = -(1/sigma) * d(pixel)/d(.)
  const Mat23 jp = -inv_sigma * proj.d_point;   // 2x3, w.r.t. p_cam

  // Reference pose: dX/d(dt) = I, dX/d(dw) = -skew(R_r q_r).
  out.d_pose_ref.leftCols<3>() = jp * rm_t;
  out.d_pose_ref.rightCols<3>() = jp * rm_t * (-skew(r_q));

  // Measurement pose: dp_cam/d(dt) = -R_m^T, dp_cam/d(dw) = R_m^T skew(y).
  out.d_pose_meas.leftCols<3>() = -(jp * rm_t);
  out.d_pose_meas.rightCols<3>() = jp * (rm_t * skew(y));

  // Inverse depth: dq_r/d(rho) = -ray / rho^2.
  out.d_rho = jp * (rm_t * t_wc_r.rotation * (unp.ray * (-inv_rho * inv_rho)));

  if (with_intrinsics_jacobian) {
    out.has_intrinsics_jacobian = true;
    out.d_intrinsics =
        -inv_sigma * proj.d_intrinsics +
        jp * (rm_t * t_wc_r.rotation * inv_rho) * unp.d_intrinsics;
  } else {
    out.d_intrinsics.setZero();
  }
  return out;
}

inline ResidualExpansion residual_and_jacobians(const Intrinsics& intr,
                                                const Pose& t_wc_r,
                                                const Pose& t_wc_m,
                                                const Landmark& lm,
                                                const Measurement& meas) {
  return residual_and_jacobians(intr, intr, t_wc_r, t_wc_m, lm, meas, true);
}

}  // namespace selfcal

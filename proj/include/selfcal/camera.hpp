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

// FOV (field-of-view) camera model with one radial distortion parameter w.
//
// With normalized coordinates (x, y) = (X/Z, Y/Z) and r = sqrt(x^2 + y^2),
// the distorted radius is r_d = atan(2 r tan(w/2)) / w, i.e. the radial
// scaling factor applied to (x, y) is
//
//   d(r, w) = atan(2 r tan(w/2)) / (w r)
//
// and the pixel is (f_x d x + c_x, f_y d y + c_y). Both removable
// singularities are handled by Taylor branches: as w -> 0 the factor tends
// to 1 (pinhole), and as r -> 0 it tends to 2 tan(w/2) / w.
//
// All Jacobians here are analytic; the tests check them against central
// finite differences.

#include <cmath>
#include <stdexcept>

#include "selfcal/lie.hpp"

namespace selfcal {

struct NonPositiveDepth : std::runtime_error {
  NonPositiveDepth() : std::runtime_error("point has non-positive depth") {}
};

/// The 5 parameters of the FOV camera model.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;  // radial distortion, radians

  Vec5 as_vector() const { return (Vec5() << fx, fy, cx, cy, w).finished(); }

  static Intrinsics from_vector(const Vec5& v) {
    return Intrinsics{v[0], v[1], v[2], v[3], v[4]};
  }

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && std::isfinite(cx) && std::isfinite(cy) &&
           w >= 0.0 && w < M_PI;
  }
};

namespace detail {

constexpr double kSmallW = 1e-6;
constexpr double kSmallR = 1e-8;

// Radial factor d(r, w), its derivative over r divided by r, and its
// derivative over w. The division by r keeps the point Jacobian finite on
// the optical axis.
struct FovRadial {
  double d;          // distortion factor
  double dd_dr_over_r;
  double dd_dw;
};

inline FovRadial fov_radial(double r, double w) {
  FovRadial out;
  const double r2 = r * r;
  if (std::abs(w) < kSmallW) {
    out.d = 1.0 + w * w * (1.0 / 12.0 - r2 / 3.0);
    out.dd_dr_over_r = -2.0 * w * w / 3.0;
    out.dd_dw = 2.0 * w * (1.0 / 12.0 - r2 / 3.0);
    return out;
  }
  const double tw = std::tan(0.5 * w);
  const double s = 2.0 * tw;
  const double ds_dw = 1.0 + tw * tw;  // sec^2(w/2)
  if (r < kSmallR) {
    const double sw = s / w;
    out.d = sw * (1.0 - s * s * r2 / 3.0);
    out.dd_dr_over_r = -2.0 * sw * s * s / 3.0;
    out.dd_dw = (ds_dw * w - s) / (w * w);
    return out;
  }
  const double sr = s * r;
  const double den = 1.0 + sr * sr;
  const double theta = std::atan(sr);
  out.d = theta / (w * r);
  out.dd_dr_over_r = (s / (w * den) - out.d) / r2;
  out.dd_dw = ds_dw / (w * den) - out.d / w;
  return out;
}

// Inverse radial factor q(r_d, w) = r_u / r_d, plus derivatives; used by
// unprojection.
struct FovRadialInv {
  double q;
  double dq_drd;
  double dq_dw;
};

inline FovRadialInv fov_radial_inv(double rd, double w) {
  FovRadialInv out;
  const double rd2 = rd * rd;
  if (std::abs(w) < kSmallW) {
    out.q = 1.0 + w * w * (rd2 / 3.0 - 1.0 / 12.0);
    out.dq_drd = 2.0 * w * w * rd / 3.0;
    out.dq_dw = 2.0 * w * (rd2 / 3.0 - 1.0 / 12.0);
    return out;
  }
  const double tw = std::tan(0.5 * w);
  const double s = 2.0 * tw;
  const double ds_dw = 1.0 + tw * tw;
  if (rd < kSmallR) {
    const double ws = w / s;
    out.q = ws * (1.0 + rd2 * w * w / 3.0);
    out.dq_drd = ws * 2.0 * rd * w * w / 3.0;
    out.dq_dw = (s - w * ds_dw) / (s * s);
    return out;
  }
  const double t1 = std::tan(rd * w);
  out.q = t1 / (s * rd);
  out.dq_drd = (w * (1.0 + t1 * t1) / s - out.q) / rd;
  out.dq_dw = (1.0 + t1 * t1) / s - out.q * ds_dw / s;
  return out;
}

}  // namespace detail

/// Projects a camera-frame point to a pixel. Throws NonPositiveDepth for
/// points at or behind the camera plane.
inline Vec2 project(const Intrinsics& intr, const Vec3& p_cam) {
  if (!(p_cam.z() > 0.0)) {
    throw NonPositiveDepth();
  }
  const double x = p_cam.x() / p_cam.z();
  const double y = p_cam.y() / p_cam.z();
  const double r = std::sqrt(x * x + y * y);
  const double d = detail::fov_radial(r, intr.w).d;
  return Vec2(intr.fx * d * x + intr.cx, intr.fy * d * y + intr.cy);
}

/// Projection plus its Jacobians with respect to the camera-frame point
/// (2x3) and the intrinsics vector [fx fy cx cy w] (2x5).
struct ProjectionExpansion {
  Vec2 pixel;
  Mat23 d_point;
  Mat25 d_intrinsics;
};

inline ProjectionExpansion project_expand(const Intrinsics& intr,
                                          const Vec3& p_cam) {
  if (!(p_cam.z() > 0.0)) {
    throw NonPositiveDepth();
  }
  const double inv_z = 1.0 / p_cam.z();
  const double x = p_cam.x() * inv_z;
  const double y = p_cam.y() * inv_z;
  const double r2 = x * x + y * y;
  const double r = std::sqrt(r2);
  const auto rad = detail::fov_radial(r, intr.w);
  const double d = rad.d;
  const double g = rad.dd_dr_over_r;

  ProjectionExpansion out;
  out.pixel = Vec2(intr.fx * d * x + intr.cx, intr.fy * d * y + intr.cy);

  // d(pixel)/d(x, y)
  const double axx = d + x * x * g;
  const double ayy = d + y * y * g;
  const double axy = x * y * g;
  // chain through x = X/Z, y = Y/Z
  out.d_point(0, 0) = intr.fx * axx * inv_z;
  out.d_point(0, 1) = intr.fx * axy * inv_z;
  out.d_point(0, 2) = -intr.fx * x * (d + r2 * g) * inv_z;
  out.d_point(1, 0) = intr.fy * axy * inv_z;
  out.d_point(1, 1) = intr.fy * ayy * inv_z;
  out.d_point(1, 2) = -intr.fy * y * (d + r2 * g) * inv_z;

  out.d_intrinsics.setZero();
  out.d_intrinsics(0, 0) = d * x;
  out.d_intrinsics(1, 1) = d * y;
  out.d_intrinsics(0, 2) = 1.0;
  out.d_intrinsics(1, 3) = 1.0;
  out.d_intrinsics(0, 4) = intr.fx * x * rad.dd_dw;
  out.d_intrinsics(1, 4) = intr.fy * y * rad.dd_dw;
  return out;
}

inline ProjectionExpansion project_jacobians(const Intrinsics& intr,
                                             const Vec3& p_cam) {
  return project_expand(intr, p_cam);
}

/// Unprojects a pixel to the unit ray it observes.
inline Vec3 unproject(const Intrinsics& intr, const Vec2& px) {
  const double mx = (px.x() - intr.cx) / intr.fx;
  const double my = (px.y() - intr.cy) / intr.fy;
  const double rd = std::sqrt(mx * mx + my * my);
  const double q = detail::fov_radial_inv(rd, intr.w).q;
  return Vec3(mx * q, my * q, 1.0).normalized();
}

/// Unprojection plus the 3x5 Jacobian of the unit ray with respect to the
/// intrinsics vector. Needed because the measurement model composes the
/// inverse model at the reference frame with the forward model at the
/// measurement frame.
struct UnprojectionExpansion {
  Vec3 ray;
  Mat35 d_intrinsics;
};

inline UnprojectionExpansion unproject_expand(const Intrinsics& intr,
                                              const Vec2& px) {
  const double mx = (px.x() - intr.cx) / intr.fx;
  const double my = (px.y() - intr.cy) / intr.fy;
  const double rd = std::sqrt(mx * mx + my * my);
  const auto rad = detail::fov_radial_inv(rd, intr.w);

  const Vec3 g3(mx * rad.q, my * rad.q, 1.0);

  // d(mx,my)/d(intrinsics)
  Eigen::Matrix<double, 2, 5> dm = Eigen::Matrix<double, 2, 5>::Zero();
  dm(0, 0) = -mx / intr.fx;
  dm(0, 2) = -1.0 / intr.fx;
  dm(1, 1) = -my / intr.fy;
  dm(1, 3) = -1.0 / intr.fy;

  // d(rd)/d(m); zero direction at the principal point is fine because
  // dq_drd vanishes there as well.
  Eigen::RowVector2d drd_dm = Eigen::RowVector2d::Zero();
  if (rd > 1e-12) {
    drd_dm << mx / rd, my / rd;
  }

  // d(g3_xy)/d(intrinsics) through m, rd and w.
  Eigen::Matrix<double, 2, 2> dgxy_dm;
  dgxy_dm << rad.q + mx * rad.dq_drd * drd_dm(0), mx * rad.dq_drd * drd_dm(1),
      my * rad.dq_drd * drd_dm(0), rad.q + my * rad.dq_drd * drd_dm(1);

  Eigen::Matrix<double, 3, 5> dg3 = Eigen::Matrix<double, 3, 5>::Zero();
  dg3.topRows<2>() = dgxy_dm * dm;
  dg3(0, 4) = mx * rad.dq_dw;
  dg3(1, 4) = my * rad.dq_dw;

  const double n = g3.norm();
  const Vec3 ray = g3 / n;

  UnprojectionExpansion out;
  out.ray = ray;
  out.d_intrinsics = (Mat3::Identity() - ray * ray.transpose()) / n * dg3;
  return out;
}

}  // namespace selfcal

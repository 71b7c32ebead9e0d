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

// Adaptive windowed SLAM back-end. A constant-size window of recent
// keyframes is bundle-adjusted while conditioned on the fixed poses that
// anchor or observe its tracks. The error of that conditioning edge is
// monitored: when a calibration update makes past and present inconsistent,
// the window grows backward (never across a calibration-change barrier) and
// past poses and landmarks are re-estimated until the edge agrees again.

#include <algorithm>
#include <cmath>
#include <vector>

#include "selfcal/calibration.hpp"
#include "selfcal/map.hpp"
#include "selfcal/solver.hpp"

namespace selfcal {

struct AdaptiveOptions {
  int window_size = 15;        // W, active keyframes
  int growth = 10;             // G, keyframes added per expansion
  double error_threshold = 1.5;  // whitened-residual units
  double sigma = 0.5;
  SolveOptions solve = [] {
    SolveOptions o;
    o.max_iterations = 30;
    o.tolerance = 1e-10;
    o.reject_outliers = true;
    return o;
  }();
};

struct WindowSolveInfo {
  bool ok = false;
  SolveStatus status = SolveStatus::NumericalFailure;
  double conditioning_error = 0.0;
  int window_start = 0;
  int conditioning_poses = 0;
  int measurements = 0;
  long residual_evaluations = 0;
};

class AdaptiveEstimator {
 public:
  explicit AdaptiveEstimator(const AdaptiveOptions& opts) : opts_(opts) {}

  const AdaptiveOptions& options() const { return opts_; }

  /// Solves the window [start_frame, end_frame] conditioned on the inactive
  /// trajectory. On success the map is updated and the conditioning-edge
  /// error returned; on failure the map is left untouched.
  WindowSolveInfo windowed_solve(MapStore& map,
                                 const CalibrationTimeline& timeline,
                                 int start_frame, int end_frame) {
    WindowSolveInfo info;
    info.window_start = start_frame;
    BuiltProblem built = build_window_problem(
        map, start_frame, end_frame,
        [&](int f) { return timeline.at(f); }, opts_.sigma);
    info.conditioning_poses = built.conditioning_pose_count;
    const SolveResult sr = solve(built.problem, opts_.solve);
    info.status = sr.status;
    info.residual_evaluations = sr.residual_evaluations;
    info.measurements = sr.measurements_used;
    if (sr.status == SolveStatus::NumericalFailure) {
      return info;
    }
    write_back(built, map);
    info.ok = true;
    info.conditioning_error = conditioning_error(built);
    return info;
  }

  /// Trailing window solve followed by backward expansion while the
  /// conditioning error stays above threshold. Expansion halts at the last
  /// calibration-change barrier.
  WindowSolveInfo adapt(MapStore& map, const CalibrationTimeline& timeline,
                        int end_frame, int barrier) {
    int start = std::max(barrier, end_frame - opts_.window_size + 1);
    WindowSolveInfo info = windowed_solve(map, timeline, start, end_frame);
    while (info.ok && info.conditioning_error > opts_.error_threshold &&
           start > barrier) {
      start = std::max(barrier, start - opts_.growth);
      info = windowed_solve(map, timeline, start, end_frame);
    }
    return info;
  }

  /// Conditioning-edge error of a solved window problem: trimmed mean of the
  /// whitened residual norms of measurements observed from fixed poses. The
  /// top 5% are dropped so that injected outliers do not masquerade as model
  /// error.
  static double conditioning_error(const BuiltProblem& built) {
    const Problem& p = built.problem;
    std::vector<double> norms;
    norms.reserve(built.conditioning_measurements.size());
    for (int mi : built.conditioning_measurements) {
      const auto& m = p.measurements[mi];
      const auto& lm = p.landmarks[m.landmark];
      Landmark l{p.poses[lm.ref_pose].frame_id, lm.p_r, lm.rho};
      const Intrinsics& ir = p.estimate_intrinsics
                                 ? p.intrinsics
                                 : p.frame_intrinsics[lm.ref_pose];
      const Intrinsics& im = p.estimate_intrinsics
                                 ? p.intrinsics
                                 : p.frame_intrinsics[m.meas_pose];
      double norm;
      try {
        const Vec2 h = predict(ir, im, p.poses[lm.ref_pose].pose,
                               p.poses[m.meas_pose].pose, l);
        norm = ((m.z - h) / m.sigma).norm();
      } catch (const std::runtime_error&) {
        norm = 1e6;
      }
      norms.push_back(norm);
    }
    if (norms.empty()) return 0.0;
    std::sort(norms.begin(), norms.end());
    const size_t keep =
        std::max<size_t>(1, norms.size() - norms.size() / 20);
    double sum = 0.0;
    for (size_t i = 0; i < keep; ++i) sum += norms[i];
    return sum / static_cast<double>(keep);
  }

 private:
  AdaptiveOptions opts_;
};

}  // namespace selfcal

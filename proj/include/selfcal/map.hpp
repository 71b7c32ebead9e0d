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

// Estimation-side shared map: keyframe pose estimates and inverse-depth
// tracks, plus the builders that cut bundle-adjustment problems out of it.
//
// Two problem shapes are built here:
//  - calibration problems (candidate segment / batch initialization): all
//    poses in a frame range free except the first, landmarks restricted to
//    tracks anchored inside the range, one inverse depth frozen for scale,
//    intrinsics estimated as a single shared vector;
//  - windowed SLAM problems: a contiguous active range conditioned on the
//    fixed poses that anchor or observe its tracks, per-frame intrinsics
//    from the calibration timeline, intrinsics not estimated.

#include <algorithm>
#include <functional>
#include <vector>

#include "selfcal/simulator.hpp"
#include "selfcal/solver.hpp"

namespace selfcal {

struct MapObservation {
  int frame = -1;
  Vec2 pixel = Vec2::Zero();
};

struct MapTrack {
  int id = -1;
  int anchor_frame = -1;
  Vec2 anchor_pixel = Vec2::Zero();
  double rho = 0.2;
  bool rho_initialized = false;
  std::vector<MapObservation> obs;  // non-anchor observations, frame order
};

struct MapKeyframe {
  int id = -1;
  Pose pose;
};

struct MapStore {
  std::vector<MapKeyframe> keyframes;  // index == frame id
  std::vector<MapTrack> tracks;        // index == track id

  int frame_count() const { return static_cast<int>(keyframes.size()); }
};

/// Appends a simulator keyframe: new tracks are created at their anchor,
/// existing tracks gain an observation.
inline void add_keyframe(MapStore& map, const SimKeyframe& kf,
                         const Pose& pose_init) {
  MapKeyframe mk;
  mk.id = kf.id;
  mk.pose = pose_init;
  map.keyframes.push_back(mk);
  for (const auto& m : kf.measurements) {
    if (m.track >= static_cast<int>(map.tracks.size())) {
      map.tracks.resize(m.track + 1);
    }
    MapTrack& t = map.tracks[m.track];
    if (m.anchor) {
      t.id = m.track;
      t.anchor_frame = kf.id;
      t.anchor_pixel = m.pixel;
    } else {
      t.obs.push_back(MapObservation{kf.id, m.pixel});
    }
  }
}

/// One-dimensional bootstrap of a track's inverse depth from its
/// observations: coarse log-spaced scan refined twice around the best cell.
inline void initialize_track_depth(MapStore& map, int track_id,
                                   const Intrinsics& intr) {
  MapTrack& t = map.tracks[track_id];
  if (t.obs.empty()) return;
  const Pose& ref = map.keyframes[t.anchor_frame].pose;
  Landmark lm{t.anchor_frame, t.anchor_pixel, 0.0};

  auto error_at = [&](double rho) {
    lm.rho = rho;
    double err = 0.0;
    for (const auto& o : t.obs) {
      try {
        err += (predict(intr, intr, ref, map.keyframes[o.frame].pose, lm) -
                o.pixel)
                   .squaredNorm();
      } catch (const std::runtime_error&) {
        return 1e30;
      }
    }
    return err;
  };

  double lo = std::log(1.0 / 60.0), hi = std::log(1.0 / 0.5);
  double best_rho = t.rho, best_err = 1e30;
  for (int level = 0; level < 3; ++level) {
    constexpr int kCells = 24;
    double level_best = lo;
    for (int i = 0; i <= kCells; ++i) {
      const double lr = lo + (hi - lo) * i / kCells;
      const double err = error_at(std::exp(lr));
      if (err < best_err) {
        best_err = err;
        best_rho = std::exp(lr);
        level_best = lr;
      }
    }
    const double span = (hi - lo) / kCells;
    lo = level_best - span;
    hi = level_best + span;
  }
  // With no parallax the error curve is flat and the scan minimum is
  // arbitrary; keep the mid-range prior unless the scan clearly wins.
  constexpr double kPriorRho = 0.1;
  const double prior_err = error_at(kPriorRho);
  if (best_err < 1e29 && best_err < 0.9 * prior_err) {
    t.rho = best_rho;
  } else {
    t.rho = kPriorRho;
  }
  t.rho_initialized = true;
}

struct BuiltProblem {
  Problem problem;
  std::vector<int> frame_of_pose;      // local pose index -> frame id
  std::vector<int> track_of_landmark;  // local landmark index -> track id
  std::vector<int> conditioning_measurements;  // indices into measurements
  int conditioning_pose_count = 0;

  int pose_index(int frame) const {
    for (size_t i = 0; i < frame_of_pose.size(); ++i) {
      if (frame_of_pose[i] == frame) return static_cast<int>(i);
    }
    return -1;
  }
};

namespace map_detail {

inline void freeze_scale_landmark(Problem& problem) {
  std::vector<int> obs_count(problem.landmarks.size(), 0);
  for (const auto& m : problem.measurements) ++obs_count[m.landmark];
  int best = -1;
  for (size_t i = 0; i < problem.landmarks.size(); ++i) {
    if (problem.landmarks[i].rho <= 0.0) continue;
    if (best < 0 || obs_count[i] > obs_count[best]) {
      best = static_cast<int>(i);
    }
  }
  if (best >= 0) problem.landmarks[best].frozen = true;
}

}  // namespace map_detail

/// Calibration problem over [first_frame, last_frame]: see header comment.
inline BuiltProblem build_calibration_problem(const MapStore& map,
                                              int first_frame, int last_frame,
                                              const Intrinsics& intr_init,
                                              double sigma) {
  BuiltProblem out;
  Problem& p = out.problem;
  p.estimate_intrinsics = true;
  p.intrinsics = intr_init;

  std::vector<int> pose_of_frame(map.frame_count(), -1);
  for (int f = first_frame; f <= last_frame; ++f) {
    pose_of_frame[f] = static_cast<int>(p.poses.size());
    p.poses.push_back(ProblemPose{f, map.keyframes[f].pose, f == first_frame});
    out.frame_of_pose.push_back(f);
  }

  for (const auto& t : map.tracks) {
    if (t.anchor_frame < first_frame || t.anchor_frame > last_frame) continue;
    if (!t.rho_initialized) continue;
    int in_range = 0;
    for (const auto& o : t.obs) {
      if (o.frame >= first_frame && o.frame <= last_frame) ++in_range;
    }
    if (in_range < 1) continue;
    const int li = static_cast<int>(p.landmarks.size());
    p.landmarks.push_back(ProblemLandmark{
        t.id, pose_of_frame[t.anchor_frame], t.anchor_pixel, t.rho, false});
    out.track_of_landmark.push_back(t.id);
    for (const auto& o : t.obs) {
      if (o.frame < first_frame || o.frame > last_frame) continue;
      p.measurements.push_back(
          ProblemMeasurement{li, pose_of_frame[o.frame], o.pixel, sigma, true});
    }
  }
  map_detail::freeze_scale_landmark(p);
  return out;
}

/// Windowed SLAM problem: [active_first, active_last] free, conditioned on
/// the earlier poses that anchor or observe the window's tracks.
inline BuiltProblem build_window_problem(
    const MapStore& map, int active_first, int active_last,
    const std::function<Intrinsics(int)>& intrinsics_at, double sigma) {
  BuiltProblem out;
  Problem& p = out.problem;
  p.estimate_intrinsics = false;

  // Select tracks and collect the conditioning frames they pull in.
  std::vector<char> track_used(map.tracks.size(), 0);
  std::vector<char> frame_needed(map.frame_count(), 0);
  for (const auto& t : map.tracks) {
    if (!t.rho_initialized || t.obs.empty()) continue;
    bool touches_active = (t.anchor_frame >= active_first &&
                           t.anchor_frame <= active_last);
    for (const auto& o : t.obs) {
      if (o.frame >= active_first && o.frame <= active_last) {
        touches_active = true;
        break;
      }
    }
    if (!touches_active) continue;
    track_used[t.id] = 1;
    frame_needed[t.anchor_frame] = 1;
    for (const auto& o : t.obs) frame_needed[o.frame] = 1;
  }

  std::vector<int> pose_of_frame(map.frame_count(), -1);
  for (int f = 0; f < map.frame_count(); ++f) {
    const bool active = f >= active_first && f <= active_last;
    if (!active && !frame_needed[f]) continue;
    if (!active && f > active_last) continue;
    pose_of_frame[f] = static_cast<int>(p.poses.size());
    p.poses.push_back(ProblemPose{f, map.keyframes[f].pose, !active});
    out.frame_of_pose.push_back(f);
    if (!active) ++out.conditioning_pose_count;
  }

  for (const auto& t : map.tracks) {
    if (!track_used[t.id]) continue;
    const int li = static_cast<int>(p.landmarks.size());
    p.landmarks.push_back(ProblemLandmark{
        t.id, pose_of_frame[t.anchor_frame], t.anchor_pixel, t.rho, false});
    out.track_of_landmark.push_back(t.id);
    for (const auto& o : t.obs) {
      if (pose_of_frame[o.frame] < 0) continue;
      const int mi = static_cast<int>(p.measurements.size());
      p.measurements.push_back(
          ProblemMeasurement{li, pose_of_frame[o.frame], o.pixel, sigma, true});
      if (p.poses[pose_of_frame[o.frame]].fixed) {
        out.conditioning_measurements.push_back(mi);
      }
    }
  }

  p.frame_intrinsics.resize(p.poses.size());
  for (size_t i = 0; i < p.poses.size(); ++i) {
    p.frame_intrinsics[i] = intrinsics_at(p.poses[i].frame_id);
  }

  int fixed_count = 0;
  for (const auto& pp : p.poses) fixed_count += pp.fixed ? 1 : 0;
  if (fixed_count == 0 && !p.poses.empty()) {
    p.poses.front().fixed = true;
    fixed_count = 1;
  }
  if (fixed_count < 2) {
    // A single fixed pose leaves the monocular scale free.
    map_detail::freeze_scale_landmark(p);
  }
  return out;
}

/// Copies solved poses and inverse depths back into the map.
inline void write_back(const BuiltProblem& built, MapStore& map) {
  const Problem& p = built.problem;
  for (size_t i = 0; i < p.poses.size(); ++i) {
    if (p.poses[i].fixed) continue;
    map.keyframes[p.poses[i].frame_id].pose = p.poses[i].pose;
  }
  for (size_t i = 0; i < p.landmarks.size(); ++i) {
    map.tracks[built.track_of_landmark[i]].rho = p.landmarks[i].rho;
  }
}

}  // namespace selfcal

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

// Deterministic synthetic world: a camera walking a loop (or spinning in
// place) through a static landmark field, with keyframing heuristics, pixel
// noise, outliers, track maintenance and an optional focal-length zoom
// event. The stream it produces is the oracle for the estimation stack.
//
// Conventions:
//  - World z is up. The camera optical axis is +z, x right, y down.
//  - A track's first observation (the anchor) is the exact projection; it
//    defines the reference ray of the inverse-depth parameterization.
//    Subsequent observations carry Gaussian noise and may be replaced by
//    uniform outliers.
//  - Noise is keyed by (seed, world point, frame), so regenerating part of
//    a stream reproduces untouched values bitwise.
//  - Keyframe placement is decided once, from the base-intrinsics tracking;
//    a zoom injection re-synthesizes tracks on the same keyframes.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfcal/camera.hpp"
#include "selfcal/lie.hpp"
#include "selfcal/rng.hpp"

namespace selfcal {

struct InfeasibleScenario : std::runtime_error {
  explicit InfeasibleScenario(const std::string& what)
      : std::runtime_error(what) {}
};

struct ScenarioParseError : std::runtime_error {
  explicit ScenarioParseError(const std::string& what)
      : std::runtime_error(what) {}
};

enum class PathKind { Loop, PureRotation, Stationary };

struct Scenario {
  std::uint64_t seed = 1;
  PathKind path = PathKind::Loop;
  int target_keyframes = 320;
  double path_radius = 16.0;        // meters, loop radius
  double pixel_noise_sigma = 0.5;   // pixels
  double outlier_fraction = 0.02;
  int image_width = 640;
  int image_height = 480;
  double landmark_density = 0.35;   // per m^3 over the landmark band
  int target_tracks = 128;
  double max_range = 30.0;
  double min_depth = 0.4;
  double kf_rotation = 0.1;         // radians
  double kf_translation = 0.2;      // meters
  double kf_track_loss = 0.2;       // fraction
  double gt_fx = 300.0, gt_fy = 300.0, gt_cx = 320.0, gt_cy = 240.0,
         gt_w = 0.9;
  int zoom_frame = -1;              // keyframe index; <0 disables
  double zoom_scale = 2.0;
  double zoom_w_factor = 0.7;       // longer focal length, less distortion
  int zoom_bridge_tracks = 12;      // tracks kept alive across the zoom

  Intrinsics gt_intrinsics() const {
    return Intrinsics{gt_fx, gt_fy, gt_cx, gt_cy, gt_w};
  }
  Intrinsics zoomed_intrinsics() const {
    return Intrinsics{gt_fx * zoom_scale, gt_fy * zoom_scale, gt_cx, gt_cy,
                      gt_w * zoom_w_factor};
  }
};

struct SimMeasurement {
  int track = -1;
  Vec2 pixel = Vec2::Zero();
  bool anchor = false;
};

struct SimKeyframe {
  int id = -1;
  Pose pose;  // ground truth camera-to-world
  std::vector<SimMeasurement> measurements;
};

struct SimTrack {
  int id = -1;
  int point = -1;  // index into world_points
  int anchor_frame = -1;
  Vec2 anchor_pixel = Vec2::Zero();
  double gt_rho = 0.0;  // inverse range from the anchor camera
  int last_frame = -1;
};

struct SimStream {
  Scenario scenario;
  std::vector<SimKeyframe> keyframes;
  std::vector<SimTrack> tracks;
  std::vector<Vec3> world_points;
  std::vector<std::pair<int, Intrinsics>> gt_timeline;  // (start frame, intr)
  double path_length = 0.0;

  const Intrinsics& gt_intrinsics_at(int frame) const {
    const Intrinsics* out = &gt_timeline.front().second;
    for (const auto& [start, intr] : gt_timeline) {
      if (frame >= start) out = &intr;
    }
    return *out;
  }
};

namespace sim_detail {

constexpr std::uint64_t kPurposeNoise = 1;
constexpr std::uint64_t kPurposeOutlier = 2;
constexpr std::uint64_t kPurposeSpawn = 3;
constexpr std::uint64_t kPurposeWorld = 7;

inline Pose loop_pose(const Scenario& scn, double s) {
  const double r = scn.path_radius;
  const double phi = s / r;
  Pose pose;
  pose.translation =
      Vec3(r * std::cos(phi), r * std::sin(phi),
           1.5 + 0.03 * std::sin(2.0 * M_PI * s / 1.7));
  const Vec3 forward = Vec3(-std::sin(phi), std::cos(phi), 0.0);
  const Vec3 up(0.0, 0.0, 1.0);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right).normalized();
  Mat3 base;
  base.col(0) = right;
  base.col(1) = down;
  base.col(2) = forward;
  const Vec3 sway(0.035 * std::sin(2.0 * M_PI * s / 1.9),
                  0.05 * std::sin(2.0 * M_PI * s / 7.3),
                  0.025 * std::sin(2.0 * M_PI * s / 3.1));
  pose.rotation = base * so3_exp(sway);
  return pose;
}

inline Pose rotation_pose(double psi) {
  Pose pose;
  pose.translation = Vec3(0.0, 0.0, 1.5);
  const Vec3 forward(std::cos(psi), std::sin(psi), 0.0);
  const Vec3 up(0.0, 0.0, 1.0);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right).normalized();
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  return pose;
}

inline std::vector<Vec3> sample_world(const Scenario& scn) {
  SplitMix64 rng = keyed_rng(scn.seed, kPurposeWorld, 0, 0);
  std::vector<Vec3> points;
  double r_in, r_out, z_lo, z_hi, cx = 0.0, cy = 0.0;
  if (scn.path == PathKind::Loop) {
    r_in = std::max(scn.path_radius - 9.0, 0.5);
    r_out = scn.path_radius + 13.0;
    z_lo = -1.0;
    z_hi = 5.0;
  } else {
    r_in = 3.0;
    r_out = 20.0;
    z_lo = -2.0;
    z_hi = 6.0;
  }
  const double volume =
      M_PI * (r_out * r_out - r_in * r_in) * (z_hi - z_lo);
  const int count = std::max(64, static_cast<int>(volume * scn.landmark_density));
  points.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double theta = rng.next_uniform(0.0, 2.0 * M_PI);
    const double u = rng.next_double();
    const double radius =
        std::sqrt(r_in * r_in + u * (r_out * r_out - r_in * r_in));
    const double z = rng.next_uniform(z_lo, z_hi);
    points.emplace_back(cx + radius * std::cos(theta),
                        cy + radius * std::sin(theta), z);
  }
  return points;
}

struct Visibility {
  bool ok = false;
  Vec2 pixel = Vec2::Zero();
  double range = 0.0;
};

inline Visibility visible(const Scenario& scn, const Intrinsics& intr,
                          const Pose& pose, const Vec3& point) {
  Visibility out;
  const Vec3 p_cam = pose.inverse().apply(point);
  if (p_cam.z() < scn.min_depth) return out;
  out.range = p_cam.norm();
  if (out.range > scn.max_range) return out;
  const Vec2 px = project(intr, p_cam);
  if (px.x() < 0.5 || px.x() > scn.image_width - 0.5 || px.y() < 0.5 ||
      px.y() > scn.image_height - 0.5) {
    return out;
  }
  out.ok = true;
  out.pixel = px;
  return out;
}

/// Deterministic choice of `need` spawn candidates (partial Fisher-Yates on
/// the sorted candidate list).
inline std::vector<int> select_spawns(std::vector<int> candidates, int need,
                                      std::uint64_t seed, int frame) {
  SplitMix64 rng = keyed_rng(seed, kPurposeSpawn, static_cast<std::uint64_t>(frame), 0);
  const int n = static_cast<int>(candidates.size());
  const int take = std::min(need, n);
  for (int i = 0; i < take; ++i) {
    const int j = i + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(take);
  return candidates;
}

inline Vec2 noisy_pixel(const Scenario& scn, const Intrinsics& intr,
                        int point_idx, int frame, const Vec2& exact) {
  if (scn.outlier_fraction > 0.0) {
    SplitMix64 orng = keyed_rng(scn.seed, kPurposeOutlier,
                                static_cast<std::uint64_t>(point_idx),
                                static_cast<std::uint64_t>(frame));
    if (orng.next_double() < scn.outlier_fraction) {
      return Vec2(orng.next_uniform(0.0, scn.image_width),
                  orng.next_uniform(0.0, scn.image_height));
    }
  }
  (void)intr;
  if (scn.pixel_noise_sigma <= 0.0) return exact;
  SplitMix64 nrng = keyed_rng(scn.seed, kPurposeNoise,
                              static_cast<std::uint64_t>(point_idx),
                              static_cast<std::uint64_t>(frame));
  return exact + scn.pixel_noise_sigma *
                     Vec2(nrng.next_gaussian(), nrng.next_gaussian());
}

/// Track synthesis over fixed keyframe poses. cut_frame >= 0 kills all live
/// tracks entering that keyframe except `bridge_n` of them.
inline SimStream synthesize(const Scenario& scn,
                            const std::vector<Pose>& kf_poses,
                            const std::vector<std::pair<int, Intrinsics>>& timeline,
                            int cut_frame, int bridge_n,
                            std::vector<Vec3> world) {
  SimStream stream;
  stream.scenario = scn;
  stream.world_points = std::move(world);
  stream.gt_timeline = timeline;

  std::vector<bool> used(stream.world_points.size(), false);
  std::vector<int> live;  // track indices

  for (size_t f = 0; f < kf_poses.size(); ++f) {
    const int frame = static_cast<int>(f);
    const Intrinsics& intr = stream.gt_intrinsics_at(frame);
    const Pose& pose = kf_poses[f];
    SimKeyframe kf;
    kf.id = frame;
    kf.pose = pose;

    if (frame == cut_frame && !live.empty()) {
      std::vector<int> bridges;
      for (int t : live) {
        if (static_cast<int>(bridges.size()) >= bridge_n) break;
        if (visible(scn, intr, pose, stream.world_points[stream.tracks[t].point]).ok) {
          bridges.push_back(t);
        }
      }
      live = bridges;
    }

    // Continue surviving tracks.
    std::vector<int> survivors;
    survivors.reserve(live.size());
    for (int t : live) {
      auto& track = stream.tracks[t];
      const auto vis = visible(scn, intr, pose, stream.world_points[track.point]);
      if (!vis.ok) continue;
      kf.measurements.push_back(
          SimMeasurement{track.id,
                         noisy_pixel(scn, intr, track.point, frame, vis.pixel),
                         false});
      track.last_frame = frame;
      survivors.push_back(t);
    }
    live = std::move(survivors);

    // Top up to the target track count.
    const int need = scn.target_tracks - static_cast<int>(live.size());
    if (need > 0) {
      std::vector<int> candidates;
      for (size_t p = 0; p < stream.world_points.size(); ++p) {
        if (used[p]) continue;
        if (visible(scn, intr, pose, stream.world_points[p]).ok) {
          candidates.push_back(static_cast<int>(p));
        }
      }
      for (int p : select_spawns(std::move(candidates), need, scn.seed, frame)) {
        used[p] = true;
        const auto vis = visible(scn, intr, pose, stream.world_points[p]);
        SimTrack track;
        track.id = static_cast<int>(stream.tracks.size());
        track.point = p;
        track.anchor_frame = frame;
        track.anchor_pixel = vis.pixel;  // anchors are exact by convention
        track.gt_rho = 1.0 / vis.range;
        track.last_frame = frame;
        kf.measurements.push_back(SimMeasurement{track.id, vis.pixel, true});
        stream.tracks.push_back(track);
        live.push_back(track.id);
      }
    }

    if (static_cast<int>(kf.measurements.size()) < 8) {
      throw InfeasibleScenario("keyframe " + std::to_string(frame) +
                               " sees fewer than 8 landmarks");
    }
    stream.keyframes.push_back(std::move(kf));
  }

  stream.path_length = 0.0;
  for (size_t f = 1; f < kf_poses.size(); ++f) {
    stream.path_length +=
        (kf_poses[f].translation - kf_poses[f - 1].translation).norm();
  }
  return stream;
}

/// Walks the path and places keyframes by the motion/track-loss heuristics.
inline std::vector<Pose> simulate_keyframe_poses(const Scenario& scn,
                                                 const std::vector<Vec3>& world) {
  std::vector<Pose> kf_poses;
  const Intrinsics intr = scn.gt_intrinsics();

  auto pose_at = [&](double s) {
    switch (scn.path) {
      case PathKind::Loop:
        return loop_pose(scn, s);
      case PathKind::PureRotation:
        return rotation_pose(s);
      case PathKind::Stationary:
      default:
        return rotation_pose(0.0);
    }
  };

  // Live world-point set, maintained exactly like track synthesis so the
  // track-loss criterion sees the real tracks.
  std::vector<bool> used(world.size(), false);
  std::vector<int> live_points;
  auto refresh_tracks = [&](const Pose& pose, int frame) {
    std::vector<int> survivors;
    for (int p : live_points) {
      if (visible(scn, intr, pose, world[p]).ok) survivors.push_back(p);
    }
    live_points = std::move(survivors);
    const int need = scn.target_tracks - static_cast<int>(live_points.size());
    if (need > 0) {
      std::vector<int> candidates;
      for (size_t p = 0; p < world.size(); ++p) {
        if (!used[p] && visible(scn, intr, pose, world[p]).ok) {
          candidates.push_back(static_cast<int>(p));
        }
      }
      for (int p : select_spawns(std::move(candidates), need, scn.seed, frame)) {
        used[p] = true;
        live_points.push_back(p);
      }
    }
  };

  double s = 0.0;
  Pose pose = pose_at(0.0);
  kf_poses.push_back(pose);
  refresh_tracks(pose, 0);

  if (scn.path == PathKind::Stationary) {
    return kf_poses;  // no motion, keyframing heuristics never fire again
  }

  const double step = scn.path == PathKind::PureRotation ? 0.004 : 0.04;
  const double s_max = scn.path == PathKind::PureRotation
                           ? 4.0 * M_PI
                           : 1e9;
  Pose last_kf = pose;
  while (static_cast<int>(kf_poses.size()) < scn.target_keyframes && s < s_max) {
    s += step;
    pose = pose_at(s);
    const double d_rot =
        so3_log(pose.rotation * last_kf.rotation.transpose()).norm();
    const double d_trans = (pose.translation - last_kf.translation).norm();
    int lost = 0;
    for (int p : live_points) {
      if (!visible(scn, intr, pose, world[p]).ok) ++lost;
    }
    const double loss_frac =
        live_points.empty() ? 0.0
                            : static_cast<double>(lost) / live_points.size();
    if (d_rot > scn.kf_rotation || d_trans > scn.kf_translation ||
        loss_frac > scn.kf_track_loss) {
      kf_poses.push_back(pose);
      last_kf = pose;
      refresh_tracks(pose, static_cast<int>(kf_poses.size()) - 1);
    }
  }
  return kf_poses;
}

}  // namespace sim_detail

/// Regenerates the portion of a stream from keyframe `frame` on with the
/// focal lengths scaled by `scale` (and the distortion reduced), cutting all
/// tracks that straddle the boundary except the scenario's bridge set.
inline SimStream inject_zoom(const SimStream& in, int frame, double scale) {
  if (in.world_points.empty()) {
    throw InfeasibleScenario("stream does not carry world ground truth");
  }
  if (frame <= 0 || frame >= static_cast<int>(in.keyframes.size())) {
    throw InfeasibleScenario("zoom frame must be interior to the stream");
  }
  Scenario scn = in.scenario;
  scn.zoom_frame = frame;
  scn.zoom_scale = scale;
  std::vector<Pose> poses;
  poses.reserve(in.keyframes.size());
  for (const auto& kf : in.keyframes) poses.push_back(kf.pose);
  std::vector<std::pair<int, Intrinsics>> timeline = {
      {0, scn.gt_intrinsics()}, {frame, scn.zoomed_intrinsics()}};
  return sim_detail::synthesize(scn, poses, timeline, frame,
                                scn.zoom_bridge_tracks, in.world_points);
}

/// Generates the full keyframe stream for a scenario (including its zoom
/// event, if configured).
inline SimStream generate(const Scenario& scn) {
  const std::vector<Vec3> world = sim_detail::sample_world(scn);
  const std::vector<Pose> poses = sim_detail::simulate_keyframe_poses(scn, world);
  SimStream stream = sim_detail::synthesize(
      scn, poses, {{0, scn.gt_intrinsics()}}, -1, 0, world);
  if (scn.zoom_frame > 0) {
    stream = inject_zoom(stream, scn.zoom_frame, scn.zoom_scale);
  }
  return stream;
}

/// Degenerate-motion scenarios used to exercise the rejection paths.
inline SimStream degenerate_motion(PathKind kind, std::uint64_t seed = 1) {
  Scenario scn;
  scn.path = kind;
  scn.seed = seed;
  scn.target_keyframes = 80;
  scn.landmark_density = 0.2;
  return generate(scn);
}

// ---------------------------------------------------------------------------
// Scenario text format: one `key = value` per line, '#' comments.
// ---------------------------------------------------------------------------

inline std::string path_kind_name(PathKind k) {
  switch (k) {
    case PathKind::Loop:
      return "loop";
    case PathKind::PureRotation:
      return "pure_rotation";
    case PathKind::Stationary:
      return "stationary";
  }
  return "loop";
}

inline PathKind path_kind_from(const std::string& s) {
  if (s == "loop") return PathKind::Loop;
  if (s == "pure_rotation") return PathKind::PureRotation;
  if (s == "stationary") return PathKind::Stationary;
  throw ScenarioParseError("unknown path kind: " + s);
}

inline std::string scenario_echo(const Scenario& s) {
  std::ostringstream out;
  out.precision(17);
  out << "seed = " << s.seed << "\n";
  out << "path = " << path_kind_name(s.path) << "\n";
  out << "target_keyframes = " << s.target_keyframes << "\n";
  out << "path_radius = " << s.path_radius << "\n";
  out << "pixel_noise_sigma = " << s.pixel_noise_sigma << "\n";
  out << "outlier_fraction = " << s.outlier_fraction << "\n";
  out << "image_width = " << s.image_width << "\n";
  out << "image_height = " << s.image_height << "\n";
  out << "landmark_density = " << s.landmark_density << "\n";
  out << "target_tracks = " << s.target_tracks << "\n";
  out << "max_range = " << s.max_range << "\n";
  out << "min_depth = " << s.min_depth << "\n";
  out << "kf_rotation = " << s.kf_rotation << "\n";
  out << "kf_translation = " << s.kf_translation << "\n";
  out << "kf_track_loss = " << s.kf_track_loss << "\n";
  out << "gt_fx = " << s.gt_fx << "\n";
  out << "gt_fy = " << s.gt_fy << "\n";
  out << "gt_cx = " << s.gt_cx << "\n";
  out << "gt_cy = " << s.gt_cy << "\n";
  out << "gt_w = " << s.gt_w << "\n";
  out << "zoom_frame = " << s.zoom_frame << "\n";
  out << "zoom_scale = " << s.zoom_scale << "\n";
  out << "zoom_w_factor = " << s.zoom_w_factor << "\n";
  out << "zoom_bridge_tracks = " << s.zoom_bridge_tracks << "\n";
  return out.str();
}

inline Scenario parse_scenario(const std::string& text) {
  Scenario s;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = v.find_last_not_of(" \t\r");
      return v.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ScenarioParseError("line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "seed") s.seed = std::stoull(value);
      else if (key == "path") s.path = path_kind_from(value);
      else if (key == "target_keyframes") s.target_keyframes = std::stoi(value);
      else if (key == "path_radius") s.path_radius = std::stod(value);
      else if (key == "pixel_noise_sigma") s.pixel_noise_sigma = std::stod(value);
      else if (key == "outlier_fraction") s.outlier_fraction = std::stod(value);
      else if (key == "image_width") s.image_width = std::stoi(value);
      else if (key == "image_height") s.image_height = std::stoi(value);
      else if (key == "landmark_density") s.landmark_density = std::stod(value);
      else if (key == "target_tracks") s.target_tracks = std::stoi(value);
      else if (key == "max_range") s.max_range = std::stod(value);
      else if (key == "min_depth") s.min_depth = std::stod(value);
      else if (key == "kf_rotation") s.kf_rotation = std::stod(value);
      else if (key == "kf_translation") s.kf_translation = std::stod(value);
      else if (key == "kf_track_loss") s.kf_track_loss = std::stod(value);
      else if (key == "gt_fx") s.gt_fx = std::stod(value);
      else if (key == "gt_fy") s.gt_fy = std::stod(value);
      else if (key == "gt_cx") s.gt_cx = std::stod(value);
      else if (key == "gt_cy") s.gt_cy = std::stod(value);
      else if (key == "gt_w") s.gt_w = std::stod(value);
      else if (key == "zoom_frame") s.zoom_frame = std::stoi(value);
      else if (key == "zoom_scale") s.zoom_scale = std::stod(value);
      else if (key == "zoom_w_factor") s.zoom_w_factor = std::stod(value);
      else if (key == "zoom_bridge_tracks") s.zoom_bridge_tracks = std::stoi(value);
      else throw ScenarioParseError("line " + std::to_string(line_no) +
                                    ": unknown key '" + key + "'");
    } catch (const ScenarioParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ScenarioParseError("line " + std::to_string(line_no) +
                               ": bad value for '" + key + "'");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stream dump/load: line-delimited, full double precision, for replay and
// cross-implementation comparison.
// ---------------------------------------------------------------------------

inline std::string dump_stream(const SimStream& stream) {
  std::ostringstream out;
  out.precision(17);
  out << "selfcal-stream 1\n";
  for (const auto& [start, intr] : stream.gt_timeline) {
    out << "intr " << start << ' ' << intr.fx << ' ' << intr.fy << ' '
        << intr.cx << ' ' << intr.cy << ' ' << intr.w << "\n";
  }
  for (const auto& t : stream.tracks) {
    out << "track " << t.id << ' ' << t.anchor_frame << ' '
        << t.anchor_pixel.x() << ' ' << t.anchor_pixel.y() << ' ' << t.gt_rho
        << "\n";
  }
  for (const auto& kf : stream.keyframes) {
    const Eigen::Quaterniond q(kf.pose.rotation);
    out << "kf " << kf.id << ' ' << q.w() << ' ' << q.x() << ' ' << q.y()
        << ' ' << q.z() << ' ' << kf.pose.translation.x() << ' '
        << kf.pose.translation.y() << ' ' << kf.pose.translation.z() << ' '
        << kf.measurements.size();
    for (const auto& m : kf.measurements) {
      out << ' ' << m.track << ' ' << m.pixel.x() << ' ' << m.pixel.y();
    }
    out << "\n";
  }
  return out.str();
}

inline SimStream load_stream(const std::string& text) {
  SimStream stream;
  std::istringstream in(text);
  std::string tag;
  int version;
  in >> tag >> version;
  if (tag != "selfcal-stream" || version != 1) {
    throw ScenarioParseError("not a selfcal stream dump");
  }
  while (in >> tag) {
    if (tag == "intr") {
      int start;
      Intrinsics intr;
      in >> start >> intr.fx >> intr.fy >> intr.cx >> intr.cy >> intr.w;
      stream.gt_timeline.emplace_back(start, intr);
    } else if (tag == "track") {
      SimTrack t;
      in >> t.id >> t.anchor_frame >> t.anchor_pixel.x() >>
          t.anchor_pixel.y() >> t.gt_rho;
      stream.tracks.push_back(t);
    } else if (tag == "kf") {
      SimKeyframe kf;
      double qw, qx, qy, qz;
      size_t n;
      in >> kf.id >> qw >> qx >> qy >> qz >> kf.pose.translation.x() >>
          kf.pose.translation.y() >> kf.pose.translation.z() >> n;
      kf.pose.rotation = Eigen::Quaterniond(qw, qx, qy, qz).toRotationMatrix();
      kf.measurements.resize(n);
      for (auto& m : kf.measurements) {
        in >> m.track >> m.pixel.x() >> m.pixel.y();
      }
      for (auto& m : kf.measurements) {
        m.anchor = stream.tracks[m.track].anchor_frame == kf.id;
      }
      stream.keyframes.push_back(std::move(kf));
    } else {
      throw ScenarioParseError("unknown record tag: " + tag);
    }
  }
  for (size_t f = 1; f < stream.keyframes.size(); ++f) {
    stream.path_length += (stream.keyframes[f].pose.translation -
                           stream.keyframes[f - 1].pose.translation)
                              .norm();
  }
  return stream;
}

}  // namespace selfcal

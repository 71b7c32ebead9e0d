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

// End-to-end experiment pipeline: simulator stream -> windowed SLAM +
// self-calibration + change detection, producing a per-keyframe trace and a
// summary. Runs synchronously in keyframe order by default; an opt-in mode
// moves window expansions onto a background task whose results merge at the
// next keyframe boundary, which keeps runs deterministic.
//
// Trajectory error is reported after a global scale alignment (monocular
// scale is gauge-fixed to an arbitrary value by the frozen inverse depth,
// so raw positions carry a constant scale factor that is not an estimation
// error).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "selfcal/adaptive_window.hpp"
#include "selfcal/calibration.hpp"
#include "selfcal/change_detection.hpp"
#include "selfcal/map.hpp"
#include "selfcal/simulator.hpp"

namespace selfcal {

struct PipelineNumericalError : std::runtime_error {
  explicit PipelineNumericalError(const std::string& what)
      : std::runtime_error(what) {}
};

struct PipelineOptions {
  double alpha = 0.1;
  int n_test = 3;
  int pq_capacity = 5;
  int segment_size = 10;
  bool change_detection = true;
  bool background_adapt = false;
  double init_score_threshold = -32.0;
  double init_fov_deg = 90.0;
  double init_w = 1.0;
  int window_size = 15;
  int window_growth = 10;
  double conditioning_error_threshold = 1.5;
};

struct TraceRow {
  int frame = 0;
  int mode = 0;  // 0 = batch initialization, 1 = priority-queue operation
  Vec5 intrinsics = Vec5::Zero();
  double score = std::numeric_limits<double>::infinity();
  int pq_size = 0;
  double p_value = -1.0;  // -1: no test this keyframe
  double t2 = -1.0;
  double v = -1.0;
  int gate_counter = 0;
  double conditioning_error = 0.0;
  int window_measurements = 0;
  Vec3 position_est = Vec3::Zero();
  Vec3 position_gt = Vec3::Zero();
};

struct RunSummary {
  int keyframes = 0;
  double path_length = 0.0;
  std::vector<int> event_change_frames;
  std::vector<int> event_detect_frames;
  int zoom_frame = -1;
  double detection_latency = std::numeric_limits<double>::quiet_NaN();
  double final_error_m = 0.0;
  double final_error_pct = 0.0;
  double scale_alignment = 1.0;
  double pre_change_max_rel_err = 0.0;
  double post_change_max_rel_err = 0.0;
  int init_completed_frame = -1;
  int accepted_segments = 0;
  int candidate_count = 0;
  double mean_candidate_ops = 0.0;
  int solver_failures = 0;
};

struct RunReport {
  std::vector<TraceRow> rows;
  RunSummary summary;
  std::string scenario_echo;
};

namespace pipeline_detail {

inline Intrinsics initial_guess(const Scenario& scn,
                                const PipelineOptions& opt) {
  Intrinsics intr;
  intr.fx = intr.fy = 0.5 * scn.image_width /
                      std::tan(0.5 * opt.init_fov_deg * M_PI / 180.0);
  intr.cx = 0.5 * scn.image_width;
  intr.cy = 0.5 * scn.image_height;
  intr.w = opt.init_w;
  return intr;
}

inline double max_rel_err(const Intrinsics& est, const Intrinsics& gt) {
  const Vec5 e = est.as_vector();
  const Vec5 g = gt.as_vector();
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    worst = std::max(worst, std::abs(e[i] - g[i]) / std::abs(g[i]));
  }
  return worst;
}

}  // namespace pipeline_detail

inline RunReport run_pipeline(const SimStream& stream,
                              const PipelineOptions& opt) {
  RunReport report;
  report.scenario_echo = scenario_echo(stream.scenario);
  const Scenario& scn = stream.scenario;
  const double sigma = scn.pixel_noise_sigma > 0.0 ? scn.pixel_noise_sigma : 1.0;

  SelfCalOptions cal_opts;
  cal_opts.pq_capacity = opt.pq_capacity;
  cal_opts.segment_size = opt.segment_size;
  cal_opts.init_score_threshold = opt.init_score_threshold;
  cal_opts.sigma = sigma;

  AdaptiveOptions aac_opts;
  aac_opts.window_size = opt.window_size;
  aac_opts.growth = opt.window_growth;
  aac_opts.error_threshold = opt.conditioning_error_threshold;
  aac_opts.sigma = sigma;

  const Intrinsics guess = pipeline_detail::initial_guess(scn, opt);
  MapStore map;
  CalibrationTimeline timeline(guess);
  SelfCalibrator calibrator(cal_opts, guess);
  AdaptiveEstimator adaptive(aac_opts);
  ChangeGate gate{opt.alpha, opt.n_test, 0, 0};

  double current_score = std::numeric_limits<double>::infinity();
  long candidate_ops = 0;
  int failure_streak = 0;
  std::future<std::pair<MapStore, bool>> background;
  int background_end = -1;

  for (const auto& kf : stream.keyframes) {
    const int f = kf.id;

    // Merge a finished background expansion before touching the map.
    if (background.valid()) {
      auto [solved_map, ok] = background.get();
      if (ok) {
        for (int i = 0; i <= background_end; ++i) {
          map.keyframes[i].pose = solved_map.keyframes[i].pose;
        }
        for (size_t t = 0; t < solved_map.tracks.size(); ++t) {
          map.tracks[t].rho = solved_map.tracks[t].rho;
        }
      }
    }

    // Front-end: constant-velocity pose prediction.
    Pose pose_init;
    if (f == 0) {
      pose_init = kf.pose;  // world frame anchored at the first camera
    } else if (f == 1) {
      pose_init = map.keyframes[0].pose;
    } else {
      const Pose& a = map.keyframes[f - 2].pose;
      const Pose& b = map.keyframes[f - 1].pose;
      pose_init = b.compose(a.inverse().compose(b));
    }
    add_keyframe(map, kf, pose_init);
    for (const auto& m : kf.measurements) {
      if (!m.anchor && !map.tracks[m.track].rho_initialized) {
        initialize_track_depth(map, m.track,
                               timeline.at(map.tracks[m.track].anchor_frame));
      }
    }

    // Back-end window. During batch initialization the batch solve below
    // re-estimates the whole regime, so expansions are skipped.
    const int barrier = timeline.last_change_frame();
    WindowSolveInfo win;
    if (calibrator.mode() == CalMode::Initializing) {
      const int start = std::max(barrier, f - aac_opts.window_size + 1);
      win = adaptive.windowed_solve(map, timeline, start, f);
    } else if (opt.background_adapt) {
      const int start = std::max(barrier, f - aac_opts.window_size + 1);
      win = adaptive.windowed_solve(map, timeline, start, f);
      if (win.ok && win.conditioning_error > aac_opts.error_threshold) {
        MapStore snapshot = map;
        CalibrationTimeline timeline_copy = timeline;
        background_end = f;
        background = std::async(
            std::launch::async,
            [snapshot = std::move(snapshot), timeline_copy, aac_opts, f,
             barrier]() mutable {
              AdaptiveEstimator worker(aac_opts);
              const WindowSolveInfo info =
                  worker.adapt(snapshot, timeline_copy, f, barrier);
              return std::make_pair(std::move(snapshot), info.ok);
            });
      }
    } else {
      win = adaptive.adapt(map, timeline, f, barrier);
    }
    if (!win.ok) {
      if (++failure_streak > 10) {
        throw PipelineNumericalError("windowed solver failed repeatedly");
      }
      ++report.summary.solver_failures;
    } else {
      failure_streak = 0;
    }

    TraceRow row;
    row.frame = f;
    row.conditioning_error = win.conditioning_error;
    row.window_measurements = win.measurements;

    // Self-calibration.
    if (calibrator.mode() == CalMode::Initializing) {
      const InitStepInfo info =
          calibrator.run_initialization_step(map, timeline, f);
      current_score = info.score;
      if (info.completed) {
        report.summary.init_completed_frame = calibrator.init_completed_frame();
      }
    } else if (const auto range = calibrator.segment_ready(f)) {
      CandidateOutcome outcome = calibrator.evaluate_candidate(
          map, range->first, range->second, timeline.at(f));
      ++report.summary.candidate_count;
      candidate_ops += outcome.segment.solve_result.residual_evaluations;

      bool allow_swap = outcome.valid;
      if (!outcome.valid) {
        gate.reset_counter();
      } else if (opt.change_detection && calibrator.pq().joint()) {
        const TestResult tr =
            behrens_fisher_test(*calibrator.pq().joint(),
                                outcome.segment.posterior);
        row.p_value = tr.p_value;
        row.t2 = tr.t2;
        row.v = tr.v;
        const bool reject = !tr.singular && !tr.degenerate_dof &&
                            tr.p_value <= gate.alpha;
        const auto event = gate_update(gate, tr, f);
        if (event) {
          report.summary.event_change_frames.push_back(event->change_frame);
          report.summary.event_detect_frames.push_back(event->detected_frame);
          calibrator.on_change_event(event->change_frame, timeline);
          calibrator.run_initialization_step(map, timeline, f);
          current_score = std::numeric_limits<double>::infinity();
          allow_swap = false;
        } else if (reject) {
          // A rejecting segment is evidence of different parameters; do not
          // fold it into the queue while the gate is counting.
          allow_swap = false;
        }
      }
      if (allow_swap) {
        const SwapOutcome sw =
            calibrator.try_swap_and_estimate(std::move(outcome.segment));
        if (sw.joint_ok) {
          timeline.assign_current(
              Intrinsics::from_vector(calibrator.pq().joint()->mu));
          current_score = entropy_score(calibrator.pq().joint()->sigma_prime);
        }
      }
    }

    row.mode = calibrator.mode() == CalMode::Initializing ? 0 : 1;
    row.intrinsics = timeline.at(f).as_vector();
    row.score = current_score;
    row.pq_size = calibrator.pq().size();
    row.gate_counter = gate.counter;
    row.position_est = map.keyframes[f].pose.translation;
    row.position_gt = kf.pose.translation;
    report.rows.push_back(row);
  }

  if (background.valid()) {
    auto [solved_map, ok] = background.get();
    if (ok) {
      for (int i = 0; i <= background_end; ++i) {
        map.keyframes[i].pose = solved_map.keyframes[i].pose;
      }
      for (size_t t = 0; t < solved_map.tracks.size(); ++t) {
        map.tracks[t].rho = solved_map.tracks[t].rho;
      }
    }
  }

  // Final settling pass so past poses reflect the final calibration.
  if (!stream.keyframes.empty()) {
    const int last = stream.keyframes.back().id;
    adaptive.adapt(map, timeline, last, timeline.last_change_frame());
    for (auto& row : report.rows) {
      row.position_est = map.keyframes[row.frame].pose.translation;
    }
  }

  // Summary.
  RunSummary& s = report.summary;
  s.keyframes = static_cast<int>(stream.keyframes.size());
  s.path_length = stream.path_length;
  s.zoom_frame = scn.zoom_frame;
  s.accepted_segments = calibrator.accepted_segments();
  s.mean_candidate_ops =
      s.candidate_count > 0
          ? static_cast<double>(candidate_ops) / s.candidate_count
          : 0.0;
  if (s.init_completed_frame < 0) {
    s.init_completed_frame = calibrator.init_completed_frame();
  }
  if (!s.event_change_frames.empty() && s.zoom_frame > 0) {
    s.detection_latency = s.event_change_frames.front() - s.zoom_frame;
  }

  // Global scale alignment (monocular gauge), then end-pose error.
  const Vec3 origin = stream.keyframes.front().pose.translation;
  double dot = 0.0, nrm = 0.0;
  for (const auto& row : report.rows) {
    const Vec3 qe = row.position_est - origin;
    const Vec3 qg = row.position_gt - origin;
    dot += qe.dot(qg);
    nrm += qe.squaredNorm();
  }
  s.scale_alignment = nrm > 1e-12 ? dot / nrm : 1.0;
  const Vec3 qe_end = report.rows.back().position_est - origin;
  const Vec3 qg_end = report.rows.back().position_gt - origin;
  s.final_error_m = (s.scale_alignment * qe_end - qg_end).norm();
  s.final_error_pct =
      s.path_length > 0.0 ? 100.0 * s.final_error_m / s.path_length : 0.0;

  const int last_frame = s.keyframes - 1;
  const int pre_frame = scn.zoom_frame > 0 ? scn.zoom_frame - 1 : last_frame;
  s.pre_change_max_rel_err = pipeline_detail::max_rel_err(
      timeline.at(pre_frame), stream.gt_intrinsics_at(pre_frame));
  s.post_change_max_rel_err = pipeline_detail::max_rel_err(
      timeline.at(last_frame), stream.gt_intrinsics_at(last_frame));
  return report;
}

inline RunReport run_pipeline(const Scenario& scn, const PipelineOptions& opt) {
  return run_pipeline(generate(scn), opt);
}

// ---------------------------------------------------------------------------
// CSV serialization. Fixed column order, header row mandatory, full double
// precision so regenerated traces compare exactly.
// ---------------------------------------------------------------------------

inline std::string trace_csv(const RunReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "frame,mode,fx,fy,cx,cy,w,score,pq_size,p_value,t2,v,gate_counter,"
         "cond_error,window_meas,est_x,est_y,est_z,gt_x,gt_y,gt_z\n";
  for (const auto& r : report.rows) {
    out << r.frame << ',' << r.mode << ',' << r.intrinsics[0] << ','
        << r.intrinsics[1] << ',' << r.intrinsics[2] << ',' << r.intrinsics[3]
        << ',' << r.intrinsics[4] << ',' << r.score << ',' << r.pq_size << ','
        << r.p_value << ',' << r.t2 << ',' << r.v << ',' << r.gate_counter
        << ',' << r.conditioning_error << ',' << r.window_measurements << ','
        << r.position_est.x() << ',' << r.position_est.y() << ','
        << r.position_est.z() << ',' << r.position_gt.x() << ','
        << r.position_gt.y() << ',' << r.position_gt.z() << "\n";
  }
  return out.str();
}

inline std::string summary_csv(const RunReport& report) {
  const RunSummary& s = report.summary;
  std::ostringstream out;
  out.precision(17);
  out << "key,value\n";
  out << "keyframes," << s.keyframes << "\n";
  out << "path_length_m," << s.path_length << "\n";
  out << "events," << s.event_change_frames.size() << "\n";
  out << "event_change_frames,";
  for (size_t i = 0; i < s.event_change_frames.size(); ++i) {
    out << (i ? "|" : "") << s.event_change_frames[i];
  }
  out << "\n";
  out << "event_detect_frames,";
  for (size_t i = 0; i < s.event_detect_frames.size(); ++i) {
    out << (i ? "|" : "") << s.event_detect_frames[i];
  }
  out << "\n";
  out << "zoom_frame," << s.zoom_frame << "\n";
  out << "detection_latency_kf," << s.detection_latency << "\n";
  out << "final_error_m," << s.final_error_m << "\n";
  out << "final_error_pct," << s.final_error_pct << "\n";
  out << "scale_alignment," << s.scale_alignment << "\n";
  out << "pre_change_max_rel_err," << s.pre_change_max_rel_err << "\n";
  out << "post_change_max_rel_err," << s.post_change_max_rel_err << "\n";
  out << "init_completed_frame," << s.init_completed_frame << "\n";
  out << "accepted_segments," << s.accepted_segments << "\n";
  out << "candidate_count," << s.candidate_count << "\n";
  out << "mean_candidate_ops," << s.mean_candidate_ops << "\n";
  out << "solver_failures," << s.solver_failures << "\n";
  return out.str();
}

struct OutputPaths {
  std::filesystem::path trace;
  std::filesystem::path summary;
  std::filesystem::path scenario;
};

inline OutputPaths write_report(const RunReport& report,
                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  OutputPaths paths{dir / "trace.csv", dir / "summary.csv",
                    dir / "scenario.echo.txt"};
  std::ofstream(paths.trace) << trace_csv(report);
  std::ofstream(paths.summary) << summary_csv(report);
  std::ofstream(paths.scenario) << report.scenario_echo;
  return paths;
}

// ---------------------------------------------------------------------------
// Run comparison: per-column maximum deviation between two traces. Two runs
// are comparable when their scenario echoes agree on everything but the
// seed.
// ---------------------------------------------------------------------------

struct CompareResult {
  bool ok = false;
  bool mismatched_scenarios = false;
  std::string message;
  std::vector<std::pair<std::string, double>> column_max_dev;
  double overall_max_dev = 0.0;
};

namespace pipeline_detail {

inline std::map<std::string, std::string> parse_echo(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = v.find_last_not_of(" \t\r");
      return v.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline bool split_csv_line(const std::string& line,
                           std::vector<std::string>& out) {
  out.clear();
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return !out.empty();
}

}  // namespace pipeline_detail

inline CompareResult compare_traces(const std::string& trace_a,
                                    const std::string& trace_b,
                                    const std::string& echo_a,
                                    const std::string& echo_b) {
  CompareResult res;
  auto kv_a = pipeline_detail::parse_echo(echo_a);
  auto kv_b = pipeline_detail::parse_echo(echo_b);
  kv_a.erase("seed");
  kv_b.erase("seed");
  if (kv_a != kv_b) {
    res.mismatched_scenarios = true;
    res.message = "scenario configurations differ (beyond the seed)";
    return res;
  }

  std::istringstream a(trace_a), b(trace_b);
  std::string line_a, line_b;
  std::vector<std::string> hdr_a, hdr_b, cells_a, cells_b;
  if (!std::getline(a, line_a) || !std::getline(b, line_b)) {
    res.message = "missing trace header";
    return res;
  }
  pipeline_detail::split_csv_line(line_a, hdr_a);
  pipeline_detail::split_csv_line(line_b, hdr_b);
  if (hdr_a != hdr_b) {
    res.message = "trace headers differ";
    return res;
  }
  std::vector<double> max_dev(hdr_a.size(), 0.0);
  size_t rows = 0;
  while (std::getline(a, line_a)) {
    if (!std::getline(b, line_b)) {
      res.message = "row counts differ";
      return res;
    }
    pipeline_detail::split_csv_line(line_a, cells_a);
    pipeline_detail::split_csv_line(line_b, cells_b);
    if (cells_a.size() != hdr_a.size() || cells_b.size() != hdr_a.size()) {
      res.message = "malformed trace row";
      return res;
    }
    for (size_t c = 0; c < hdr_a.size(); ++c) {
      const double va = std::strtod(cells_a[c].c_str(), nullptr);
      const double vb = std::strtod(cells_b[c].c_str(), nullptr);
      double dev;
      if (std::isnan(va) && std::isnan(vb)) {
        dev = 0.0;
      } else if (std::isinf(va) && std::isinf(vb) && va == vb) {
        dev = 0.0;
      } else {
        dev = std::abs(va - vb);
      }
      max_dev[c] = std::max(max_dev[c], dev);
    }
    ++rows;
  }
  if (std::getline(b, line_b)) {
    res.message = "row counts differ";
    return res;
  }
  for (size_t c = 0; c < hdr_a.size(); ++c) {
    res.column_max_dev.emplace_back(hdr_a[c], max_dev[c]);
    res.overall_max_dev = std::max(res.overall_max_dev, max_dev[c]);
  }
  res.ok = true;
  res.message = "compared " + std::to_string(rows) + " rows";
  return res;
}

inline CompareResult compare_run_dirs(const std::filesystem::path& dir_a,
                                      const std::filesystem::path& dir_b) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  return compare_traces(slurp(dir_a / "trace.csv"), slurp(dir_b / "trace.csv"),
                        slurp(dir_a / "scenario.echo.txt"),
                        slurp(dir_b / "scenario.echo.txt"));
}

}  // namespace selfcal

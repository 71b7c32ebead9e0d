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

// Constant-time self-calibration. Candidate segments (fixed runs of m
// keyframes) are solved in isolation; the entropy score of their normalized
// intrinsics posterior ranks them, and a fixed-capacity priority queue keeps
// the k most informative segments seen since the last calibration change.
// Every membership change triggers a joint re-estimation over all queued
// segments, which share nothing but the intrinsics vector. A batch
// initialization phase bootstraps the estimate after startup and after each
// change event.

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "selfcal/change_detection.hpp"
#include "selfcal/map.hpp"
#include "selfcal/posterior.hpp"
#include "selfcal/solver.hpp"

namespace selfcal {

/// Piecewise-constant intrinsics assignment over keyframes. Entries start at
/// frame 0 and change indices are strictly increasing, so every frame maps
/// to exactly one intrinsics vector.
class CalibrationTimeline {
 public:
  CalibrationTimeline() { entries_.emplace_back(0, Intrinsics{}); }
  explicit CalibrationTimeline(const Intrinsics& initial) {
    entries_.emplace_back(0, initial);
  }

  const Intrinsics& at(int frame) const {
    const Intrinsics* out = &entries_.front().second;
    for (const auto& [start, intr] : entries_) {
      if (frame >= start) out = &intr;
    }
    return *out;
  }

  /// Updates the value assigned to the current regime, i.e. the frames
  /// {n_change, ..., n_current}.
  void assign_current(const Intrinsics& intr) { entries_.back().second = intr; }

  void add_change(int frame, const Intrinsics& initial) {
    if (frame <= entries_.back().first) {
      entries_.back().second = initial;
      return;
    }
    entries_.emplace_back(frame, initial);
  }

  int last_change_frame() const { return entries_.back().first; }
  const std::vector<std::pair<int, Intrinsics>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<int, Intrinsics>> entries_;
};

/// A solved candidate segment, kept around for priority-queue membership and
/// joint re-estimation warm starts.
struct SegmentData {
  int first_frame = -1;
  int last_frame = -1;
  BuiltProblem built;
  PosteriorEstimate posterior;
  double score = std::numeric_limits<double>::infinity();
  SolveResult solve_result;
};

enum class DiscardReason { None, InsufficientData, SolveFailed, IllConditioned };

struct CandidateOutcome {
  bool valid = false;
  DiscardReason reason = DiscardReason::None;
  SegmentData segment;
};

/// Fixed-capacity queue of the lowest-score segments. Membership only; the
/// joint estimate is recomputed by the owner after every membership change.
class PriorityQueue {
 public:
  explicit PriorityQueue(int capacity = 5) : capacity_(capacity) {}

  /// Inserts when below capacity, otherwise replaces the worst member if the
  /// candidate scores strictly better. Returns whether membership changed.
  bool try_swap(SegmentData&& candidate) {
    if (static_cast<int>(segments_.size()) < capacity_) {
      segments_.push_back(std::move(candidate));
      return true;
    }
    int worst = 0;
    for (size_t i = 1; i < segments_.size(); ++i) {
      if (segments_[i].score > segments_[worst].score) {
        worst = static_cast<int>(i);
      }
    }
    if (candidate.score < segments_[worst].score) {
      segments_[worst] = std::move(candidate);
      return true;
    }
    return false;
  }

  void clear() {
    segments_.clear();
    joint_.reset();
  }

  int size() const { return static_cast<int>(segments_.size()); }
  int capacity() const { return capacity_; }
  bool empty() const { return segments_.empty(); }
  const std::vector<SegmentData>& segments() const { return segments_; }
  std::vector<SegmentData>& segments() { return segments_; }

  const std::optional<PosteriorEstimate>& joint() const { return joint_; }
  void set_joint(const PosteriorEstimate& p) { joint_ = p; }
  void reset_joint() { joint_.reset(); }

 private:
  int capacity_;
  std::vector<SegmentData> segments_;
  std::optional<PosteriorEstimate> joint_;
};

struct SelfCalOptions {
  int pq_capacity = 5;
  int segment_size = 10;
  double init_score_threshold = -32.0;
  int min_segment_measurements = 20;
  int intrinsics_warmup_keyframes = 5;  // batch solves structure-only first
  double sigma = 0.5;
  SolveOptions segment_solve = [] {
    SolveOptions o;
    o.max_iterations = 60;
    o.tolerance = 1e-12;
    o.reject_outliers = true;
    return o;
  }();
  SolveOptions batch_solve = [] {
    SolveOptions o;
    o.max_iterations = 80;
    o.tolerance = 1e-10;
    o.reject_outliers = true;
    return o;
  }();
};

enum class CalMode { Initializing, Normal };

struct InitStepInfo {
  bool solved = false;
  bool completed = false;
  double score = std::numeric_limits<double>::infinity();
  std::optional<PosteriorEstimate> posterior;
};

struct SwapOutcome {
  bool swapped = false;
  bool joint_ok = false;
};

class SelfCalibrator {
 public:
  SelfCalibrator(const SelfCalOptions& opts, const Intrinsics& initial_guess)
      : opts_(opts), pq_(opts.pq_capacity), initial_guess_(initial_guess) {}

  CalMode mode() const { return mode_; }
  const PriorityQueue& pq() const { return pq_; }
  PriorityQueue& pq() { return pq_; }
  int init_start() const { return init_start_; }
  int init_completed_frame() const { return init_completed_frame_; }
  int accepted_segments() const { return accepted_segments_; }

  /// Batch-initialization step: re-solves all state from the change index to
  /// the current frame and completes once the posterior entropy score drops
  /// below the threshold.
  InitStepInfo run_initialization_step(MapStore& map,
                                       CalibrationTimeline& timeline,
                                       int frame) {
    InitStepInfo info;
    const int count = frame - init_start_ + 1;
    if (count < 2) return info;

    BuiltProblem built = build_calibration_problem(
        map, init_start_, frame, timeline.at(frame), opts_.sigma);
    const bool warmup = count <= opts_.intrinsics_warmup_keyframes;
    if (warmup) {
      // Structure-only solve: hold the intrinsics at their current value
      // until the problem has enough excitation to estimate them.
      built.problem.estimate_intrinsics = false;
      built.problem.frame_intrinsics.assign(built.problem.poses.size(),
                                            built.problem.intrinsics);
    }
    if (built.problem.measurements.size() <
        static_cast<size_t>(opts_.min_segment_measurements)) {
      return info;
    }
    const SolveResult sr = solve(built.problem, opts_.batch_solve);
    if (sr.status == SolveStatus::NumericalFailure) return info;
    write_back(built, map);
    info.solved = true;
    if (warmup) return info;

    timeline.assign_current(built.problem.intrinsics);
    const FisherResult fr = fisher_covariance(built.problem);
    if (fr.status != FisherStatus::Ok) return info;
    try {
      info.score = entropy_score(fr.posterior.sigma_prime);
    } catch (const SingularCovariance&) {
      return info;
    }
    info.posterior = fr.posterior;
    if (info.score < opts_.init_score_threshold) {
      mode_ = CalMode::Normal;
      init_completed_frame_ = frame;
      segment_start_ = frame + 1;
      info.completed = true;
    }
    return info;
  }

  /// Returns the frame range of a finished candidate segment, if this frame
  /// completes one. Candidates are consecutive, non-overlapping windows of
  /// segment_size keyframes.
  std::optional<std::pair<int, int>> segment_ready(int frame) {
    if (mode_ != CalMode::Normal) return std::nullopt;
    if (frame - segment_start_ + 1 < opts_.segment_size) return std::nullopt;
    const std::pair<int, int> range{segment_start_, frame};
    segment_start_ = frame + 1;
    return range;
  }

  /// Solves a segment-local problem and scores its posterior. Discards the
  /// segment when it is data-starved, fails to solve, or its posterior is
  /// rank deficient / badly conditioned.
  CandidateOutcome evaluate_candidate(const MapStore& map, int first_frame,
                                      int last_frame,
                                      const Intrinsics& current) const {
    CandidateOutcome out;
    out.segment.first_frame = first_frame;
    out.segment.last_frame = last_frame;
    out.segment.built = build_calibration_problem(map, first_frame, last_frame,
                                                  current, opts_.sigma);
    Problem& p = out.segment.built.problem;
    if (p.measurements.size() <
        static_cast<size_t>(opts_.min_segment_measurements)) {
      out.reason = DiscardReason::InsufficientData;
      return out;
    }
    out.segment.solve_result = solve(p, opts_.segment_solve);
    if (out.segment.solve_result.status == SolveStatus::NumericalFailure) {
      out.reason = DiscardReason::SolveFailed;
      return out;
    }
    const FisherResult fr = fisher_covariance(p);
    if (fr.status != FisherStatus::Ok) {
      out.reason = DiscardReason::IllConditioned;
      return out;
    }
    out.segment.posterior = fr.posterior;
    try {
      out.segment.score = entropy_score(fr.posterior.sigma_prime);
    } catch (const SingularCovariance&) {
      out.reason = DiscardReason::IllConditioned;
      return out;
    }
    if (!check_wellconditioned(fr.posterior.sigma_prime)) {
      out.reason = DiscardReason::IllConditioned;
      return out;
    }
    out.valid = true;
    return out;
  }

  /// Joint estimate over all queued segments: one problem, independent
  /// segment sub-graphs sharing the intrinsics vector.
  std::optional<PosteriorEstimate> joint_pq_estimate(const Intrinsics& warm) {
    if (pq_.empty()) return std::nullopt;
    Problem joint;
    joint.estimate_intrinsics = true;
    joint.intrinsics = warm;
    std::vector<std::pair<size_t, size_t>> bases;  // (pose base, lm base)
    for (const auto& seg : pq_.segments()) {
      const size_t pose_base = joint.poses.size();
      const size_t lm_base = joint.landmarks.size();
      bases.emplace_back(pose_base, lm_base);
      const Problem& sp = seg.built.problem;
      joint.poses.insert(joint.poses.end(), sp.poses.begin(), sp.poses.end());
      for (auto lm : sp.landmarks) {
        lm.ref_pose += static_cast<int>(pose_base);
        joint.landmarks.push_back(lm);
      }
      for (auto m : sp.measurements) {
        m.landmark += static_cast<int>(lm_base);
        m.meas_pose += static_cast<int>(pose_base);
        joint.measurements.push_back(m);
      }
    }
    const SolveResult sr = solve(joint, opts_.segment_solve);
    if (sr.status == SolveStatus::NumericalFailure) return std::nullopt;
    const FisherResult fr = fisher_covariance(joint);
    if (fr.status != FisherStatus::Ok) return std::nullopt;

    // Copy the re-estimated segment states back for future warm starts.
    for (size_t s = 0; s < pq_.segments().size(); ++s) {
      Problem& sp = pq_.segments()[s].built.problem;
      const auto [pose_base, lm_base] = bases[s];
      for (size_t i = 0; i < sp.poses.size(); ++i) {
        sp.poses[i].pose = joint.poses[pose_base + i].pose;
      }
      for (size_t i = 0; i < sp.landmarks.size(); ++i) {
        sp.landmarks[i].rho = joint.landmarks[lm_base + i].rho;
      }
      sp.intrinsics = joint.intrinsics;
    }
    return fr.posterior;
  }

  /// Swaps the candidate into the queue if it ranks, then re-runs the joint
  /// estimate. A failed joint estimate reverts the membership change.
  SwapOutcome try_swap_and_estimate(SegmentData&& candidate) {
    SwapOutcome out;
    const Intrinsics warm = pq_.joint()
                                ? Intrinsics::from_vector(pq_.joint()->mu)
                                : candidate.built.problem.intrinsics;
    std::vector<SegmentData> backup = pq_.segments();
    const auto backup_joint = pq_.joint();
    if (!pq_.try_swap(std::move(candidate))) {
      return out;
    }
    out.swapped = true;
    const auto posterior = joint_pq_estimate(warm);
    if (!posterior) {
      pq_.segments() = std::move(backup);
      if (backup_joint) {
        pq_.set_joint(*backup_joint);
      } else {
        pq_.reset_joint();
      }
      out.swapped = false;
      return out;
    }
    pq_.set_joint(*posterior);
    out.joint_ok = true;
    ++accepted_segments_;
    return out;
  }

  /// Change-event handling: the queued segments describe a dead calibration
  /// regime, so the queue empties and initialization restarts at n_change.
  void on_change_event(int change_frame, CalibrationTimeline& timeline) {
    pq_.clear();
    mode_ = CalMode::Initializing;
    init_start_ = change_frame;
    init_completed_frame_ = -1;
    timeline.add_change(change_frame, timeline.at(change_frame));
  }

 private:
  SelfCalOptions opts_;
  PriorityQueue pq_;
  Intrinsics initial_guess_;
  CalMode mode_ = CalMode::Initializing;
  int init_start_ = 0;
  int init_completed_frame_ = -1;
  int segment_start_ = 0;
  int accepted_segments_ = 0;
};

}  // namespace selfcal

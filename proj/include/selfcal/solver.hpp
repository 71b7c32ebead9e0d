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

// Damped nonlinear least squares (Levenberg-Marquardt) over any subset of
// {poses, inverse depths, intrinsics}, exploiting landmark-block sparsity
// with a Schur complement. Also extracts the Fisher-information covariance
// of the intrinsics at convergence by marginalizing poses and landmarks.
//
// Parameter layout: free poses (6 each, in problem order), then the shared
// intrinsics vector (5) when it is being estimated; inverse depths are
// eliminated and never appear in the reduced system.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "selfcal/factors.hpp"
#include "selfcal/posterior.hpp"

namespace selfcal {

struct ProblemPose {
  int frame_id = -1;
  Pose pose;
  bool fixed = false;
};

struct ProblemLandmark {
  int track_id = -1;
  int ref_pose = -1;  // index into Problem::poses
  Vec2 p_r = Vec2::Zero();
  double rho = 0.1;
  bool frozen = false;  // scale gauge: inverse depth held constant
};

struct ProblemMeasurement {
  int landmark = -1;   // index into Problem::landmarks
  int meas_pose = -1;  // index into Problem::poses
  Vec2 z = Vec2::Zero();
  double sigma = 1.0;
  bool active = true;
};

/// A bundle-adjustment problem. When estimate_intrinsics is set, a single
/// shared intrinsics vector is optimized and used on both sides of every
/// transfer; otherwise each pose carries its own fixed intrinsics
/// (frame_intrinsics, parallel to poses).
struct Problem {
  std::vector<ProblemPose> poses;
  std::vector<ProblemLandmark> landmarks;
  std::vector<ProblemMeasurement> measurements;
  bool estimate_intrinsics = false;
  Intrinsics intrinsics;
  std::vector<Intrinsics> frame_intrinsics;

  int active_measurement_count() const {
    int n = 0;
    for (const auto& m : measurements) n += m.active ? 1 : 0;
    return n;
  }
};

enum class SolveStatus { Converged, MaxIterations, NumericalFailure };

struct SolveOptions {
  int max_iterations = 50;
  double tolerance = 1e-10;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double lambda_max = 1e8;
  bool reject_outliers = false;     // drop >threshold residuals, re-solve once
  double outlier_threshold = 5.0;   // whitened residual norm
};

struct SolveResult {
  bool converged = false;
  SolveStatus status = SolveStatus::MaxIterations;
  double final_cost = 0.0;
  int iterations = 0;
  double gradient_inf_norm = 0.0;
  int measurements_used = 0;
  int outliers_removed = 0;
  long residual_evaluations = 0;
  std::vector<double> accepted_costs;
};

enum class FisherStatus { Ok, SingularInformation };

struct FisherResult {
  FisherStatus status = FisherStatus::SingularInformation;
  PosteriorEstimate posterior;
};

namespace detail {

struct SolverState {
  std::vector<Pose> poses;
  std::vector<double> rho;
  Intrinsics intrinsics;

  static SolverState from(const Problem& p) {
    SolverState s;
    s.poses.reserve(p.poses.size());
    for (const auto& pp : p.poses) s.poses.push_back(pp.pose);
    s.rho.reserve(p.landmarks.size());
    for (const auto& lm : p.landmarks) s.rho.push_back(lm.rho);
    s.intrinsics = p.intrinsics;
    return s;
  }

  void write_back(Problem& p) const {
    for (size_t i = 0; i < p.poses.size(); ++i) p.poses[i].pose = poses[i];
    for (size_t i = 0; i < p.landmarks.size(); ++i) p.landmarks[i].rho = rho[i];
    p.intrinsics = intrinsics;
  }
};

struct ColBlock {
  int offset = 0;
  int width = 0;
  Eigen::Matrix<double, 6, 1> v = Eigen::Matrix<double, 6, 1>::Zero();
};

struct NormalEquations {
  Eigen::MatrixXd h_pp;
  Eigen::VectorXd g_p;
  std::vector<double> h_ll;
  std::vector<double> g_l;
  std::vector<std::vector<ColBlock>> cols;  // per free landmark
  double cost = 0.0;
};

class Linearizer {
 public:
  Linearizer(Problem& problem, const SolveOptions& opts)
      : problem_(problem), opts_(opts) {
    rebuild_index();
  }

  // Recomputes free-parameter indexing from the active measurement set:
  // poses with no active measurements are implicitly fixed, landmarks with
  // none drop out of the reduced system entirely.
  void rebuild_index() {
    const size_t np = problem_.poses.size();
    const size_t nl = problem_.landmarks.size();
    std::vector<int> pose_meas_count(np, 0);
    std::vector<int> lm_meas_count(nl, 0);
    for (const auto& m : problem_.measurements) {
      if (!m.active) continue;
      ++lm_meas_count[m.landmark];
      ++pose_meas_count[m.meas_pose];
      ++pose_meas_count[problem_.landmarks[m.landmark].ref_pose];
    }
    pose_offset_.assign(np, -1);
    int off = 0;
    for (size_t i = 0; i < np; ++i) {
      if (!problem_.poses[i].fixed && pose_meas_count[i] > 0) {
        pose_offset_[i] = off;
        off += 6;
      }
    }
    intr_offset_ = problem_.estimate_intrinsics ? off : -1;
    if (problem_.estimate_intrinsics) off += 5;
    dim_p_ = off;
    lm_index_.assign(nl, -1);
    int li = 0;
    for (size_t i = 0; i < nl; ++i) {
      if (!problem_.landmarks[i].frozen && lm_meas_count[i] > 0) {
        lm_index_[i] = li++;
      }
    }
    dim_l_ = li;
  }

  int dim_p() const { return dim_p_; }
  int dim_l() const { return dim_l_; }
  int intr_offset() const { return intr_offset_; }
  const std::vector<int>& pose_offsets() const { return pose_offset_; }

  // Deactivates measurements that are invalid (behind camera / non-finite)
  // at the given state. Returns the number removed.
  int sanitize(const SolverState& s) {
    int removed = 0;
    for (auto& m : problem_.measurements) {
      if (!m.active) continue;
      if (!std::isfinite(measurement_cost(s, m))) {
        m.active = false;
        ++removed;
      }
    }
    if (removed > 0) rebuild_index();
    return removed;
  }

  double measurement_cost(const SolverState& s, const ProblemMeasurement& m) {
    const auto& lm = problem_.landmarks[m.landmark];
    Landmark l{problem_.poses[lm.ref_pose].frame_id, lm.p_r, s.rho[m.landmark]};
    try {
      const Vec2 h = predict(intr_ref(s, m), intr_meas(s, m),
                             s.poses[lm.ref_pose], s.poses[m.meas_pose], l);
      const Vec2 r = (m.z - h) / m.sigma;
      const double c = 0.5 * r.squaredNorm();
      return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
    } catch (const std::runtime_error&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  double total_cost(const SolverState& s, long* evals) {
    double cost = 0.0;
    for (const auto& m : problem_.measurements) {
      if (!m.active) continue;
      if (evals) ++*evals;
      cost += measurement_cost(s, m);
      if (!std::isfinite(cost)) return std::numeric_limits<double>::infinity();
    }
    return cost;
  }

  // Builds H = J^T J, g = J^T r over the active measurements at state s.
  // Returns false if any residual is invalid at s.
  bool assemble(const SolverState& s, NormalEquations& ne, long* evals) {
    ne.h_pp.setZero(dim_p_, dim_p_);
    ne.g_p.setZero(dim_p_);
    ne.h_ll.assign(dim_l_, 0.0);
    ne.g_l.assign(dim_l_, 0.0);
    ne.cols.assign(dim_l_, {});
    ne.cost = 0.0;

    for (const auto& m : problem_.measurements) {
      if (!m.active) continue;
      if (evals) ++*evals;
      const auto& plm = problem_.landmarks[m.landmark];
      Landmark l{problem_.poses[plm.ref_pose].frame_id, plm.p_r,
                 s.rho[m.landmark]};
      Measurement meas{plm.track_id, problem_.poses[m.meas_pose].frame_id, m.z,
                       m.sigma};
      ResidualExpansion exp;
      try {
        exp = residual_and_jacobians(intr_ref(s, m), intr_meas(s, m),
                                     s.poses[plm.ref_pose], s.poses[m.meas_pose],
                                     l, meas, problem_.estimate_intrinsics);
      } catch (const std::runtime_error&) {
        return false;
      }
      const double c = 0.5 * exp.residual.squaredNorm();
      if (!std::isfinite(c)) return false;
      ne.cost += c;

      // Gather the touched free blocks of this measurement.
      int offs[3];
      int widths[3];
      Eigen::Matrix<double, 2, 6> jacs[3];
      int nb = 0;
      const int oa = pose_offset_[plm.ref_pose];
      if (oa >= 0) {
        offs[nb] = oa;
        widths[nb] = 6;
        jacs[nb] = exp.d_pose_ref;
        ++nb;
      }
      const int ob = pose_offset_[m.meas_pose];
      if (ob >= 0) {
        offs[nb] = ob;
        widths[nb] = 6;
        jacs[nb] = exp.d_pose_meas;
        ++nb;
      }
      if (intr_offset_ >= 0) {
        offs[nb] = intr_offset_;
        widths[nb] = 5;
        jacs[nb].setZero();
        jacs[nb].leftCols<5>() = exp.d_intrinsics;
        ++nb;
      }

      for (int i = 0; i < nb; ++i) {
        const auto ji = jacs[i].leftCols(widths[i]);
        ne.g_p.segment(offs[i], widths[i]) += ji.transpose() * exp.residual;
        for (int j = 0; j < nb; ++j) {
          const auto jj = jacs[j].leftCols(widths[j]);
          ne.h_pp.block(offs[i], offs[j], widths[i], widths[j]) +=
              ji.transpose() * jj;
        }
      }

      const int li = lm_index_[m.landmark];
      if (li >= 0) {
        ne.h_ll[li] += exp.d_rho.squaredNorm();
        ne.g_l[li] += exp.d_rho.dot(exp.residual);
        for (int i = 0; i < nb; ++i) {
          auto& blocks = ne.cols[li];
          ColBlock* blk = nullptr;
          for (auto& b : blocks) {
            if (b.offset == offs[i]) {
              blk = &b;
              break;
            }
          }
          if (!blk) {
            ColBlock fresh;
            fresh.offset = offs[i];
            fresh.width = widths[i];
            blocks.push_back(fresh);
            blk = &blocks.back();
          }
          blk->v.head(widths[i]) +=
              jacs[i].leftCols(widths[i]).transpose() * exp.d_rho;
        }
      }
    }
    return true;
  }

  // Solves the damped reduced system. Returns false if the factorization
  // fails at this damping.
  bool solve_step(const NormalEquations& ne, double lambda,
                  Eigen::VectorXd& delta_p, std::vector<double>& delta_l) const {
    Eigen::MatrixXd s = ne.h_pp;
    s.diagonal() = ne.h_pp.diagonal() * (1.0 + lambda);
    s.diagonal().array() += lambda * 1e-9;
    Eigen::VectorXd rhs = -ne.g_p;

    std::vector<double> w(dim_l_);
    for (int li = 0; li < dim_l_; ++li) {
      const double hd = ne.h_ll[li] * (1.0 + lambda) + lambda * 1e-9;
      if (!(hd > 0.0)) return false;
      w[li] = 1.0 / hd;
      const double gw = ne.g_l[li] * w[li];
      for (const auto& bi : ne.cols[li]) {
        rhs.segment(bi.offset, bi.width) += bi.v.head(bi.width) * gw;
        for (const auto& bj : ne.cols[li]) {
          s.block(bi.offset, bj.offset, bi.width, bj.width) -=
              w[li] * bi.v.head(bi.width) * bj.v.head(bj.width).transpose();
        }
      }
    }

    if (dim_p_ > 0) {
      Eigen::LLT<Eigen::MatrixXd> llt(s);
      if (llt.info() != Eigen::Success) return false;
      delta_p = llt.solve(rhs);
      if (!delta_p.allFinite()) return false;
    } else {
      delta_p.resize(0);
    }

    delta_l.assign(dim_l_, 0.0);
    for (int li = 0; li < dim_l_; ++li) {
      double coupling = ne.g_l[li];
      for (const auto& b : ne.cols[li]) {
        coupling += b.v.head(b.width).dot(delta_p.segment(b.offset, b.width));
      }
      delta_l[li] = -w[li] * coupling;
    }
    return true;
  }

  // Applies a step; returns false if the new state leaves the valid domain.
  bool apply_step(const SolverState& s, const Eigen::VectorXd& delta_p,
                  const std::vector<double>& delta_l, SolverState& out) const {
    out = s;
    for (size_t i = 0; i < problem_.poses.size(); ++i) {
      const int o = pose_offset_[i];
      if (o < 0) continue;
      out.poses[i] = se3_local_update(s.poses[i], delta_p.segment<6>(o));
    }
    if (intr_offset_ >= 0) {
      const Vec5 v = s.intrinsics.as_vector() +
                     delta_p.segment<5>(intr_offset_);
      if (!(v[0] > 0.0) || !(v[1] > 0.0) || v[4] < 0.0 || v[4] > 3.0) {
        return false;
      }
      out.intrinsics = Intrinsics::from_vector(v);
    }
    for (size_t i = 0; i < problem_.landmarks.size(); ++i) {
      const int li = lm_index_[i];
      if (li < 0) continue;
      // Inverse depth stays in (1/100km, 1/5cm): landmarks drifting toward
      // infinity park at the boundary instead of invalidating the step.
      out.rho[i] = std::clamp(s.rho[i] + delta_l[li], 1e-5, 20.0);
    }
    return true;
  }

  // Drops measurements that are gross outliers at the starting state: far
  // beyond both the final threshold and the bulk of the residuals. Honest
  // residuals of a merely-unoptimized starting point stay well below this
  // cut; uniform-pixel outliers sit orders of magnitude above it and would
  // otherwise dominate the quadratic cost.
  int pretrim(const SolverState& s, double threshold) {
    std::vector<double> norms;
    norms.reserve(problem_.measurements.size());
    for (const auto& m : problem_.measurements) {
      if (!m.active) continue;
      const double c = measurement_cost(s, m);
      norms.push_back(std::isfinite(c) ? std::sqrt(2.0 * c) : 1e30);
    }
    if (norms.empty()) return 0;
    std::vector<double> sorted = norms;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                     sorted.end());
    const double cut =
        std::max(10.0 * threshold, 5.0 * sorted[sorted.size() / 2]);
    int removed = 0;
    size_t idx = 0;
    for (auto& m : problem_.measurements) {
      if (!m.active) continue;
      if (norms[idx++] > cut) {
        m.active = false;
        ++removed;
      }
    }
    if (removed > 0) rebuild_index();
    return removed;
  }

  // Re-decides every measurement's activity against the final threshold at
  // the (converged) state s. Returns the number of activity flips.
  int retrim(const SolverState& s, double threshold) {
    int changed = 0;
    for (auto& m : problem_.measurements) {
      const double c = measurement_cost(s, m);
      const bool keep = std::isfinite(c) && std::sqrt(2.0 * c) <= threshold;
      if (keep != m.active) {
        m.active = keep;
        ++changed;
      }
    }
    if (changed > 0) rebuild_index();
    return changed;
  }

 private:
  const Intrinsics& intr_ref(const SolverState& s,
                             const ProblemMeasurement& m) const {
    if (problem_.estimate_intrinsics) return s.intrinsics;
    return problem_.frame_intrinsics[problem_.landmarks[m.landmark].ref_pose];
  }
  const Intrinsics& intr_meas(const SolverState& s,
                              const ProblemMeasurement& m) const {
    if (problem_.estimate_intrinsics) return s.intrinsics;
    return problem_.frame_intrinsics[m.meas_pose];
  }

  Problem& problem_;
  const SolveOptions& opts_;
  std::vector<int> pose_offset_;
  std::vector<int> lm_index_;
  int intr_offset_ = -1;
  int dim_p_ = 0;
  int dim_l_ = 0;
};

inline SolveResult solve_once(Problem& problem, const SolveOptions& opts,
                              long* evals) {
  SolveResult result;
  Linearizer lin(problem, opts);
  SolverState state = SolverState::from(problem);
  lin.sanitize(state);

  NormalEquations ne;
  if (!lin.assemble(state, ne, evals)) {
    result.status = SolveStatus::NumericalFailure;
    return result;
  }
  double cost = ne.cost;
  result.accepted_costs.push_back(cost);

  double lambda = opts.lambda_init;
  bool done = false;
  for (int iter = 0; iter < opts.max_iterations && !done; ++iter) {
    result.iterations = iter + 1;
    result.gradient_inf_norm =
        ne.g_p.size() > 0 ? ne.g_p.lpNorm<Eigen::Infinity>() : 0.0;
    double g_l_inf = 0.0;
    for (double g : ne.g_l) g_l_inf = std::max(g_l_inf, std::abs(g));
    result.gradient_inf_norm = std::max(result.gradient_inf_norm, g_l_inf);
    if (result.gradient_inf_norm < opts.tolerance || cost < 1e-300) {
      result.status = SolveStatus::Converged;
      result.converged = true;
      break;
    }

    bool accepted = false;
    bool any_solvable = false;
    Eigen::VectorXd delta_p;
    std::vector<double> delta_l;
    while (lambda <= opts.lambda_max) {
      if (lin.solve_step(ne, lambda, delta_p, delta_l)) {
        any_solvable = true;
        SolverState trial;
        if (lin.apply_step(state, delta_p, delta_l, trial)) {
          NormalEquations trial_ne;
          if (lin.assemble(trial, trial_ne, evals) && trial_ne.cost < cost) {
            const double decrease = (cost - trial_ne.cost) / std::max(cost, 1e-300);
            state = trial;
            ne = std::move(trial_ne);
            const double prev = cost;
            cost = ne.cost;
            result.accepted_costs.push_back(cost);
            lambda = std::max(lambda / opts.lambda_down, 1e-12);
            accepted = true;
            if (decrease < opts.tolerance) {
              result.status = SolveStatus::Converged;
              result.converged = true;
              done = true;
            }
            (void)prev;
            break;
          }
        }
      }
      lambda *= opts.lambda_up;
    }
    if (!accepted && !done) {
      if (!any_solvable) {
        result.status = SolveStatus::NumericalFailure;
        state.write_back(problem);
        result.final_cost = cost;
        return result;
      }
      // No step improves the cost at any damping: numerically at a minimum.
      result.status = SolveStatus::Converged;
      result.converged = true;
      break;
    }
  }
  if (!result.converged && result.status == SolveStatus::MaxIterations) {
    // ran out of iterations; estimates still usable
  }
  state.write_back(problem);
  result.final_cost = cost;
  result.measurements_used = problem.active_measurement_count();
  return result;
}

}  // namespace detail

/// Levenberg-Marquardt solve, in place. With reject_outliers set, gross
/// outliers are trimmed against a median-scaled cutoff before the first
/// solve; at convergence every measurement is re-decided against the final
/// residual-norm threshold and the problem re-solved once.
inline SolveResult solve(Problem& problem, const SolveOptions& opts = {}) {
  long evals = 0;
  if (opts.reject_outliers) {
    detail::Linearizer lin(problem, opts);
    const detail::SolverState state = detail::SolverState::from(problem);
    lin.pretrim(state, opts.outlier_threshold);
  }
  SolveResult result = detail::solve_once(problem, opts, &evals);
  if (opts.reject_outliers &&
      result.status != SolveStatus::NumericalFailure) {
    detail::Linearizer lin(problem, opts);
    const detail::SolverState state = detail::SolverState::from(problem);
    const int changed = lin.retrim(state, opts.outlier_threshold);
    if (changed > 0) {
      SolveResult second = detail::solve_once(problem, opts, &evals);
      second.accepted_costs.insert(second.accepted_costs.begin(),
                                   result.accepted_costs.begin(),
                                   result.accepted_costs.end());
      result = second;
    }
    result.outliers_removed = static_cast<int>(problem.measurements.size()) -
                              problem.active_measurement_count();
  }
  result.residual_evaluations = evals;
  result.measurements_used = problem.active_measurement_count();
  return result;
}

/// Fisher-information covariance of the intrinsics at the current problem
/// state: Sigma = the 5x5 intrinsics block of (J^T J)^-1, computed by
/// marginalizing landmarks and then poses onto the intrinsics.
inline FisherResult fisher_covariance(Problem& problem) {
  FisherResult out;
  if (!problem.estimate_intrinsics) return out;

  SolveOptions opts;
  detail::Linearizer lin(problem, opts);
  detail::SolverState state = detail::SolverState::from(problem);
  detail::NormalEquations ne;
  if (!lin.assemble(state, ne, nullptr)) return out;

  // A landmark whose inverse depth carries (numerically) no information
  // makes the full information matrix rank deficient; its inverse does not
  // exist and the posterior is meaningless. Any landmark with real parallax
  // has h_ll far above this floor (one pixel of parallax per unit inverse
  // depth, whitened, already gives ~1).
  for (double h : ne.h_ll) {
    if (h < 1e-6) return out;
  }

  const int dim_p = lin.dim_p();
  const int io = lin.intr_offset();
  if (io < 0 || io + 5 != dim_p) return out;

  Eigen::MatrixXd s = ne.h_pp;
  for (int li = 0; li < lin.dim_l(); ++li) {
    const double w = 1.0 / ne.h_ll[li];
    for (const auto& bi : ne.cols[li]) {
      for (const auto& bj : ne.cols[li]) {
        s.block(bi.offset, bj.offset, bi.width, bj.width) -=
            w * bi.v.head(bi.width) * bj.v.head(bj.width).transpose();
      }
    }
  }

  Mat5 fisher;
  if (io > 0) {
    const Eigen::MatrixXd a = s.topLeftCorner(io, io);
    const Eigen::MatrixXd b = s.topRightCorner(io, 5);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) return out;
    const Eigen::MatrixXd a_inv_b = ldlt.solve(b);
    if (!a_inv_b.allFinite()) return out;
    fisher = s.bottomRightCorner(5, 5) - b.transpose() * a_inv_b;
  } else {
    fisher = s.bottomRightCorner(5, 5);
  }

  Eigen::SelfAdjointEigenSolver<Mat5> eig(0.5 * (fisher + fisher.transpose()));
  const auto& ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 1e-12 * std::max(ev.maxCoeff(), 0.0))) return out;

  Mat5 sigma = eig.eigenvectors() *
               ev.cwiseInverse().asDiagonal() *
               eig.eigenvectors().transpose();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();

  out.posterior.mu = problem.intrinsics.as_vector();
  out.posterior.sigma = sigma;
  out.posterior.sigma_prime = normalize_covariance(sigma, out.posterior.mu);
  out.posterior.n = problem.active_measurement_count();
  out.status = FisherStatus::Ok;
  return out;
}

}  // namespace selfcal

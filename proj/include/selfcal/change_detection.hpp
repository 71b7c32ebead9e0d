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

// Calibration-change detection. The question "did the calibration move?" is
// the multivariate Behrens-Fisher problem: do two multivariate normals with
// unknown, unequal covariances share a mean? We use Yao's approximate-F
// solution between the long-term priority-queue belief and the belief from
// the latest candidate segment, gated by a consecutive-rejection counter so
// a single unstable segment cannot trigger re-calibration.
//
// yao_f_test() takes its covariance inputs in sample-scatter convention
// (sum of squared deviations of the n underlying observations), which is
// the convention the n(n-1) scaling inside the statistic expects; that is
// what its Monte-Carlo size calibration tests exercise. Posterior
// covariances from the solver estimate the covariance of the mean itself,
// so behrens_fisher_test() converts them to scatter convention
// (Sigma * n(n-1)) before applying the statistic. Feeding mean-covariances
// in raw would inflate T^2 by roughly n^2 and reject every segment.

#include <Eigen/Dense>

#include <cmath>
#include <optional>

#include "selfcal/posterior.hpp"
#include "selfcal/special_functions.hpp"

namespace selfcal {

/// CDF of the F distribution with d1, d2 degrees of freedom.
inline double f_cdf(double x, double d1, double d2) {
  if (!(x >= 0.0)) {
    throw DomainError("f_cdf requires x >= 0");
  }
  if (!(d1 > 0.0) || !(d2 > 0.0)) {
    throw DomainError("f_cdf requires positive degrees of freedom");
  }
  if (x == 0.0) return 0.0;
  return reg_inc_beta(d1 * x / (d1 * x + d2), 0.5 * d1, 0.5 * d2);
}

struct TestResult {
  double t2 = 0.0;      // Hotelling-type statistic
  double v = 0.0;       // estimated denominator degrees of freedom (clamped)
  double f_stat = 0.0;
  double p_value = 1.0;
  bool degenerate_dof = false;  // raw v - p + 1 <= 0; treated as non-rejection
  bool singular = false;        // combined covariance not invertible
};

/// Yao's approximate-F test for equal means of two multivariate normals.
/// mu/scatter/n describe each sample: its mean, the scatter matrix
/// (sum of squared deviations), and the observation count.
inline TestResult yao_f_test(const Vec5& mu1, const Mat5& scatter1, double n1,
                             const Vec5& mu2, const Mat5& scatter2, double n2) {
  constexpr int p = 5;
  TestResult out;

  const Mat5 s1 = scatter1 / (n1 * (n1 - 1.0));
  const Mat5 s2 = scatter2 / (n2 * (n2 - 1.0));
  const Mat5 s = s1 + s2;
  const Vec5 mu_d = mu1 - mu2;

  Eigen::LDLT<Mat5> ldlt(0.5 * (s + s.transpose()));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    out.singular = true;
    return out;
  }
  const Vec5 s_inv_mu = ldlt.solve(mu_d);
  const double t2 = mu_d.dot(s_inv_mu);
  if (!(t2 > 1e-300)) {
    // Identical means: nothing to test.
    out.t2 = std::max(t2, 0.0);
    out.v = n1 + n2 - 2.0;
    out.f_stat = 0.0;
    out.p_value = 1.0;
    return out;
  }
  out.t2 = t2;

  const double a1 = s_inv_mu.dot(s1 * s_inv_mu) / t2;
  const double a2 = s_inv_mu.dot(s2 * s_inv_mu) / t2;
  const double v_raw = 1.0 / (a1 * a1 / n1 + a2 * a2 / n2);

  out.degenerate_dof = (v_raw - p + 1.0 <= 0.0);
  out.v = std::max(v_raw, p + 1.001);
  out.f_stat = t2 * (out.v - p + 1.0) / (out.v * p);
  out.p_value = 1.0 - f_cdf(out.f_stat, p, out.v - p + 1.0);
  return out;
}

/// Change test between the priority-queue posterior and a candidate-segment
/// posterior. Un-normalized covariances, converted to scatter convention as
/// described at the top of this header.
inline TestResult behrens_fisher_test(const PosteriorEstimate& pq,
                                      const PosteriorEstimate& seg) {
  const double n1 = pq.n;
  const double n2 = seg.n;
  return yao_f_test(pq.mu, pq.sigma * (n1 * (n1 - 1.0)), n1, seg.mu,
                    seg.sigma * (n2 * (n2 - 1.0)), n2);
}

struct ChangeEvent {
  int change_frame = 0;   // n_change = n_current - n_test
  int detected_frame = 0;
};

/// Consecutive-rejection gate. A change event fires only after n_test
/// candidate segments in a row reject the null hypothesis.
struct ChangeGate {
  double alpha = 0.1;
  int n_test = 3;
  int counter = 0;
  int last_change_frame = 0;

  void reset_counter() { counter = 0; }
};

/// Feeds one test result into the gate. Degenerate or singular results count
/// as non-rejections (missing evidence is not rejection).
inline std::optional<ChangeEvent> gate_update(ChangeGate& gate,
                                              const TestResult& result,
                                              int current_frame) {
  const bool reject = !result.singular && !result.degenerate_dof &&
                      result.p_value <= gate.alpha;
  if (!reject) {
    gate.counter = 0;
    return std::nullopt;
  }
  ++gate.counter;
  if (gate.counter < gate.n_test) {
    return std::nullopt;
  }
  gate.counter = 0;
  ChangeEvent ev;
  ev.detected_frame = current_frame;
  ev.change_frame = current_frame - gate.n_test;
  gate.last_change_frame = ev.change_frame;
  return ev;
}

}  // namespace selfcal

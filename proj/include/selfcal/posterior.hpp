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

// Posterior summaries over the intrinsics vector: the covariance extracted
// from the Fisher information, its unit-free normalization, the entropy
// score used to rank trajectory segments, and the rank/conditioning check.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "selfcal/lie.hpp"

namespace selfcal {

struct DegenerateMean : std::runtime_error {
  DegenerateMean() : std::runtime_error("mean entry too close to zero") {}
};

struct SingularCovariance : std::runtime_error {
  SingularCovariance() : std::runtime_error("covariance not positive definite") {}
};

/// Posterior belief over the 5 intrinsics, for either a candidate segment or
/// the priority queue. sigma is un-normalized; sigma_prime is rescaled by
/// the parameter magnitudes; n counts the measurements behind the estimate.
struct PosteriorEstimate {
  Vec5 mu = Vec5::Zero();
  Mat5 sigma = Mat5::Zero();
  Mat5 sigma_prime = Mat5::Zero();
  int n = 0;
};

/// Sigma'_ij = Sigma_ij / (|mu_i| |mu_j|), removing the unit differences
/// between focal lengths, principal point and distortion.
inline Mat5 normalize_covariance(const Mat5& sigma, const Vec5& mu) {
  Vec5 inv_scale;
  for (int i = 0; i < 5; ++i) {
    const double m = std::abs(mu[i]);
    if (m < 1e-9) {
      throw DegenerateMean();
    }
    inv_scale[i] = 1.0 / m;
  }
  return inv_scale.asDiagonal() * sigma * inv_scale.asDiagonal();
}

/// Gaussian differential entropy of the normalized covariance,
/// 0.5 * ln det(2 pi e Sigma'). Lower means a more informative segment.
inline double entropy_score(const Mat5& sigma_prime) {
  Eigen::SelfAdjointEigenSolver<Mat5> eig(
      0.5 * (sigma_prime + sigma_prime.transpose()));
  const auto& ev = eig.eigenvalues();
  const double max_ev = ev.maxCoeff();
  double log_det = 0.0;
  for (int i = 0; i < 5; ++i) {
    if (ev[i] <= 1e-15 * std::max(max_ev, 0.0) || ev[i] <= 0.0) {
      throw SingularCovariance();
    }
    log_det += std::log(ev[i]);
  }
  constexpr double kLog2PiE = 2.8378770664093453;  // ln(2 pi e)
  return 0.5 * (5.0 * kLog2PiE + log_det);
}

/// Full rank and condition number below kappa_max.
inline bool check_wellconditioned(const Mat5& m, double kappa_max = 1e8) {
  Eigen::SelfAdjointEigenSolver<Mat5> eig(0.5 * (m + m.transpose()));
  const auto& ev = eig.eigenvalues();
  const double max_ev = ev.maxCoeff();
  const double min_ev = ev.minCoeff();
  if (!(max_ev > 0.0)) return false;
  if (min_ev <= 1e-12 * max_ev) return false;  // rank deficient
  return max_ev / min_ev < kappa_max;
}

}  // namespace selfcal

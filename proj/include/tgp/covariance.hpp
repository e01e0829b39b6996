#pragma once

// Warped space-time Matern covariance: K(t, x, s, y) = C(t, psi_t(x), s, psi_s(y))
// with C a stationary Matern in (time, label) space.

#include <vector>

#include "tgp/autodiff.hpp"
#include "tgp/flow.hpp"
#include "tgp/linalg.hpp"

namespace tgp::cov {

// Half-integer smoothness only; each has a closed form.
enum class Smoothness { half, three_halves, five_halves };

double nu_value(Smoothness nu);
// ConfigError unless nu is 0.5, 1.5 or 2.5.
Smoothness smoothness_from(double nu);

struct CovarianceParams {
  double sigma2 = 1.0;
  double l0 = 1.0;  // time
  double l1 = 1.0;  // label axis 1
  double l2 = 1.0;  // label axis 2
  Smoothness nu = Smoothness::three_halves;
  double tau2 = 1e-2;

  // ConfigError unless every scale is finite and strictly positive.
  void validate() const;
};

struct SpaceTimePoint {
  double t = 0.0;
  Vec2 x = Vec2::Zero();
};

// Scaled distance in (time, label) space.
double scaled_distance(double dt, const Vec2& dlabel, const CovarianceParams& params);
double warped_distance(const SpaceTimePoint& p, const SpaceTimePoint& q, const CovarianceParams& params,
                       const flow::BackwardFlow& flow);

double matern(double d, double sigma2, Smoothness nu);
double matern(double d, double sigma2, double nu);

double cov_entry(const SpaceTimePoint& p, const SpaceTimePoint& q, const CovarianceParams& params,
                 const flow::BackwardFlow& flow);

// Sigma + tau2 I over time-major points. Labels are computed once per point.
Matrix cov_matrix(const std::vector<SpaceTimePoint>& points, const CovarianceParams& params,
                  const flow::BackwardFlow& flow);

// Matern covariance (no nugget) of N labelled points on the tape. `labels` is
// N x 2, `times` has length N, the scales are 1x1 nodes. Gradients reach the
// labels and all four scales.
ad::DiffValue matern_covariance(const ad::DiffValue& labels, const Vector& times, const ad::DiffValue& sigma2,
                                const ad::DiffValue& l0, const ad::DiffValue& l1, const ad::DiffValue& l2,
                                Smoothness nu);

}  // namespace tgp::cov

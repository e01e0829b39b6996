#include "tgp/covariance.hpp"

#include <cmath>

#include "tgp/errors.hpp"
#include "tgp/textio.hpp"

namespace tgp::cov {
namespace {

const double kSqrt3 = std::sqrt(3.0);
const double kSqrt5 = std::sqrt(5.0);

// k(d) / sigma2
double correlation(double d, Smoothness nu) {
  switch (nu) {
    case Smoothness::half:
      return std::exp(-d);
    case Smoothness::three_halves:
      return (1.0 + kSqrt3 * d) * std::exp(-kSqrt3 * d);
    case Smoothness::five_halves:
      return (1.0 + kSqrt5 * d + 5.0 * d * d / 3.0) * std::exp(-kSqrt5 * d);
  }
  return 0.0;
}

// k'(d) / (d sigma2). Finite at d = 0 except for nu = 1/2.
double slope_over_d(double d, Smoothness nu) {
  switch (nu) {
    case Smoothness::half:
      return -std::exp(-d) / d;
    case Smoothness::three_halves:
      return -3.0 * std::exp(-kSqrt3 * d);
    case Smoothness::five_halves:
      return -(5.0 / 3.0) * (1.0 + kSqrt5 * d) * std::exp(-kSqrt5 * d);
  }
  return 0.0;
}

double squared_scaled(double dt, double da1, double da2, double l0, double l1, double l2) {
  const double u0 = dt / l0;
  const double u1 = da1 / l1;
  const double u2 = da2 / l2;
  return u0 * u0 + u1 * u1 + u2 * u2;
}

void require_positive(const char* name, double v) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string("covariance parameter ") + name + " must be finite and > 0, got " +
                      text::format_double(v));
  }
}

}  // namespace

double nu_value(Smoothness nu) {
  switch (nu) {
    case Smoothness::half:
      return 0.5;
    case Smoothness::three_halves:
      return 1.5;
    case Smoothness::five_halves:
      return 2.5;
  }
  return 0.0;
}

Smoothness smoothness_from(double nu) {
  if (nu == 0.5) return Smoothness::half;
  if (nu == 1.5) return Smoothness::three_halves;
  if (nu == 2.5) return Smoothness::five_halves;
  throw ConfigError("unsupported Matern smoothness nu=" + text::format_double(nu) + " (use 0.5, 1.5 or 2.5)");
}

void CovarianceParams::validate() const {
  require_positive("sigma2", sigma2);
  require_positive("l0", l0);
  require_positive("l1", l1);
  require_positive("l2", l2);
  require_positive("tau2", tau2);
}

double scaled_distance(double dt, const Vec2& dlabel, const CovarianceParams& params) {
  return std::sqrt(squared_scaled(dt, dlabel(0), dlabel(1), params.l0, params.l1, params.l2));
}

double warped_distance(const SpaceTimePoint& p, const SpaceTimePoint& q, const CovarianceParams& params,
                       const flow::BackwardFlow& flow) {
  const Vec2 a = flow.forward(p.t, p.x);
  const Vec2 b = flow.forward(q.t, q.x);
  return scaled_distance(p.t - q.t, a - b, params);
}

double matern(double d, double sigma2, Smoothness nu) {
  if (!(d >= 0.0)) throw ContractError("matern: distance must be >= 0, got " + text::format_double(d));
  return sigma2 * correlation(d, nu);
}

double matern(double d, double sigma2, double nu) { return matern(d, sigma2, smoothness_from(nu)); }

double cov_entry(const SpaceTimePoint& p, const SpaceTimePoint& q, const CovarianceParams& params,
                 const flow::BackwardFlow& flow) {
  return matern(warped_distance(p, q, params, flow), params.sigma2, params.nu);
}

Matrix cov_matrix(const std::vector<SpaceTimePoint>& points, const CovarianceParams& params,
                  const flow::BackwardFlow& flow) {
  params.validate();
  if (points.empty()) throw ContractError("cov_matrix: no points");
  const auto n = static_cast<Eigen::Index>(points.size());
  std::vector<Vec2> labels(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double t = points[i].t;
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("cov_matrix: time " + text::format_double(t) + " outside [0, 1]");
    if (i > 0 && t < points[i - 1].t) {
      throw ContractError("cov_matrix: points are not grouped by time (index " + std::to_string(i) + ")");
    }
    labels[i] = flow.forward(t, points[i].x);
  }
  Matrix k(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    k(r, r) = params.sigma2 + params.tau2;
    for (Eigen::Index c = r + 1; c < n; ++c) {
      const double d = scaled_distance(points[r].t - points[c].t, labels[r] - labels[c], params);
      k(r, c) = k(c, r) = matern(d, params.sigma2, params.nu);
    }
  }
  return k;
}

ad::DiffValue matern_covariance(const ad::DiffValue& labels, const Vector& times, const ad::DiffValue& sigma2,
                                const ad::DiffValue& l0, const ad::DiffValue& l1, const ad::DiffValue& l2,
                                Smoothness nu) {
  ad::Tape* tape = labels.tape();
  for (const auto* v : {&sigma2, &l0, &l1, &l2}) {
    if (v->tape() != tape) throw ContractError("matern_covariance: operands live on different tapes");
    if (v->rows() != 1 || v->cols() != 1) throw DimensionError("matern_covariance: scales must be 1x1");
  }
  if (labels.cols() != 2 || labels.rows() != times.size()) {
    throw DimensionError("matern_covariance: labels must be N x 2 with N = times.size()");
  }
  const Eigen::Index n = labels.rows();
  const Matrix& a = labels.value();
  const double s2 = sigma2.scalar();
  const double ls[3] = {l0.scalar(), l1.scalar(), l2.scalar()};

  Matrix k(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    k(r, r) = s2;
    for (Eigen::Index c = r + 1; c < n; ++c) {
      const double d =
          std::sqrt(squared_scaled(times(r) - times(c), a(r, 0) - a(c, 0), a(r, 1) - a(c, 1), ls[0], ls[1], ls[2]));
      k(r, c) = k(c, r) = s2 * correlation(d, nu);
    }
  }

  return tape->record(
      "matern_covariance", std::move(k), {labels, sigma2, l0, l1, l2},
      [tape, ia = labels.index(), is = sigma2.index(), i0 = l0.index(), i1 = l1.index(), i2 = l2.index(), times,
       nu](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
        const Matrix& a = tape->value(ia);
        const double s2 = tape->value(is)(0, 0);
        const double l[3] = {tape->value(i0)(0, 0), tape->value(i1)(0, 0), tape->value(i2)(0, 0)};
        const Eigen::Index n = a.rows();
        double gs = 0.0;
        double gl[3] = {0.0, 0.0, 0.0};
        for (Eigen::Index r = 0; r < n; ++r) {
          gs += g(r, r);
          for (Eigen::Index c = r + 1; c < n; ++c) {
            const double gg = g(r, c) + g(c, r);
            const double delta[3] = {times(r) - times(c), a(r, 0) - a(c, 0), a(r, 1) - a(c, 1)};
            const double d = std::sqrt(squared_scaled(delta[0], delta[1], delta[2], l[0], l[1], l[2]));
            gs += gg * correlation(d, nu);
            // Coincident points: no direction to move in, and nu = 1/2 has a kink.
            if (d == 0.0) continue;
            const double w = gg * s2 * slope_over_d(d, nu);
            for (int i = 0; i < 3; ++i) gl[i] -= w * delta[i] * delta[i] / (l[i] * l[i] * l[i]);
            if (in[0]) {
              for (int i = 1; i < 3; ++i) {
                const double push = w * delta[i] / (l[i] * l[i]);
                (*in[0])(r, i - 1) += push;
                (*in[0])(c, i - 1) -= push;
              }
            }
          }
        }
        if (in[1]) (*in[1])(0, 0) += gs;
        for (int i = 0; i < 3; ++i) {
          if (in[2 + i]) (*in[2 + i])(0, 0) += gl[i];
        }
      });
}

}  // namespace tgp::cov

#pragma once

// Central finite differences. Test-only; never routes through the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "tgp/linalg.hpp"

namespace tgp::testing {

// d f / d x for a function of a flattened parameter matrix.
inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                 double step) {
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = f(probe);
    probe.data()[i] = orig - step;
    const double down = f(probe);
    probe.data()[i] = orig;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// max_i |a_i - b_i| / max(|b_i|, floor)
inline double max_rel_error(const Matrix& a, const Matrix& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max(std::abs(b.data()[i]), floor);
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
  }
  return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Matrix random_spd(Eigen::Index n, std::mt19937_64& rng) {
  Matrix b = random_matrix(n, n, rng);
  return b * b.transpose() + static_cast<double>(n) * Matrix::Identity(n, n);
}

}  // namespace tgp::testing

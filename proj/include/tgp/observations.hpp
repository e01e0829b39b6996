#pragma once

#include <cstddef>
#include <vector>

#include "tgp/covariance.hpp"
#include "tgp/linalg.hpp"

namespace tgp {

// Scalar observations grouped by time, ascending.
struct ObservationSet {
  std::vector<cov::SpaceTimePoint> points;
  Vector values;
  std::size_t n_times = 0;
  // Points per time when every group has the same size, otherwise 0.
  std::size_t n_space = 0;

  std::size_t size() const { return points.size(); }
  ObservationSet subset(const std::vector<std::size_t>& indices) const;
};

// Validates lengths, finiteness and time grouping; fills the counts.
ObservationSet make_observations(std::vector<cov::SpaceTimePoint> points, Vector values);

// Sample variance (n - 1 denominator) of the values; 0 for fewer than 2.
double sample_variance(const Vector& values);

}  // namespace tgp

#include "tgp/observations.hpp"

#include <cmath>

#include "tgp/errors.hpp"
#include "tgp/textio.hpp"

namespace tgp {

ObservationSet ObservationSet::subset(const std::vector<std::size_t>& indices) const {
  std::vector<cov::SpaceTimePoint> pts;
  Vector vals(static_cast<Eigen::Index>(indices.size()));
  pts.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= points.size()) throw ContractError("ObservationSet::subset: index out of range");
    pts.push_back(points[indices[i]]);
    vals(static_cast<Eigen::Index>(i)) = values(static_cast<Eigen::Index>(indices[i]));
  }
  return make_observations(std::move(pts), std::move(vals));
}

ObservationSet make_observations(std::vector<cov::SpaceTimePoint> points, Vector values) {
  if (static_cast<Eigen::Index>(points.size()) != values.size()) {
    throw DimensionError("observations: " + std::to_string(points.size()) + " points but " +
                         std::to_string(values.size()) + " values");
  }
  ObservationSet obs;
  std::vector<std::size_t> group_sizes;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.t) || !p.x.allFinite() || !std::isfinite(values(static_cast<Eigen::Index>(i)))) {
      throw DomainError("observations: non-finite entry at index " + std::to_string(i));
    }
    if (i == 0 || p.t != points[i - 1].t) {
      if (i > 0 && p.t < points[i - 1].t) {
        throw ContractError("observations: times decrease at index " + std::to_string(i) + " (" +
                            text::format_double(points[i - 1].t) + " then " + text::format_double(p.t) + ")");
      }
      group_sizes.push_back(0);
    }
    ++group_sizes.back();
  }
  obs.n_times = group_sizes.size();
  obs.n_space = group_sizes.empty() ? 0 : group_sizes.front();
  for (std::size_t g : group_sizes) {
    if (g != obs.n_space) obs.n_space = 0;
  }
  obs.points = std::move(points);
  obs.values = std::move(values);
  return obs;
}

double sample_variance(const Vector& values) {
  if (values.size() < 2) return 0.0;
  const double mean = values.mean();
  return (values.array() - mean).square().sum() / static_cast<double>(values.size() - 1);
}

}  // namespace tgp

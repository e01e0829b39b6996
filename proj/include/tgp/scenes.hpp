#pragma once

// Synthetic scenes: draw a transport GP on a lattice with a known flow, the
// matching ground-truth velocity, the RMS/RMSE scores and observation files.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "tgp/covariance.hpp"
#include "tgp/flow.hpp"
#include "tgp/observations.hpp"
#include "tgp/textio.hpp"
#include "tgp/velocity.hpp"

namespace tgp::scenes {

enum class FlowKind { identity, constant, rotation, residual };

std::string_view to_string(FlowKind kind);
FlowKind parse_flow_kind(std::string_view name);

struct SceneSpec {
  FlowKind flow = FlowKind::identity;
  Vec2 drift = Vec2::Zero();  // constant: velocity per unit time
  double rate = 1.0;          // rotation: clockwise about (0.5, 0.5)
  // residual: a seeded random contractive network
  flow::Architecture residual_arch{2, 3, 8, flow::Activation::tanh};
  std::uint64_t flow_seed = 0;
  double residual_norm_product = 0.9;

  int rows = 12;
  int cols = 12;
  int times = 5;
  cov::CovarianceParams params{1.0, 0.5, 0.3, 0.3, cov::Smoothness::three_halves, 1e-3};
  std::uint64_t seed = 0;
  std::size_t max_points = 6000;

  std::size_t point_count() const;
  void validate() const;
  // Keys: flow, w1, w2, rate, k, L, h, activation, flow_seed, norm_product,
  // rows, cols, times, sigma2, l0, l1, l2, tau2, nu, seed, max_points.
  static SceneSpec from_doc(text::KeyValueDoc& doc);
  static SceneSpec load(const std::filesystem::path& path);
};

inline const Vec2 kRotationCenter{0.5, 0.5};

// Row r, column c -> (r / (rows - 1), c / (cols - 1)), row-major. A single
// row or column sits at 0.5.
std::vector<Vec2> unit_lattice(int rows, int cols);
// n evenly spaced times from 0 to 1 (just 0 when n = 1).
std::vector<double> uniform_times(int n);

std::unique_ptr<flow::BackwardFlow> make_flow(const SceneSpec& spec);

// Y = L z with L the Cholesky factor of Sigma + tau2 I and z standard normal.
ObservationSet sample_scene(const SceneSpec& spec);

Vec2 truth_velocity(const SceneSpec& spec, double t, const Vec2& x);
// Truth on the scene's own times and lattice.
velocity::VelocityField truth_field(const SceneSpec& spec);

// Mean over time groups of the per-group root-mean-square vector norm.
double rms(const velocity::VelocityField& field);
// rms of est - truth; both must list identical (t, x) samples in the same order.
double rmse(const velocity::VelocityField& est, const velocity::VelocityField& truth);

// Text table `t,x1,x2,value`, grouped by ascending time, 17 significant digits.
void write_observations(std::ostream& out, const ObservationSet& data);
void write_observations_file(const std::filesystem::path& path, const ObservationSet& data);
ObservationSet read_observations(std::istream& in, const std::string& source);
ObservationSet read_observations_file(const std::filesystem::path& path);

}  // namespace tgp::scenes

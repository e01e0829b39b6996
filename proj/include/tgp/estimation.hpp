#pragma once

// Maximum-likelihood fitting of the flow, the Matern scales and the nugget by
// Adam on the (minibatch) negative log-likelihood plus a contraction penalty.
//
// Scales are optimized as logs. Coordinates are mapped affinely so that time
// spans exactly [0, 1] and space fits inside [0, 1]^2; the map travels with
// the fit so velocities can be reported in data units.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "tgp/covariance.hpp"
#include "tgp/flow.hpp"
#include "tgp/observations.hpp"
#include "tgp/textio.hpp"
#include "tgp/velocity.hpp"

namespace tgp::est {

struct Normalization {
  double t_offset = 0.0;
  double t_scale = 1.0;
  Vec2 x_offset = Vec2::Zero();
  double x_scale = 1.0;  // shared by both axes, so directions are preserved

  // Requires at least two distinct times.
  static Normalization fit_to(const ObservationSet& data);

  double time_to_model(double t) const { return (t - t_offset) / t_scale; }
  Vec2 space_to_model(const Vec2& x) const { return (x - x_offset) / x_scale; }
  double time_to_data(double t) const { return t * t_scale + t_offset; }
  Vec2 space_to_data(const Vec2& x) const { return x * x_scale + x_offset; }
  // Model velocity -> data space units per data time unit.
  Vec2 velocity_to_data(const Vec2& v) const { return v * (x_scale / t_scale); }

  ObservationSet apply(const ObservationSet& data) const;
};

struct FitConfig {
  int minibatch_size = 0;  // 0: min(2000, dataset size)
  int iterations = 100;
  double learning_rate = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double penalty_weight = 10.0;  // lambda
  double penalty_target = 0.98;  // gamma
  std::uint64_t seed = 0;
  flow::Architecture arch;
  cov::Smoothness nu = cov::Smoothness::three_halves;

  void validate() const;
  // Unknown keys are rejected.
  static FitConfig from_doc(text::KeyValueDoc& doc);
  static FitConfig load(const std::filesystem::path& path);
};

struct FitResult {
  flow::FlowNetwork net = flow::FlowNetwork::zeros({});
  cov::CovarianceParams params;
  Normalization norm;
  std::vector<double> nll_trace;  // minibatch objective per iteration
  int nugget_retries = 0;
  double wallclock = 0.0;  // seconds; not serialized
};

// 1/2 logdet(Sigma + tau2 I) + 1/2 y^T (Sigma + tau2 I)^-1 y, without the 2 pi term.
double nll(const ObservationSet& data, const cov::CovarianceParams& params, const flow::BackwardFlow& flow);
// lambda * sum_j max(0, prod_i ||W_i^(j)||_2 - gamma)^2
double contraction_penalty(const flow::FlowNetwork& net, double lambda, double gamma);
double penalized_objective(const ObservationSet& data, const cov::CovarianceParams& params,
                           const flow::FlowNetwork& net, double lambda, double gamma);

// Tape pieces, shared by fit and the gradient tests.
ad::DiffValue nll_on_tape(const ad::DiffValue& covariance, const Vector& y);

// Unconstrained parameters: the network in pack order, then log sigma2,
// log l0, log l1, log l2, log tau2.
Vector pack_parameters(const flow::FlowNetwork& net, const cov::CovarianceParams& params);
void unpack_parameters(const Vector& theta, flow::FlowNetwork& net, cov::CovarianceParams& params);

struct ObjectiveValue {
  double value = 0.0;
  double nll = 0.0;
  Vector gradient;  // with respect to pack_parameters order
};
// tau2_factor multiplies the nugget for this evaluation only.
ObjectiveValue objective_and_gradient(const ObservationSet& batch, const flow::FlowNetwork& net,
                                      const cov::CovarianceParams& params, double lambda, double gamma,
                                      double tau2_factor = 1.0);

// Uniform sample of n0 distinct indices out of n, returned ascending.
std::vector<std::size_t> minibatch_sample(std::size_t n, std::size_t n0, std::mt19937_64& rng);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};
inline constexpr double kAdamEpsilon = 1e-8;
void adam_step(Vector& params, const Vector& grad, AdamState& state, double lr, double beta1, double beta2,
               double eps = kAdamEpsilon);

struct FitHooks {
  // Diagnostics such as nugget retries.
  std::function<void(const std::string&)> log;
  // After every Adam step, with the current (unprojected) model in normalized coordinates.
  std::function<void(int iteration, const flow::FlowNetwork&, const cov::CovarianceParams&)> on_iteration;
};

// Initial model: sigma2/tau2 split the sample variance 95/5, lengthscales at a
// quarter of the normalized extent, a small random contractive network.
void initialize(const ObservationSet& normalized, const FitConfig& config, flow::FlowNetwork& net,
                cov::CovarianceParams& params);

FitResult fit(const ObservationSet& data, const FitConfig& config, const FitHooks& hooks = {});

// Velocity of a fitted model at data-space times and positions, in data units.
velocity::VelocityField fitted_velocity(const FitResult& fit, const std::vector<double>& times,
                                        const std::vector<Vec2>& grid, double unit_scale = 1.0);

// Flow checkpoint keys plus norm.*, cov.* and fit.nll_trace.
void write_fit(std::ostream& out, const FitResult& fit);
void write_fit_file(const std::filesystem::path& path, const FitResult& fit);
FitResult read_fit(std::istream& in, const std::string& source);
FitResult read_fit_file(const std::filesystem::path& path);

}  // namespace tgp::est

#include "tgp/estimation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "tgp/errors.hpp"

namespace tgp::est {
namespace {

constexpr std::size_t kDefaultMinibatchCap = 2000;
constexpr double kNuggetRetryFactor = 10.0;
// Keeps the minibatch stream separate from the network initialization stream.
constexpr std::uint64_t kMinibatchStream = 0x9e3779b97f4a7c15ULL;

Matrix positions_of(const ObservationSet& data) {
  Matrix pos(static_cast<Eigen::Index>(data.size()), 2);
  for (std::size_t i = 0; i < data.size(); ++i) pos.row(static_cast<Eigen::Index>(i)) = data.points[i].x.transpose();
  return pos;
}

Vector times_of(const ObservationSet& data) {
  Vector t(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) t(static_cast<Eigen::Index>(i)) = data.points[i].t;
  return t;
}

double extent(const ObservationSet& data, int axis) {
  double lo = data.points.front().x(axis);
  double hi = lo;
  for (const auto& p : data.points) {
    lo = std::min(lo, p.x(axis));
    hi = std::max(hi, p.x(axis));
  }
  return hi - lo;
}

}  // namespace

// ---------------------------------------------------------------------------
// Normalization

Normalization Normalization::fit_to(const ObservationSet& data) {
  if (data.size() == 0) throw ContractError("normalization: empty data set");
  double tmin = data.points.front().t, tmax = tmin;
  Vec2 lo = data.points.front().x, hi = lo;
  for (const auto& p : data.points) {
    tmin = std::min(tmin, p.t);
    tmax = std::max(tmax, p.t);
    lo = lo.cwiseMin(p.x);
    hi = hi.cwiseMax(p.x);
  }
  if (!(tmax > tmin)) throw ConfigError("fitting needs observations at two or more distinct times");
  Normalization n;
  n.t_offset = tmin;
  n.t_scale = tmax - tmin;
  n.x_offset = lo;
  const double span = (hi - lo).maxCoeff();
  n.x_scale = span > 0.0 ? span : 1.0;
  return n;
}

ObservationSet Normalization::apply(const ObservationSet& data) const {
  std::vector<cov::SpaceTimePoint> pts;
  pts.reserve(data.size());
  for (const auto& p : data.points) pts.push_back({time_to_model(p.t), space_to_model(p.x)});
  return make_observations(std::move(pts), data.values);
}

// ---------------------------------------------------------------------------
// Config

void FitConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("fit config: " + what); };
  if (iterations < 1) fail("iterations must be >= 1");
  if (minibatch_size != 0 && minibatch_size < 2) fail("minibatch_size must be >= 2");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2 must lie in (0, 1)");
  if (!(penalty_weight >= 0.0)) fail("penalty_weight must be >= 0");
  if (!(penalty_target > 0.0 && penalty_target < 1.0)) fail("penalty_target must lie in (0, 1)");
  if (arch.blocks < 1 || arch.layers < 2 || arch.width < 1) fail("need k >= 1, L >= 2, h >= 1");
}

FitConfig FitConfig::from_doc(text::KeyValueDoc& doc) {
  FitConfig c;
  auto int_key = [&](const char* key, int& into) {
    if (auto v = doc.take_int(key)) into = static_cast<int>(*v);
  };
  auto double_key = [&](const char* key, double& into) {
    if (auto v = doc.take_double(key)) into = *v;
  };
  int_key("minibatch_size", c.minibatch_size);
  int_key("iterations", c.iterations);
  double_key("learning_rate", c.learning_rate);
  double_key("beta1", c.beta1);
  double_key("beta2", c.beta2);
  double_key("penalty_weight", c.penalty_weight);
  double_key("penalty_target", c.penalty_target);
  if (auto v = doc.take_int("seed")) {
    if (*v < 0) throw ConfigError(doc.source() + ": seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(*v);
  }
  int_key("k", c.arch.blocks);
  int_key("L", c.arch.layers);
  int_key("h", c.arch.width);
  if (auto v = doc.take_string("activation")) c.arch.activation = flow::parse_activation(*v);
  if (auto v = doc.take_double("nu")) c.nu = cov::smoothness_from(*v);
  doc.require_all_consumed();
  c.validate();
  return c;
}

FitConfig FitConfig::load(const std::filesystem::path& path) {
  auto doc = text::KeyValueDoc::load(path);
  return from_doc(doc);
}

// ---------------------------------------------------------------------------
// Objective

double nll(const ObservationSet& data, const cov::CovarianceParams& params, const flow::BackwardFlow& flow) {
  if (data.size() == 0) throw ContractError("nll: empty data set");
  const Matrix l = ad::cholesky_lower(cov::cov_matrix(data.points, params, flow));
  const Vector z = l.triangularView<Eigen::Lower>().solve(data.values);
  return l.diagonal().array().log().sum() + 0.5 * z.squaredNorm();
}

double contraction_penalty(const flow::FlowNetwork& net, double lambda, double gamma) {
  if (!(lambda >= 0.0)) throw ContractError("contraction_penalty: lambda must be >= 0");
  double total = 0.0;
  for (const auto& b : net.blocks()) {
    const double excess = std::max(0.0, flow::weight_norm_product(b) - gamma);
    total += excess * excess;
  }
  return lambda * total;
}

double penalized_objective(const ObservationSet& data, const cov::CovarianceParams& params,
                           const flow::FlowNetwork& net, double lambda, double gamma) {
  const double base = nll(data, params, net);
  if (lambda == 0.0) return base;
  return base + contraction_penalty(net, lambda, gamma);
}

ad::DiffValue nll_on_tape(const ad::DiffValue& covariance, const Vector& y) {
  ad::Tape& tape = *covariance.tape();
  auto l = ad::cholesky(covariance);
  auto z = ad::triangular_solve(l, tape.constant(Matrix(y)));
  return ad::sum(ad::log(ad::diag(l))) + 0.5 * ad::sum(ad::mul(z, z));
}

Vector pack_parameters(const flow::FlowNetwork& net, const cov::CovarianceParams& params) {
  const Vector w = net.pack();
  Vector theta(w.size() + 5);
  theta << w, std::log(params.sigma2), std::log(params.l0), std::log(params.l1), std::log(params.l2),
      std::log(params.tau2);
  return theta;
}

void unpack_parameters(const Vector& theta, flow::FlowNetwork& net, cov::CovarianceParams& params) {
  const auto nw = static_cast<Eigen::Index>(net.parameter_count());
  if (theta.size() != nw + 5) throw DimensionError("unpack_parameters: length mismatch");
  net.unpack(theta.head(nw));
  params.sigma2 = std::exp(theta(nw));
  params.l0 = std::exp(theta(nw + 1));
  params.l1 = std::exp(theta(nw + 2));
  params.l2 = std::exp(theta(nw + 3));
  params.tau2 = std::exp(theta(nw + 4));
}

ObjectiveValue objective_and_gradient(const ObservationSet& batch, const flow::FlowNetwork& net,
                                      const cov::CovarianceParams& params, double lambda, double gamma,
                                      double tau2_factor) {
  if (batch.size() == 0) throw ContractError("objective: empty batch");
  params.validate();
  ad::Tape tape;
  const flow::FlowVars vars = flow::bind_variables(tape, net);
  auto log_s2 = tape.variable(std::log(params.sigma2));
  auto log_l0 = tape.variable(std::log(params.l0));
  auto log_l1 = tape.variable(std::log(params.l1));
  auto log_l2 = tape.variable(std::log(params.l2));
  auto log_t2 = tape.variable(std::log(params.tau2));

  const Vector times = times_of(batch);
  auto labels = flow::forward_batch(tape, vars, tape.constant(positions_of(batch)), times);
  auto k = cov::matern_covariance(labels, times, ad::exp(log_s2), ad::exp(log_l0), ad::exp(log_l1),
                                  ad::exp(log_l2), params.nu);
  auto nugget = ad::exp(log_t2);
  if (tau2_factor != 1.0) nugget = tau2_factor * nugget;
  auto nll_node = nll_on_tape(ad::add_diagonal(k, nugget), batch.values);

  auto objective = nll_node;
  if (lambda != 0.0) {
    auto target = tape.constant(gamma);
    ad::DiffValue total;
    for (const auto& p : flow::norm_products(vars)) {
      auto excess = ad::positive_part(p - target);
      auto sq = ad::mul(excess, excess);
      total = total.valid() ? total + sq : sq;
    }
    objective = nll_node + lambda * total;
  }

  const auto grads = tape.backward(objective);
  ObjectiveValue out;
  out.value = objective.scalar();
  out.nll = nll_node.scalar();
  const Vector gw = flow::gather_gradient(grads, vars);
  out.gradient.resize(gw.size() + 5);
  out.gradient << gw, grads.scalar(log_s2), grads.scalar(log_l0), grads.scalar(log_l1), grads.scalar(log_l2),
      grads.scalar(log_t2);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

std::vector<std::size_t> minibatch_sample(std::size_t n, std::size_t n0, std::mt19937_64& rng) {
  if (n0 > n) {
    throw ConfigError("minibatch size " + std::to_string(n0) + " exceeds data set size " + std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first n0 slots end up a uniform sample.
  for (std::size_t i = 0; i < n0; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n0);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void adam_step(Vector& params, const Vector& grad, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  if (grad.size() != params.size()) throw DimensionError("adam_step: gradient length mismatch");
  if (state.step == 0 && state.m.size() == 0) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: state length mismatch");
  }
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

// ---------------------------------------------------------------------------
// Fit

void initialize(const ObservationSet& normalized, const FitConfig& config, flow::FlowNetwork& net,
                cov::CovarianceParams& params) {
  double var = sample_variance(normalized.values);
  if (!(var > 0.0)) var = 1.0;
  params.sigma2 = 0.95 * var;
  params.tau2 = 0.05 * var;
  params.l0 = 0.25;
  const double e1 = extent(normalized, 0);
  const double e2 = extent(normalized, 1);
  params.l1 = e1 > 0.0 ? 0.25 * e1 : 0.25;
  params.l2 = e2 > 0.0 ? 0.25 * e2 : 0.25;
  params.nu = config.nu;
  flow::FlowNetwork::RandomInit init;
  init.norm_product = 0.5;
  init.bias_scale = 0.1;
  init.output_bias_scale = 0.0;
  net = flow::FlowNetwork::random(config.arch, config.seed, init);
}

FitResult fit(const ObservationSet& data, const FitConfig& config, const FitHooks& hooks) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  FitResult result;
  result.norm = Normalization::fit_to(data);
  const ObservationSet model = result.norm.apply(data);

  const std::size_t n = model.size();
  const std::size_t n0 = config.minibatch_size > 0 ? static_cast<std::size_t>(config.minibatch_size)
                                                   : std::min(kDefaultMinibatchCap, n);
  if (n0 < 2 || n0 > n) {
    throw ConfigError("minibatch_size " + std::to_string(n0) + " must lie in [2, " + std::to_string(n) + "]");
  }

  initialize(model, config, result.net, result.params);
  Vector theta = pack_parameters(result.net, result.params);
  AdamState adam;
  std::mt19937_64 rng(config.seed ^ kMinibatchStream);

  for (int it = 0; it < config.iterations; ++it) {
    const auto idx = minibatch_sample(n, n0, rng);
    const ObservationSet batch = n0 == n ? model : model.subset(idx);
    ObjectiveValue ov;
    try {
      ov = objective_and_gradient(batch, result.net, result.params, config.penalty_weight, config.penalty_target);
    } catch (const NotPositiveDefiniteError& e) {
      ++result.nugget_retries;
      if (hooks.log) {
        hooks.log("iteration " + std::to_string(it + 1) + ": " + e.what() + "; retrying with tau2 x10");
      }
      ov = objective_and_gradient(batch, result.net, result.params, config.penalty_weight, config.penalty_target,
                                  kNuggetRetryFactor);
    }
    result.nll_trace.push_back(ov.value);
    adam_step(theta, ov.gradient, adam, config.learning_rate, config.beta1, config.beta2);
    unpack_parameters(theta, result.net, result.params);
    if (hooks.on_iteration) hooks.on_iteration(it + 1, result.net, result.params);
  }

  result.net = flow::spectral_project(result.net, config.penalty_target);
  result.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

velocity::VelocityField fitted_velocity(const FitResult& fit, const std::vector<double>& times,
                                        const std::vector<Vec2>& grid, double unit_scale) {
  std::vector<double> mt;
  std::vector<Vec2> mg;
  for (double t : times) mt.push_back(fit.norm.time_to_model(t));
  for (const Vec2& x : grid) mg.push_back(fit.norm.space_to_model(x));
  velocity::VelocityField field = velocity::velocity_field(fit.net, mt, mg, unit_scale);
  for (std::size_t i = 0; i < field.samples.size(); ++i) {
    auto& s = field.samples[i];
    s.t = times[i / grid.size()];
    s.x = grid[i % grid.size()];
    s.v = fit.norm.velocity_to_data(s.v);
  }
  return field;
}

// ---------------------------------------------------------------------------
// Checkpoint

void write_fit(std::ostream& out, const FitResult& fit) {
  using text::format_double;
  flow::write_checkpoint(out, fit.net);
  out << "norm.t_offset = " << format_double(fit.norm.t_offset) << "\n";
  out << "norm.t_scale = " << format_double(fit.norm.t_scale) << "\n";
  out << "norm.x1_offset = " << format_double(fit.norm.x_offset(0)) << "\n";
  out << "norm.x2_offset = " << format_double(fit.norm.x_offset(1)) << "\n";
  out << "norm.x_scale = " << format_double(fit.norm.x_scale) << "\n";
  out << "cov.sigma2 = " << format_double(fit.params.sigma2) << "\n";
  out << "cov.l0 = " << format_double(fit.params.l0) << "\n";
  out << "cov.l1 = " << format_double(fit.params.l1) << "\n";
  out << "cov.l2 = " << format_double(fit.params.l2) << "\n";
  out << "cov.tau2 = " << format_double(fit.params.tau2) << "\n";
  out << "cov.nu = " << format_double(cov::nu_value(fit.params.nu)) << "\n";
  out << "fit.nugget_retries = " << fit.nugget_retries << "\n";
  out << "fit.nll_trace = " << text::format_list(fit.nll_trace) << "\n";
}

void write_fit_file(const std::filesystem::path& path, const FitResult& fit) {
  text::write_atomically(path, [&](std::ostream& out) { write_fit(out, fit); });
}

FitResult read_fit(std::istream& in, const std::string& source) {
  auto doc = text::KeyValueDoc::parse(in, source);
  FitResult fit;
  fit.net = flow::read_checkpoint(doc);
  auto opt = [&](const char* key, double& into) {
    if (auto v = doc.take_double(key)) into = *v;
  };
  auto need = [&](const char* key) {
    auto v = doc.take_double(key);
    if (!v) throw ConfigError(source + ": checkpoint is missing '" + key + "'");
    return *v;
  };
  opt("norm.t_offset", fit.norm.t_offset);
  opt("norm.t_scale", fit.norm.t_scale);
  opt("norm.x1_offset", fit.norm.x_offset(0));
  opt("norm.x2_offset", fit.norm.x_offset(1));
  opt("norm.x_scale", fit.norm.x_scale);
  if (!(fit.norm.t_scale > 0.0) || !(fit.norm.x_scale > 0.0)) {
    throw ConfigError(source + ": normalization scales must be > 0");
  }
  fit.params.sigma2 = need("cov.sigma2");
  fit.params.l0 = need("cov.l0");
  fit.params.l1 = need("cov.l1");
  fit.params.l2 = need("cov.l2");
  fit.params.tau2 = need("cov.tau2");
  fit.params.nu = cov::smoothness_from(need("cov.nu"));
  fit.params.validate();
  if (auto v = doc.take_int("fit.nugget_retries")) fit.nugget_retries = static_cast<int>(*v);
  if (auto v = doc.take_list("fit.nll_trace")) fit.nll_trace = *v;
  doc.require_all_consumed();
  return fit;
}

FitResult read_fit_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_fit(in, path.string());
}

}  // namespace tgp::est

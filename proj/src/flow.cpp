#include "tgp/flow.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "tgp/errors.hpp"

namespace tgp::flow {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::scaled_sigmoid:
      return "scaled_sigmoid";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "scaled_sigmoid" || name == "sigmoid-scaled") return Activation::scaled_sigmoid;
  throw ConfigError("unsupported activation '" + std::string(name) + "' (expected tanh or scaled_sigmoid)");
}

namespace {

template <class Derived>
auto activate(Activation act, const Eigen::ArrayBase<Derived>& z) {
  using Array = Eigen::ArrayXd;
  Array v(z.size());
  Array slope(z.size());
  if (act == Activation::tanh) {
    v = z.tanh();
    slope = 1.0 - v.square();
  } else {
    Array half = (0.5 * z).tanh();
    v = 2.0 * half;
    slope = 1.0 - half.square();
  }
  return std::pair{v, slope};
}

void check_arch(const Architecture& arch) {
  if (arch.blocks < 1) throw ConfigError("flow needs at least one block (k >= 1)");
  if (arch.layers < 2) throw ConfigError("each block needs at least two layers (L >= 2)");
  if (arch.width < 1) throw ConfigError("hidden width must be positive (h >= 1)");
}

ResidualBlock zero_block(const Architecture& arch) {
  const int h = arch.width;
  ResidualBlock b;
  for (int i = 0; i < arch.layers; ++i) {
    const int rows = (i == arch.layers - 1) ? 2 : h;
    const int cols = (i == 0) ? 2 : h;
    b.weights.push_back(Matrix::Zero(rows, cols));
    b.biases.push_back(Vector::Zero(rows));
  }
  b.time_weight = Vector::Zero(h);
  return b;
}

void scale_weights(ResidualBlock& block, double product, double target) {
  if (product <= 0.0) return;
  const double factor = std::pow(target / product, 1.0 / static_cast<double>(block.weights.size()));
  for (auto& w : block.weights) w *= factor;
}

}  // namespace

// ---------------------------------------------------------------------------

FlowNetwork::FlowNetwork(Architecture arch, std::vector<ResidualBlock> blocks)
    : arch_(arch), blocks_(std::move(blocks)) {
  validate();
}

void FlowNetwork::validate() const {
  check_arch(arch_);
  if (static_cast<int>(blocks_.size()) != arch_.blocks) {
    throw DimensionError("flow has " + std::to_string(blocks_.size()) + " blocks, architecture says " +
                         std::to_string(arch_.blocks));
  }
  const ResidualBlock ref = zero_block(arch_);
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    const auto& b = blocks_[j];
    const std::string where = "block " + std::to_string(j) + ": ";
    if (b.weights.size() != ref.weights.size() || b.biases.size() != ref.biases.size()) {
      throw DimensionError(where + "wrong layer count");
    }
    for (std::size_t i = 0; i < ref.weights.size(); ++i) {
      if (b.weights[i].rows() != ref.weights[i].rows() || b.weights[i].cols() != ref.weights[i].cols()) {
        throw DimensionError(where + "W" + std::to_string(i + 1) + " has the wrong shape");
      }
      if (b.biases[i].size() != ref.biases[i].size()) {
        throw DimensionError(where + "b" + std::to_string(i + 1) + " has the wrong length");
      }
    }
    if (b.time_weight.size() != arch_.width) throw DimensionError(where + "w1 has the wrong length");
  }
}

FlowNetwork FlowNetwork::zeros(const Architecture& arch) {
  check_arch(arch);
  return FlowNetwork(arch, std::vector<ResidualBlock>(static_cast<std::size_t>(arch.blocks), zero_block(arch)));
}

FlowNetwork FlowNetwork::constant_drift(const Architecture& arch, const Vec2& w) {
  FlowNetwork net = zeros(arch);
  net.blocks_.front().biases.back() = w;
  return net;
}

FlowNetwork FlowNetwork::random(const Architecture& arch, std::uint64_t seed, const RandomInit& init) {
  FlowNetwork net = zeros(arch);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto fill = [&](auto& m, double s) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * unit(rng);
  };
  for (auto& b : net.blocks_) {
    for (auto& w : b.weights) fill(w, 1.0);
    for (std::size_t i = 0; i + 1 < b.biases.size(); ++i) fill(b.biases[i], init.bias_scale);
    fill(b.biases.back(), init.output_bias_scale);
    fill(b.time_weight, init.bias_scale);
    scale_weights(b, weight_norm_product(b), init.norm_product);
  }
  return net;
}

std::size_t FlowNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) {
    for (const auto& w : b.weights) n += static_cast<std::size_t>(w.size());
    for (const auto& v : b.biases) n += static_cast<std::size_t>(v.size());
    n += static_cast<std::size_t>(b.time_weight.size());
  }
  return n;
}

Vector FlowNetwork::pack() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  auto put = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) flat(k++) = m.data()[i];
  };
  for (const auto& b : blocks_) {
    for (const auto& w : b.weights) put(w);
    for (const auto& v : b.biases) put(v);
    put(b.time_weight);
  }
  return flat;
}

void FlowNetwork::unpack(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw DimensionError("unpack: expected " + std::to_string(parameter_count()) + " parameters, got " +
                         std::to_string(flat.size()));
  }
  Eigen::Index k = 0;
  auto get = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = flat(k++);
  };
  for (auto& b : blocks_) {
    for (auto& w : b.weights) get(w);
    for (auto& v : b.biases) get(v);
    get(b.time_weight);
  }
}

// ---------------------------------------------------------------------------

Vec2 g_forward(const ResidualBlock& block, Activation act, double t, const Vec2& x) {
  const std::size_t layers = block.weights.size();
  Vector z = block.weights[0] * x + t * block.time_weight + block.biases[0];
  for (std::size_t i = 1; i < layers; ++i) {
    Vector a = activate(act, z.array()).first.matrix();
    z = block.weights[i] * a + block.biases[i];
  }
  return z;
}

Vec2 block_forward(const ResidualBlock& block, Activation act, double t, const Vec2& x) {
  return x - t * g_forward(block, act, t, x);
}

BlockTangent block_tangent(const ResidualBlock& block, Activation act, double t, const Vec2& x) {
  const std::size_t layers = block.weights.size();
  // Tangent columns: d/dx1, d/dx2, d/dt.
  Vector z = block.weights[0] * x + t * block.time_weight + block.biases[0];
  Matrix dz(z.size(), 3);
  dz.leftCols(2) = block.weights[0];
  dz.col(2) = block.time_weight;
  for (std::size_t i = 1; i < layers; ++i) {
    auto [a, slope] = activate(act, z.array());
    Matrix da = slope.matrix().asDiagonal() * dz;
    z = block.weights[i] * a.matrix() + block.biases[i];
    dz = block.weights[i] * da;
  }
  BlockTangent out;
  const Vec2 g = z;
  out.value = x - t * g;
  out.jacobian = Mat2::Identity() - t * dz.leftCols(2);
  out.time_derivative = -g - t * Vec2(dz.col(2));
  return out;
}

Vec2 flow_forward(const FlowNetwork& net, double t, const Vec2& x) {
  Vec2 y = x;
  for (const auto& b : net.blocks()) y = block_forward(b, net.architecture().activation, t, y);
  return y;
}

namespace {

BlockTangent flow_tangent(const FlowNetwork& net, double t, const Vec2& x) {
  BlockTangent acc{x, Mat2::Identity(), Vec2::Zero()};
  for (const auto& b : net.blocks()) {
    BlockTangent bt = block_tangent(b, net.architecture().activation, t, acc.value);
    acc.time_derivative = bt.jacobian * acc.time_derivative + bt.time_derivative;
    acc.jacobian = bt.jacobian * acc.jacobian;
    acc.value = bt.value;
  }
  return acc;
}

}  // namespace

Mat2 flow_jacobian(const FlowNetwork& net, double t, const Vec2& x) { return flow_tangent(net, t, x).jacobian; }

Vec2 flow_time_derivative(const FlowNetwork& net, double t, const Vec2& x) {
  return flow_tangent(net, t, x).time_derivative;
}

Vec2 flow_inverse(const FlowNetwork& net, double t, const Vec2& a, const InverseOptions& opts) {
  if (!(opts.tol > 0.0)) throw ContractError("flow_inverse: tol must be positive");
  if (t == 0.0) return a;
  const auto act = net.architecture().activation;
  const auto& blocks = net.blocks();
  // Residuals of later blocks are amplified by at most 2 per block (Lip(psi^(j)) <= 1 + t).
  const double block_tol = std::ldexp(opts.tol, -static_cast<int>(blocks.size()));
  Vec2 target = a;
  for (std::size_t j = blocks.size(); j-- > 0;) {
    Vec2 x = target;
    double residual = 0.0;
    int iter = 0;
    for (;; ++iter) {
      const Vec2 err = x - t * g_forward(blocks[j], act, t, x) - target;
      residual = err.norm();
      if (residual <= block_tol) break;
      if (iter >= opts.max_iter) {
        throw ConvergenceError("flow_inverse: block " + std::to_string(j) + " did not converge in " +
                                   std::to_string(opts.max_iter) + " iterations",
                               residual);
      }
      x -= err;  // x <- target + t g(x)
    }
    target = x;
  }
  const double final_residual = (flow_forward(net, t, target) - a).norm();
  if (final_residual > opts.tol) throw ConvergenceError("flow_inverse: tolerance not reached", final_residual);
  return target;
}

Vec2 FlowNetwork::forward(double t, const Vec2& x) const { return flow_forward(*this, t, x); }
Mat2 FlowNetwork::jacobian(double t, const Vec2& x) const { return flow_jacobian(*this, t, x); }
Vec2 FlowNetwork::time_derivative(double t, const Vec2& x) const { return flow_time_derivative(*this, t, x); }
Vec2 FlowNetwork::inverse(double t, const Vec2& a, const InverseOptions& opts) const {
  return flow_inverse(*this, t, a, opts);
}

// ---------------------------------------------------------------------------

double spectral_norm(const Matrix& w, int iters) { return ad::top_singular_pair(w, iters).sigma; }

double weight_norm_product(const ResidualBlock& block) {
  double p = 1.0;
  for (const auto& w : block.weights) p *= ad::top_singular_pair(w, 5000, 1e-13).sigma;
  return p;
}

FlowNetwork spectral_project(const FlowNetwork& net, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ContractError("spectral_project: gamma must lie in (0, 1)");
  FlowNetwork out = net;
  for (auto& b : out.mutable_blocks()) {
    const double p = weight_norm_product(b);
    if (p >= gamma) scale_weights(b, p, gamma);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Mat2 rotation(double angle) {
  Mat2 r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

}  // namespace

Vec2 RotationFlow::forward(double t, const Vec2& x) const { return center_ + rotation(rate_ * t) * (x - center_); }

Mat2 RotationFlow::jacobian(double t, const Vec2&) const { return rotation(rate_ * t); }

Vec2 RotationFlow::time_derivative(double t, const Vec2& x) const {
  const double c = std::cos(rate_ * t), s = std::sin(rate_ * t);
  Mat2 dr;
  dr << -s, -c, c, -s;
  return rate_ * (dr * (x - center_));
}

Vec2 RotationFlow::inverse(double t, const Vec2& a) const { return center_ + rotation(-rate_ * t) * (a - center_); }

// ---------------------------------------------------------------------------

FlowVars bind_variables(ad::Tape& tape, const FlowNetwork& net) {
  FlowVars vars;
  vars.activation = net.architecture().activation;
  for (const auto& b : net.blocks()) {
    BlockVars bv;
    for (const auto& w : b.weights) bv.weights.push_back(tape.variable(w));
    for (const auto& v : b.biases) bv.biases.push_back(tape.variable(Matrix(v.transpose())));
    bv.time_weight = tape.variable(Matrix(b.time_weight.transpose()));
    vars.blocks.push_back(std::move(bv));
  }
  return vars;
}

Vector gather_gradient(const ad::Gradients& grads, const FlowVars& vars) {
  std::size_t n = 0;
  for (const auto& b : vars.blocks) {
    for (const auto& w : b.weights) n += static_cast<std::size_t>(w.value().size());
    for (const auto& v : b.biases) n += static_cast<std::size_t>(v.value().size());
    n += static_cast<std::size_t>(b.time_weight.value().size());
  }
  Vector flat(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  auto put = [&](const ad::DiffValue& v) {
    const Matrix& g = grads.wrt(v);
    for (Eigen::Index i = 0; i < g.size(); ++i) flat(k++) = g.data()[i];
  };
  for (const auto& b : vars.blocks) {
    for (const auto& w : b.weights) put(w);
    for (const auto& v : b.biases) put(v);
    put(b.time_weight);
  }
  return flat;
}

namespace {

ad::DiffValue activate(Activation act, const ad::DiffValue& z) {
  if (act == Activation::tanh) return ad::tanh(z);
  return ad::scale(2.0, ad::tanh(ad::scale(0.5, z)));
}

}  // namespace

ad::DiffValue forward_batch(ad::Tape& tape, const FlowVars& vars, const ad::DiffValue& positions,
                            const Vector& times) {
  const Eigen::Index n = positions.rows();
  if (positions.cols() != 2 || times.size() != n) {
    throw DimensionError("forward_batch: expected N x 2 positions with N times");
  }
  auto ones = tape.constant(Matrix::Ones(n, 1));
  auto t_col = tape.constant(Matrix(times));
  Matrix t_wide(n, 2);
  t_wide.col(0) = times;
  t_wide.col(1) = times;
  auto t2 = tape.constant(std::move(t_wide));

  ad::DiffValue y = positions;
  for (const auto& b : vars.blocks) {
    const std::size_t layers = b.weights.size();
    ad::DiffValue z = ad::matmul(y, ad::transpose(b.weights[0]));
    z = z + ad::matmul(t_col, b.time_weight) + ad::matmul(ones, b.biases[0]);
    for (std::size_t i = 1; i < layers; ++i) {
      z = ad::matmul(activate(vars.activation, z), ad::transpose(b.weights[i])) + ad::matmul(ones, b.biases[i]);
    }
    y = y - ad::mul(t2, z);
  }
  return y;
}

std::vector<ad::DiffValue> norm_products(const FlowVars& vars) {
  std::vector<ad::DiffValue> out;
  for (const auto& b : vars.blocks) {
    ad::DiffValue p = ad::spectral_norm(b.weights[0]);
    for (std::size_t i = 1; i < b.weights.size(); ++i) p = ad::mul(p, ad::spectral_norm(b.weights[i]));
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_checkpoint(std::ostream& out, const FlowNetwork& net) {
  const auto& arch = net.architecture();
  out << "k = " << arch.blocks << "\n";
  out << "L = " << arch.layers << "\n";
  out << "h = " << arch.width << "\n";
  out << "activation = " << to_string(arch.activation) << "\n";
  for (std::size_t j = 0; j < net.blocks().size(); ++j) {
    const auto& b = net.blocks()[j];
    const std::string prefix = "block" + std::to_string(j) + ".";
    for (std::size_t i = 0; i < b.weights.size(); ++i) {
      out << prefix << "W" << i + 1 << " = " << text::format_matrix(b.weights[i]) << "\n";
    }
    for (std::size_t i = 0; i < b.biases.size(); ++i) {
      out << prefix << "b" << i + 1 << " = " << text::format_matrix(Matrix(b.biases[i])) << "\n";
    }
    out << prefix << "w1 = " << text::format_matrix(Matrix(b.time_weight)) << "\n";
  }
}

FlowNetwork read_checkpoint(text::KeyValueDoc& doc) {
  auto need_int = [&](const std::string& key) {
    auto v = doc.take_int(key);
    if (!v) throw ConfigError(doc.source() + ": checkpoint is missing '" + key + "'");
    return static_cast<int>(*v);
  };
  Architecture arch;
  arch.blocks = need_int("k");
  arch.layers = need_int("L");
  arch.width = need_int("h");
  auto act = doc.take_string("activation");
  if (!act) throw ConfigError(doc.source() + ": checkpoint is missing 'activation'");
  arch.activation = parse_activation(*act);
  check_arch(arch);

  auto need_matrix = [&](const std::string& key) {
    auto m = doc.take_matrix(key);
    if (!m) throw ConfigError(doc.source() + ": checkpoint is missing '" + key + "'");
    return *m;
  };
  auto as_vector = [&](const std::string& key) {
    Matrix m = need_matrix(key);
    if (m.cols() != 1) throw DimensionError(doc.source() + ": '" + key + "' must be a column");
    return Vector(m.col(0));
  };
  std::vector<ResidualBlock> blocks;
  for (int j = 0; j < arch.blocks; ++j) {
    const std::string prefix = "block" + std::to_string(j) + ".";
    ResidualBlock b;
    for (int i = 1; i <= arch.layers; ++i) b.weights.push_back(need_matrix(prefix + "W" + std::to_string(i)));
    for (int i = 1; i <= arch.layers; ++i) b.biases.push_back(as_vector(prefix + "b" + std::to_string(i)));
    b.time_weight = as_vector(prefix + "w1");
    blocks.push_back(std::move(b));
  }
  return FlowNetwork(arch, std::move(blocks));
}

FlowNetwork read_checkpoint(std::istream& in, const std::string& source) {
  auto doc = text::KeyValueDoc::parse(in, source);
  FlowNetwork net = read_checkpoint(doc);
  doc.require_all_consumed();
  return net;
}

}  // namespace tgp::flow

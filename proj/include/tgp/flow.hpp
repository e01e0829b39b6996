#pragma once

// Backward flows psi_t(x): the time-0 position (label) of the particle found
// at x at time t. psi_0 is the identity for every flow here.
//
// FlowNetwork is the learnable family: a composition of k time-dependent
// residual blocks psi^(j)_t(y) = y - t * g^(j)_t(y), each g a small MLP whose
// first layer takes time as the bias t * w1. A block is invertible when the
// product of its weight spectral norms is below 1 and the activation has
// |sigma'| <= 1.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "tgp/autodiff.hpp"
#include "tgp/linalg.hpp"
#include "tgp/textio.hpp"

namespace tgp::flow {

// Only smooth activations with |sigma'| <= 1 are offered.
enum class Activation {
  tanh,
  scaled_sigmoid,  // 4 / (1 + e^-y) - 2 == 2 tanh(y / 2)
};

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct Architecture {
  int blocks = 3;  // k
  int layers = 3;  // L, number of weight matrices per block (>= 2)
  int width = 32;  // h
  Activation activation = Activation::tanh;
};

// Parameters of one g^(j). Shapes: W1 h x 2, Wi h x h (1 < i < L), WL 2 x h;
// biases b1..b_{L-1} of length h, bL of length 2; time weight w1 of length h.
struct ResidualBlock {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Vector time_weight;
};

class BackwardFlow {
 public:
  virtual ~BackwardFlow() = default;

  virtual Vec2 forward(double t, const Vec2& x) const = 0;
  // [J]_ij = d psi_t(x)_i / d x_j
  virtual Mat2 jacobian(double t, const Vec2& x) const = 0;
  virtual Vec2 time_derivative(double t, const Vec2& x) const = 0;
  // Position at time t of the particle labelled a.
  virtual Vec2 inverse(double t, const Vec2& a) const = 0;
};

struct InverseOptions {
  double tol = 1e-10;
  int max_iter = 200;
};

class FlowNetwork final : public BackwardFlow {
 public:
  // Validates every shape against the architecture.
  FlowNetwork(Architecture arch, std::vector<ResidualBlock> blocks);

  // All weights and biases zero: the identity flow.
  static FlowNetwork zeros(const Architecture& arch);
  // psi_t(x) = x - t w, carried by the output bias of the first block.
  static FlowNetwork constant_drift(const Architecture& arch, const Vec2& w);

  struct RandomInit {
    double norm_product = 0.5;  // per-block product of weight spectral norms
    double bias_scale = 0.1;    // hidden and time biases ~ U(-s, s)
    double output_bias_scale = 0.0;
  };
  static FlowNetwork random(const Architecture& arch, std::uint64_t seed, const RandomInit& init);
  static FlowNetwork random(const Architecture& arch, std::uint64_t seed) {
    return random(arch, seed, RandomInit{});
  }

  const Architecture& architecture() const { return arch_; }
  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  // Shape changes through this reference are caught by the next validate().
  std::vector<ResidualBlock>& mutable_blocks() { return blocks_; }
  void validate() const;

  std::size_t parameter_count() const;
  // Row-major flattening in block order: W1..WL, b1..bL, w1.
  Vector pack() const;
  void unpack(const Vector& flat);

  Vec2 forward(double t, const Vec2& x) const override;
  Mat2 jacobian(double t, const Vec2& x) const override;
  Vec2 time_derivative(double t, const Vec2& x) const override;
  Vec2 inverse(double t, const Vec2& a) const override { return inverse(t, a, InverseOptions{}); }
  Vec2 inverse(double t, const Vec2& a, const InverseOptions& opts) const;

 private:
  Architecture arch_;
  std::vector<ResidualBlock> blocks_;
};

// g^(j)_t(x)
Vec2 g_forward(const ResidualBlock& block, Activation act, double t, const Vec2& x);
// x - t g^(j)_t(x)
Vec2 block_forward(const ResidualBlock& block, Activation act, double t, const Vec2& x);
// Value, Jacobian and time derivative of one block in a single forward-mode pass.
struct BlockTangent {
  Vec2 value;
  Mat2 jacobian;
  Vec2 time_derivative;
};
BlockTangent block_tangent(const ResidualBlock& block, Activation act, double t, const Vec2& x);

Vec2 flow_forward(const FlowNetwork& net, double t, const Vec2& x);
Mat2 flow_jacobian(const FlowNetwork& net, double t, const Vec2& x);
Vec2 flow_time_derivative(const FlowNetwork& net, double t, const Vec2& x);
// Fixed-point inversion x <- a + t g(x), one block at a time from the last.
Vec2 flow_inverse(const FlowNetwork& net, double t, const Vec2& a, const InverseOptions& opts = {});

// Largest singular value by power iteration.
double spectral_norm(const Matrix& w, int iters);
// prod_i ||W_i||_2 for one block, with converged norms.
double weight_norm_product(const ResidualBlock& block);
// Blocks whose norm product reaches gamma get every W_i scaled by
// (gamma / product)^(1/L); the others are left alone.
FlowNetwork spectral_project(const FlowNetwork& net, double gamma = 0.98);

// Closed-form flows used as ground truth.
class IdentityFlow final : public BackwardFlow {
 public:
  Vec2 forward(double, const Vec2& x) const override { return x; }
  Mat2 jacobian(double, const Vec2&) const override { return Mat2::Identity(); }
  Vec2 time_derivative(double, const Vec2&) const override { return Vec2::Zero(); }
  Vec2 inverse(double, const Vec2& a) const override { return a; }
};

// psi_t(x) = x - t w; velocity w everywhere.
class ConstantDriftFlow final : public BackwardFlow {
 public:
  explicit ConstantDriftFlow(const Vec2& w) : w_(w) {}
  const Vec2& drift() const { return w_; }
  Vec2 forward(double t, const Vec2& x) const override { return x - t * w_; }
  Mat2 jacobian(double, const Vec2&) const override { return Mat2::Identity(); }
  Vec2 time_derivative(double, const Vec2&) const override { return -w_; }
  Vec2 inverse(double t, const Vec2& a) const override { return a + t * w_; }

 private:
  Vec2 w_;
};

// psi_t(x) = c + R(rate * t)(x - c) with R the counter-clockwise rotation.
// Velocity is rate * (x2 - c2, -(x1 - c1)), clockwise about c.
class RotationFlow final : public BackwardFlow {
 public:
  RotationFlow(double rate, const Vec2& center) : rate_(rate), center_(center) {}
  double rate() const { return rate_; }
  const Vec2& center() const { return center_; }
  Vec2 forward(double t, const Vec2& x) const override;
  Mat2 jacobian(double t, const Vec2& x) const override;
  Vec2 time_derivative(double t, const Vec2& x) const override;
  Vec2 inverse(double t, const Vec2& a) const override;

 private:
  double rate_;
  Vec2 center_;
};

// ---------------------------------------------------------------------------
// Batched evaluation on a tape, for likelihood fitting.

struct BlockVars {
  std::vector<ad::DiffValue> weights;
  std::vector<ad::DiffValue> biases;  // 1 x out rows
  ad::DiffValue time_weight;          // 1 x h row
};

struct FlowVars {
  Activation activation = Activation::tanh;
  std::vector<BlockVars> blocks;
};

// Registers every weight and bias of `net` as a tape variable.
FlowVars bind_variables(ad::Tape& tape, const FlowNetwork& net);
// Gradient of every bound variable, flattened in FlowNetwork::pack order.
Vector gather_gradient(const ad::Gradients& grads, const FlowVars& vars);

// psi applied row-wise: positions N x 2, times length N. Returns N x 2 labels.
ad::DiffValue forward_batch(ad::Tape& tape, const FlowVars& vars, const ad::DiffValue& positions,
                            const Vector& times);
// Spectral-norm product of each block's weights, one 1x1 node per block.
std::vector<ad::DiffValue> norm_products(const FlowVars& vars);

// ---------------------------------------------------------------------------
// Checkpoint: plain key = value text. Keys k, L, h, activation, then
// block<j>.W<i>, block<j>.b<i>, block<j>.w1 as row-major arrays with 17
// significant digits.

void write_checkpoint(std::ostream& out, const FlowNetwork& net);
// Consumes only the flow keys of `doc`.
FlowNetwork read_checkpoint(text::KeyValueDoc& doc);
FlowNetwork read_checkpoint(std::istream& in, const std::string& source);

}  // namespace tgp::flow

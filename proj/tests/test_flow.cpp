#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "tgp/errors.hpp"
#include "tgp/flow.hpp"

using namespace tgp;
using namespace tgp::flow;
using tgp::testing::central_difference;
using tgp::testing::max_rel_error;

namespace {

Architecture small_arch(int k = 3, int layers = 3, int h = 8) {
  return Architecture{k, layers, h, Activation::tanh};
}

// Random net whose blocks start with norm products above 1, then projected.
FlowNetwork projected_net(std::uint64_t seed, const Architecture& arch = small_arch()) {
  FlowNetwork::RandomInit init;
  init.norm_product = 1.5;
  init.bias_scale = 0.5;
  init.output_bias_scale = 0.3;
  return spectral_project(FlowNetwork::random(arch, seed, init), 0.98);
}

Vec2 random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return Vec2(u(rng), u(rng));
}

double rel_norm_error(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-12); }

Mat2 fd_jacobian(const BackwardFlow& f, double t, const Vec2& x, double h) {
  Mat2 j;
  for (int c = 0; c < 2; ++c) {
    Vec2 e = Vec2::Zero();
    e(c) = h;
    j.col(c) = (f.forward(t, x + e) - f.forward(t, x - e)) / (2.0 * h);
  }
  return j;
}

Vec2 fd_time(const BackwardFlow& f, double t, const Vec2& x, double h) {
  return (f.forward(t + h, x) - f.forward(t - h, x)) / (2.0 * h);
}

}  // namespace

TEST_CASE("activations keep |sigma'| <= 1") {
  CHECK(parse_activation("tanh") == Activation::tanh);
  CHECK(parse_activation("scaled_sigmoid") == Activation::scaled_sigmoid);
  CHECK_THROWS_AS(parse_activation("relu"), ConfigError);

  // A 1-wide, 2-layer block with unit weights exposes sigma directly.
  Architecture arch{1, 2, 1, Activation::scaled_sigmoid};
  FlowNetwork net = FlowNetwork::zeros(arch);
  net.mutable_blocks()[0].weights[0] << 1.0, 0.0;
  net.mutable_blocks()[0].weights[1] << 1.0, 0.0;
  for (double y : {-3.0, -0.4, 0.0, 0.8, 5.0}) {
    const Vec2 g = g_forward(net.blocks()[0], arch.activation, 0.0, Vec2(y, 0.0));
    CHECK(g(0) == doctest::Approx(4.0 / (1.0 + std::exp(-y)) - 2.0).epsilon(1e-14));
    const BlockTangent bt = block_tangent(net.blocks()[0], arch.activation, 1.0, Vec2(y, 0.0));
    // jacobian = I - t * sigma'(y) e1 e1^T
    CHECK(1.0 - bt.jacobian(0, 0) <= 1.0);
    CHECK(1.0 - bt.jacobian(0, 0) >= 0.0);
  }
}

TEST_CASE("network shapes are validated") {
  FlowNetwork net = FlowNetwork::zeros(small_arch());
  auto blocks = net.blocks();
  blocks[1].weights[1] = Matrix::Zero(8, 7);
  CHECK_THROWS_AS(FlowNetwork(small_arch(), blocks), DimensionError);
  CHECK_THROWS_AS(FlowNetwork::zeros(Architecture{3, 1, 8, Activation::tanh}), ConfigError);
  CHECK_THROWS_AS(FlowNetwork(small_arch(2), net.blocks()), DimensionError);

  Vector flat = net.pack();
  CHECK(flat.size() == static_cast<Eigen::Index>(net.parameter_count()));
  CHECK(net.parameter_count() == 3u * (8 * 2 + 8 * 8 + 2 * 8 + 8 + 8 + 2 + 8));
}

TEST_CASE("g_forward") {
  SUBCASE("zero network returns the output bias") {
    FlowNetwork net = FlowNetwork::constant_drift(small_arch(1), Vec2(0.4, -1.1));
    for (double t : {0.0, 0.3, 1.0}) {
      CHECK(g_forward(net.blocks()[0], Activation::tanh, t, Vec2(2.0, 5.0)) == Vec2(0.4, -1.1));
    }
  }
  SUBCASE("hand-evaluated two-layer block") {
    // W1 = I, w1 = e1, b1 = 0, W2 = I, b2 = 0 at (t, x) = (0.5, (1, 0)):
    // z = (1.5, 0), g = (tanh 1.5, 0).
    FlowNetwork net = FlowNetwork::zeros(Architecture{1, 2, 2, Activation::tanh});
    auto& b = net.mutable_blocks()[0];
    b.weights[0].setIdentity();
    b.weights[1].setIdentity();
    b.time_weight << 1.0, 0.0;
    const Vec2 g = g_forward(b, Activation::tanh, 0.5, Vec2(1.0, 0.0));
    CHECK(g(0) == doctest::Approx(0.9051482536448664).epsilon(1e-15));
    CHECK(g(1) == 0.0);
    const Vec2 psi = block_forward(b, Activation::tanh, 0.5, Vec2(1.0, 0.0));
    CHECK(psi(0) == doctest::Approx(1.0 - 0.5 * 0.9051482536448664).epsilon(1e-15));
  }
  SUBCASE("Lipschitz bound by the weight-norm product") {
    std::mt19937_64 rng(3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      FlowNetwork::RandomInit init;
      init.norm_product = 0.3 + 0.2 * static_cast<double>(seed);
      FlowNetwork net = FlowNetwork::random(small_arch(1), seed, init);
      const double bound = weight_norm_product(net.blocks()[0]);
      for (int i = 0; i < 20; ++i) {
        const Vec2 x = 4.0 * random_point(rng), y = 4.0 * random_point(rng);
        const double t = random_point(rng)(0);
        const double lhs = (g_forward(net.blocks()[0], Activation::tanh, t, x) -
                            g_forward(net.blocks()[0], Activation::tanh, t, y))
                               .norm();
        CHECK(lhs <= bound * (x - y).norm() * (1.0 + 1e-12));
      }
    }
  }
}

TEST_CASE("block_forward") {
  FlowNetwork net = projected_net(4);
  const auto& b = net.blocks()[0];
  const Vec2 x(0.3, 0.9);
  CHECK(block_forward(b, Activation::tanh, 0.0, x) == x);
  CHECK(block_forward(b, Activation::tanh, 0.42, x) == x - 0.42 * g_forward(b, Activation::tanh, 0.42, x));

  FlowNetwork drift = FlowNetwork::constant_drift(small_arch(1), Vec2(0.5, -0.25));
  CHECK(block_forward(drift.blocks()[0], Activation::tanh, 0.7, Vec2(1.0, 2.0)) ==
        Vec2(1.0, 2.0) - 0.7 * Vec2(0.5, -0.25));
}

TEST_CASE("flow_forward") {
  SUBCASE("single block reduces to block_forward") {
    FlowNetwork net = projected_net(5, small_arch(1));
    CHECK(flow_forward(net, 0.6, Vec2(0.2, 0.1)) == block_forward(net.blocks()[0], Activation::tanh, 0.6, Vec2(0.2, 0.1)));
  }
  SUBCASE("affine blocks compose to a summed drift") {
    FlowNetwork net = FlowNetwork::zeros(small_arch(3));
    net.mutable_blocks()[0].biases.back() = Vec2(0.1, 0.2);
    net.mutable_blocks()[1].biases.back() = Vec2(-0.3, 0.05);
    net.mutable_blocks()[2].biases.back() = Vec2(0.4, 0.4);
    const Vec2 psi = flow_forward(net, 0.5, Vec2(1.0, 1.0));
    CHECK(psi(0) == doctest::Approx(1.0 - 0.5 * 0.2).epsilon(1e-15));
    CHECK(psi(1) == doctest::Approx(1.0 - 0.5 * 0.65).epsilon(1e-15));
  }
  SUBCASE("time zero is the identity and composition matches chained blocks") {
    std::mt19937_64 rng(7);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      FlowNetwork net = projected_net(seed);
      const Vec2 x = 3.0 * random_point(rng) - Vec2(1.0, 1.0);
      CHECK(flow_forward(net, 0.0, x) == x);
      const double t = random_point(rng)(0);
      Vec2 chained = x;
      for (const auto& b : net.blocks()) chained = block_forward(b, Activation::tanh, t, chained);
      CHECK(flow_forward(net, t, x) == chained);
    }
  }
}

TEST_CASE("flow_jacobian and flow_time_derivative") {
  const Vec2 w(1.0, 2.0);
  FlowNetwork drift = FlowNetwork::constant_drift(small_arch(), w);
  FlowNetwork ident = FlowNetwork::zeros(small_arch());
  CHECK(flow_jacobian(ident, 0.4, Vec2(0.3, 0.3)) == Mat2::Identity());
  CHECK(flow_jacobian(drift, 0.4, Vec2(0.3, 0.3)) == Mat2::Identity());
  CHECK(flow_time_derivative(drift, 0.4, Vec2(0.3, 0.3)) == -w);
  CHECK(flow_time_derivative(ident, 0.4, Vec2(0.3, 0.3)) == Vec2::Zero());

  std::mt19937_64 rng(12);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    FlowNetwork net = projected_net(100 + seed);
    const Vec2 x = random_point(rng);
    const double t = 0.05 + 0.9 * random_point(rng)(0);
    CHECK(rel_norm_error(flow_jacobian(net, t, x), fd_jacobian(net, t, x, 1e-6)) < 1e-6);
    CHECK(rel_norm_error(flow_time_derivative(net, t, x), fd_time(net, t, x, 1e-6)) < 1e-6);
    CHECK(std::abs(flow_jacobian(net, t, x).determinant()) > 0.0);
  }
}

TEST_CASE("flow_inverse") {
  const Vec2 w(0.3, -0.2);
  FlowNetwork drift = FlowNetwork::constant_drift(small_arch(), w);
  const Vec2 a(0.25, 0.75);
  const Vec2 inv = flow_inverse(drift, 0.6, a);
  CHECK((inv - (a + 0.6 * w)).norm() < 1e-15);

  FlowNetwork net = projected_net(41);
  CHECK(flow_inverse(net, 0.0, a) == a);

  std::mt19937_64 rng(44);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    FlowNetwork n = projected_net(200 + seed);
    const Vec2 x = random_point(rng);
    const double t = random_point(rng)(0);
    InverseOptions opts;
    const Vec2 back = flow_inverse(n, t, flow_forward(n, t, x), opts);
    CHECK((back - x).norm() < 1e-8);
    CHECK((flow_forward(n, t, back) - flow_forward(n, t, x)).norm() <= opts.tol);
  }

  SUBCASE("non-contractive blocks exhaust the iteration budget") {
    FlowNetwork::RandomInit init;
    init.norm_product = 40.0;
    FlowNetwork wild = FlowNetwork::random(small_arch(1, 2, 4), 3, init);
    InverseOptions opts;
    opts.max_iter = 5;
    CHECK_THROWS_AS(flow_inverse(wild, 1.0, Vec2(0.5, 0.5), opts), ConvergenceError);
    opts.tol = 0.0;
    CHECK_THROWS_AS(flow_inverse(wild, 1.0, Vec2(0.5, 0.5), opts), ContractError);
  }
}

TEST_CASE("spectral norm and projection") {
  CHECK(spectral_norm(Matrix::Identity(3, 3), 5) == doctest::Approx(1.0).epsilon(1e-15));
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 0.5;
  CHECK(spectral_norm(d, 30) == doctest::Approx(3.0).epsilon(1e-12));

  std::mt19937_64 rng(90);
  Matrix big = tgp::testing::random_matrix(32, 32, rng);
  Eigen::JacobiSVD<Matrix> svd(big);
  CHECK(std::abs(spectral_norm(big, 4000) - svd.singularValues()(0)) < 1e-6);

  SUBCASE("contractive nets pass through unchanged") {
    FlowNetwork net = FlowNetwork::random(small_arch(), 8);  // products 0.5
    FlowNetwork p = spectral_project(net, 0.98);
    CHECK(p.pack() == net.pack());
  }
  SUBCASE("two-layer block with norms (2, 1)") {
    FlowNetwork net = FlowNetwork::zeros(Architecture{1, 2, 2, Activation::tanh});
    auto& b = net.mutable_blocks()[0];
    b.weights[0] << 2.0, 0.0, 0.0, 0.5;
    b.weights[1] << 1.0, 0.0, 0.0, 1.0;
    CHECK(weight_norm_product(b) == doctest::Approx(2.0).epsilon(1e-14));
    FlowNetwork p = spectral_project(net, 0.98);
    CHECK(weight_norm_product(p.blocks()[0]) == doctest::Approx(0.98).epsilon(1e-12));
    const double factor = std::sqrt(0.98 / 2.0);
    CHECK(p.blocks()[0].weights[0](0, 0) == doctest::Approx(2.0 * factor).epsilon(1e-14));
    CHECK(p.blocks()[0].weights[1](1, 1) == doctest::Approx(factor).epsilon(1e-14));
  }
  SUBCASE("projected products stay below one") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      FlowNetwork::RandomInit init;
      init.norm_product = 0.5 + static_cast<double>(seed);
      FlowNetwork p = spectral_project(FlowNetwork::random(small_arch(), seed, init), 0.98);
      for (const auto& b : p.blocks()) CHECK(weight_norm_product(b) < 1.0);
    }
  }
  CHECK_THROWS_AS(spectral_project(FlowNetwork::zeros(small_arch()), 1.0), ContractError);
}

TEST_CASE("analytic flows") {
  RotationFlow rot(1.3, Vec2(0.5, 0.5));
  ConstantDriftFlow drift(Vec2(0.3, -0.2));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const Vec2 x = random_point(rng);
    const double t = 0.1 + 0.8 * random_point(rng)(0);
    CHECK(rel_norm_error(rot.jacobian(t, x), fd_jacobian(rot, t, x, 1e-6)) < 1e-8);
    CHECK(rel_norm_error(rot.time_derivative(t, x), fd_time(rot, t, x, 1e-6)) < 1e-8);
    CHECK((rot.inverse(t, rot.forward(t, x)) - x).norm() < 1e-14);
    CHECK((drift.inverse(t, drift.forward(t, x)) - x).norm() < 1e-15);
  }
  CHECK((rot.forward(0.0, Vec2(0.1, 0.9)) - Vec2(0.1, 0.9)).norm() < 1e-15);
}

TEST_CASE("batched tape forward matches pointwise evaluation and differentiates correctly") {
  FlowNetwork net = projected_net(77, Architecture{2, 3, 4, Activation::scaled_sigmoid});
  std::mt19937_64 rng(78);
  const int n = 6;
  Matrix pos(n, 2);
  Vector times(n);
  for (int i = 0; i < n; ++i) {
    pos.row(i) = random_point(rng).transpose();
    times(i) = random_point(rng)(0);
  }

  ad::Tape tape;
  FlowVars vars = bind_variables(tape, net);
  auto labels = forward_batch(tape, vars, tape.constant(pos), times);
  for (int i = 0; i < n; ++i) {
    const Vec2 expect = flow_forward(net, times(i), pos.row(i).transpose());
    CHECK((labels.value().row(i).transpose() - expect).norm() < 1e-14);
  }

  // Scalar summary: sum of squared labels plus the norm products.
  auto products = norm_products(vars);
  auto objective = ad::sum(ad::mul(labels, labels));
  for (const auto& p : products) objective = objective + p;
  const Vector grad = gather_gradient(tape.backward(objective), vars);

  const Vector theta0 = net.pack();
  auto value = [&](const Matrix& theta) {
    FlowNetwork probe = net;
    probe.unpack(Vector(theta.col(0)));
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += flow_forward(probe, times(i), pos.row(i).transpose()).squaredNorm();
    for (const auto& b : probe.blocks()) s += weight_norm_product(b);
    return s;
  };
  const Matrix fd = central_difference(value, Matrix(theta0), 1e-5);
  CHECK(max_rel_error(Matrix(grad), fd, 1e-4) < 1e-5);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  FlowNetwork net = projected_net(9, Architecture{2, 3, 5, Activation::scaled_sigmoid});
  std::stringstream ss;
  write_checkpoint(ss, net);
  FlowNetwork back = read_checkpoint(ss, "mem");
  CHECK(back.architecture().blocks == 2);
  CHECK(back.architecture().width == 5);
  CHECK(back.architecture().activation == Activation::scaled_sigmoid);
  CHECK(back.pack() == net.pack());

  std::stringstream again;
  write_checkpoint(again, back);
  std::stringstream first;
  write_checkpoint(first, net);
  CHECK(again.str() == first.str());

  std::stringstream bad("k = 1\nL = 2\nh = 2\nactivation = tanh\nblock0.W1 = 2 2 1 2 3\n");
  CHECK_THROWS_AS(read_checkpoint(bad, "bad"), FormatError);
  std::stringstream missing("k = 1\nL = 2\nh = 2\nactivation = tanh\n");
  CHECK_THROWS_AS(read_checkpoint(missing, "missing"), ConfigError);
  std::stringstream extra;
  write_checkpoint(extra, FlowNetwork::zeros(Architecture{1, 2, 2, Activation::tanh}));
  extra << "bogus = 1\n";
  CHECK_THROWS_AS(read_checkpoint(extra, "extra"), ConfigError);
}

#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "tgp/covariance.hpp"
#include "tgp/errors.hpp"

using namespace tgp;
using namespace tgp::cov;
using tgp::flow::ConstantDriftFlow;
using tgp::flow::FlowNetwork;
using tgp::flow::IdentityFlow;
using tgp::testing::central_difference;
using tgp::testing::max_rel_error;

namespace {

FlowNetwork projected_net(std::uint64_t seed) {
  FlowNetwork::RandomInit init;
  init.norm_product = 1.5;
  init.bias_scale = 0.5;
  init.output_bias_scale = 0.3;
  return flow::spectral_project(FlowNetwork::random({2, 3, 8, flow::Activation::tanh}, seed, init), 0.98);
}

// Matern from its Bessel-function definition, independent of the closed forms.
double matern_bessel(double d, double sigma2, double nu) {
  if (d == 0.0) return sigma2;
  const double z = std::sqrt(2.0 * nu) * d;
  return sigma2 * std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(z, nu) * std::cyl_bessel_k(nu, z);
}

std::vector<SpaceTimePoint> random_points(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> ts(n);
  for (auto& t : ts) t = u(rng);
  std::sort(ts.begin(), ts.end());
  std::vector<SpaceTimePoint> pts;
  for (double t : ts) pts.push_back({t, Vec2(u(rng), u(rng))});
  return pts;
}

}  // namespace

TEST_CASE("smoothness parsing") {
  CHECK(smoothness_from(0.5) == Smoothness::half);
  CHECK(smoothness_from(1.5) == Smoothness::three_halves);
  CHECK(smoothness_from(2.5) == Smoothness::five_halves);
  CHECK(nu_value(Smoothness::five_halves) == 2.5);
  CHECK_THROWS_AS(smoothness_from(1.0), ConfigError);
  CHECK_THROWS_AS(matern(0.3, 1.0, 2.0), ConfigError);
  CHECK(CovarianceParams{}.nu == Smoothness::three_halves);
}

TEST_CASE("parameter validation") {
  CovarianceParams p;
  CHECK_NOTHROW(p.validate());
  p.l1 = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.l1 = 1.0;
  p.tau2 = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.tau2 = std::nan("");
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("matern closed forms") {
  for (double nu : {0.5, 1.5, 2.5}) {
    CHECK(matern(0.0, 1.7, nu) == 1.7);
    CHECK(std::abs(matern(1e-12, 1.7, nu) - 1.7) < 1e-11);
    for (double d = 0.01; d < 6.0; d += 0.0731) {
      CHECK(std::abs(matern(d, 1.7, nu) - matern_bessel(d, 1.7, nu)) < 1e-12);
    }
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int i = 0; i < 200; ++i) {
      double a = u(rng), b = u(rng);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      CHECK(matern(a, 1.0, nu) > matern(b, 1.0, nu));
    }
  }
  CHECK(std::abs(matern(1.0, 2.0, 0.5) - 0.735758882) < 1e-9);
  CHECK_THROWS_AS(matern(-0.1, 1.0, 1.5), ContractError);
}

TEST_CASE("warped distance") {
  CovarianceParams unit;
  IdentityFlow id;
  const SpaceTimePoint p{0.0, Vec2(0, 0)};
  CHECK(warped_distance(p, p, unit, id) == 0.0);
  CHECK(warped_distance(p, {0.0, Vec2(3, 4)}, unit, id) == doctest::Approx(5.0).epsilon(1e-15));

  ConstantDriftFlow drift(Vec2(1.0, 0.0));
  CHECK(warped_distance(p, {1.0, Vec2(1, 0)}, unit, drift) == doctest::Approx(1.0).epsilon(1e-15));

  CovarianceParams scaled{1.0, 2.0, 0.5, 4.0, Smoothness::half, 0.1};
  // (0.6/2)^2 + (0.5/0.5)^2 + (2/4)^2
  CHECK(warped_distance({0.2, Vec2(0, 0)}, {0.8, Vec2(0.5, 2.0)}, scaled, id) ==
        doctest::Approx(std::sqrt(0.09 + 1.0 + 0.25)).epsilon(1e-14));
}

TEST_CASE("cov_entry") {
  CovarianceParams params{1.3, 0.4, 0.3, 0.2, Smoothness::three_halves, 0.05};
  FlowNetwork net = projected_net(11);
  std::mt19937_64 rng(5);
  auto pts = random_points(30, rng);
  for (const auto& p : pts) {
    CHECK(cov_entry(p, p, params, net) == params.sigma2);
    for (const auto& q : pts) CHECK(cov_entry(p, q, params, net) == cov_entry(q, p, params, net));
  }

  // One particle observed at two times under a constant drift keeps only the time lag.
  const Vec2 w(0.6, -0.2);
  ConstantDriftFlow drift(w);
  const Vec2 x(0.3, 0.4);
  const SpaceTimePoint a{0.2, x + 0.2 * w};
  const SpaceTimePoint b{0.7, x + 0.7 * w};
  const double k = cov_entry(a, b, params, drift);
  CHECK(k == doctest::Approx(matern(0.5 / params.l0, params.sigma2, Smoothness::three_halves)).epsilon(1e-13));
  CHECK(k < params.sigma2);

  // Identity flow: stationary in space and time.
  IdentityFlow id;
  const Vec2 shift(0.37, -0.81);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto& p = pts[i];
    const auto& q = pts[i + 1];
    const double base = cov_entry(p, q, params, id);
    CHECK(cov_entry({p.t, p.x + shift}, {q.t, q.x + shift}, params, id) == doctest::Approx(base).epsilon(1e-12));
    CHECK(cov_entry({p.t + 1.0, p.x}, {q.t + 1.0, q.x}, params, id) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("cov_matrix") {
  CovarianceParams params{2.0, 0.5, 0.5, 0.5, Smoothness::three_halves, 0.25};
  IdentityFlow id;
  Matrix one = cov_matrix({{0.0, Vec2(0.1, 0.1)}}, params, id);
  REQUIRE(one.rows() == 1);
  CHECK(one(0, 0) == 2.25);

  Matrix two = cov_matrix({{0.3, Vec2(0.1, 0.1)}, {0.3, Vec2(0.1, 0.1)}}, params, id);
  CHECK(two(0, 0) == 2.25);
  CHECK(two(1, 1) == 2.25);
  CHECK(two(0, 1) == 2.0);
  CHECK(two(1, 0) == 2.0);

  CHECK_THROWS_AS(cov_matrix({}, params, id), ContractError);
  CHECK_THROWS_AS(cov_matrix({{0.5, Vec2(0, 0)}, {0.2, Vec2(0, 0)}}, params, id), ContractError);
  CHECK_THROWS_AS(cov_matrix({{1.5, Vec2(0, 0)}}, params, id), ContractError);

  for (std::uint64_t s = 0; s < 5; ++s) {
    FlowNetwork net = projected_net(100 + s);
    std::mt19937_64 rng(s);
    auto pts = random_points(20, rng);
    for (Smoothness nu : {Smoothness::half, Smoothness::three_halves, Smoothness::five_halves}) {
      CovarianceParams p{1.0, 0.3, 0.2, 0.2, nu, 1e-8};
      Matrix k = cov_matrix(pts, p, net);
      for (Eigen::Index r = 0; r < k.rows(); ++r) {
        for (Eigen::Index c = 0; c < k.cols(); ++c) {
          CHECK(std::abs(k(r, c) - k(c, r)) <= 1e-15 * p.sigma2);
          if (r != c) CHECK(k(r, c) == cov_entry(pts[r], pts[c], p, net));
        }
      }
      CHECK_NOTHROW(ad::cholesky_lower(k));
    }
  }
}

TEST_CASE("tape covariance matches the plain assembly and differentiates correctly") {
  std::mt19937_64 rng(77);
  const Eigen::Index n = 9;
  Matrix labels = tgp::testing::random_matrix(n, 2, rng, 0.0, 1.0);
  Vector times(n);
  for (Eigen::Index i = 0; i < n; ++i) times(i) = static_cast<double>(i / 3) / 2.0;
  // a coincident pair at the same time
  labels.row(4) = labels.row(3);
  Matrix weights = tgp::testing::random_matrix(n, n, rng);

  for (Smoothness nu : {Smoothness::half, Smoothness::three_halves, Smoothness::five_halves}) {
    const double scales[4] = {1.4, 0.7, 0.3, 0.45};

    // Objective: sum_rc W_rc K_rc, differentiated w.r.t. labels and scales.
    auto eval = [&](const Matrix& lab, const double* s) {
      ad::Tape tape;
      auto a = tape.variable(lab);
      auto s2 = tape.variable(s[0]);
      auto l0 = tape.variable(s[1]);
      auto l1 = tape.variable(s[2]);
      auto l2 = tape.variable(s[3]);
      auto k = matern_covariance(a, times, s2, l0, l1, l2, nu);
      auto f = ad::sum(ad::mul(k, tape.constant(weights)));
      auto g = tape.backward(f);
      Matrix ds(1, 4);
      ds << g.scalar(s2), g.scalar(l0), g.scalar(l1), g.scalar(l2);
      return std::tuple{k.value(), f.scalar(), Matrix(g.wrt(a)), ds};
    };

    auto [k, f, ga, gs] = eval(labels, scales);
    CovarianceParams p{scales[0], scales[1], scales[2], scales[3], nu, 1.0};
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const double d = scaled_distance(times(r) - times(c), Vec2(labels.row(r) - labels.row(c)), p);
        CHECK(k(r, c) == doctest::Approx(matern(d, p.sigma2, nu)).epsilon(1e-14));
      }
    }

    if (nu != Smoothness::half) {
      Matrix fd_a = central_difference([&](const Matrix& lab) { return std::get<1>(eval(lab, scales)); }, labels, 1e-6);
      CHECK(max_rel_error(ga, fd_a, 1e-4) < 1e-6);
    } else {
      // The exponential kernel has a kink at coincident labels; check the other rows only.
      Matrix fd_a = central_difference([&](const Matrix& lab) { return std::get<1>(eval(lab, scales)); }, labels, 1e-6);
      for (Eigen::Index r : {0, 1, 2, 5, 6, 7, 8}) {
        CHECK(max_rel_error(ga.row(r), fd_a.row(r), 1e-4) < 1e-6);
      }
    }
    Matrix s0(1, 4);
    s0 << scales[0], scales[1], scales[2], scales[3];
    Matrix fd_s = central_difference(
        [&](const Matrix& s) { return std::get<1>(eval(labels, s.data())); }, s0, 1e-6);
    CHECK(max_rel_error(gs, fd_s, 1e-4) < 1e-6);
  }
}

TEST_CASE("tape covariance argument checks") {
  ad::Tape tape;
  auto a = tape.variable(Matrix::Zero(3, 2));
  auto one = tape.variable(1.0);
  Vector times = Vector::Zero(2);
  CHECK_THROWS_AS(matern_covariance(a, times, one, one, one, one, Smoothness::half), DimensionError);
  ad::Tape other;
  auto foreign = other.variable(1.0);
  CHECK_THROWS_AS(matern_covariance(a, Vector::Zero(3), foreign, one, one, one, Smoothness::half), ContractError);
}

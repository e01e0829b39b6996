#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "doctest.h"
#include "tgp/errors.hpp"
#include "tgp/velocity.hpp"

using namespace tgp;
using namespace tgp::flow;
using namespace tgp::velocity;

namespace {

FlowNetwork projected_net(std::uint64_t seed, const Architecture& arch = {2, 3, 8, Activation::tanh}) {
  FlowNetwork::RandomInit init;
  init.norm_product = 1.5;
  init.bias_scale = 0.5;
  init.output_bias_scale = 0.3;
  return spectral_project(FlowNetwork::random(arch, seed, init), 0.98);
}

// Collapses every point onto the line x1 = x2 at t = 1, so the Jacobian is singular there.
class CollapsingFlow final : public BackwardFlow {
 public:
  Vec2 forward(double t, const Vec2& x) const override {
    const double m = 0.5 * (x(0) + x(1));
    return (1.0 - t) * x + t * Vec2(m, m);
  }
  Mat2 jacobian(double t, const Vec2&) const override {
    Mat2 j;
    j << 1.0 - 0.5 * t, 0.5 * t, 0.5 * t, 1.0 - 0.5 * t;
    return j;
  }
  Vec2 time_derivative(double, const Vec2& x) const override {
    const double m = 0.5 * (x(0) + x(1));
    return Vec2(m, m) - x;
  }
  Vec2 inverse(double, const Vec2& a) const override { return a; }
};

}  // namespace

TEST_CASE("velocity_at on closed-form flows") {
  ConstantDriftFlow drift(Vec2(1.0, 2.0));
  RotationFlow rot(1.0, Vec2::Zero());
  IdentityFlow id;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double t = u(rng);
    const Vec2 x(4.0 * u(rng) - 2.0, 4.0 * u(rng) - 2.0);
    CHECK((velocity_at(drift, t, x) - Vec2(1.0, 2.0)).norm() < 1e-12);
    CHECK((velocity_at(rot, t, x) - Vec2(x(1), -x(0))).norm() < 1e-12);
    CHECK(velocity_at(id, t, x) == Vec2::Zero());
  }
  CHECK((velocity_at(rot, 0.3, Vec2(1.0, 0.0)) - Vec2(0.0, -1.0)).norm() < 1e-12);

  // A residual network carrying only a constant output bias is also a pure drift.
  FlowNetwork net = FlowNetwork::constant_drift({3, 3, 8, Activation::tanh}, Vec2(0.4, -0.7));
  CHECK((velocity_at(net, 0.6, Vec2(0.2, 0.9)) - Vec2(0.4, -0.7)).norm() < 1e-12);
}

TEST_CASE("zero networks have zero velocity everywhere") {
  FlowNetwork net = FlowNetwork::zeros({3, 3, 8, Activation::tanh});
  for (double t : {0.0, 0.5, 1.0}) {
    CHECK(velocity_at(net, t, Vec2(0.25, 0.75)) == Vec2::Zero());
  }
}

TEST_CASE("singular Jacobian is reported with its location") {
  CollapsingFlow flow;
  CHECK_NOTHROW(velocity_at(flow, 0.5, Vec2(0.1, 0.2)));
  try {
    velocity_at(flow, 1.0, Vec2(0.1, 0.2));
    FAIL("expected SingularJacobianError");
  } catch (const SingularJacobianError& e) {
    CHECK(e.t() == 1.0);
    CHECK(e.x() == Vec2(0.1, 0.2));
    CHECK(std::strstr(e.what(), "t=1") != nullptr);
  }
}

TEST_CASE("trajectory oracle") {
  ConstantDriftFlow drift(Vec2(1.0, 2.0));
  CHECK((velocity_fd_oracle(drift, 0.5, Vec2(0.3, 0.1), 1e-4) - Vec2(1.0, 2.0)).norm() < 1e-10);
  CHECK(velocity_fd_oracle(IdentityFlow{}, 0.5, Vec2(0.3, 0.1), 1e-4) == Vec2::Zero());
  CHECK_THROWS_AS(velocity_fd_oracle(drift, 0.0, Vec2(0.3, 0.1), 1e-4), ContractError);
  CHECK_THROWS_AS(velocity_fd_oracle(drift, 1.0, Vec2(0.3, 0.1), 1e-4), ContractError);
  CHECK_THROWS_AS(velocity_fd_oracle(drift, 0.5, Vec2(0.3, 0.1), 0.0), ContractError);
}

TEST_CASE("closed form agrees with the trajectory oracle on projected networks") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  double worst_rel = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    FlowNetwork net = projected_net(1000 + s);
    const double t = 0.01 + 0.98 * u(rng);
    const Vec2 x(u(rng), u(rng));
    const Vec2 v = velocity_at(net, t, x);
    const Vec2 o = velocity_fd_oracle(net, t, x, 1e-4);
    worst = std::max(worst, (v - o).norm() / (1.0 + v.norm()));
    worst_rel = std::max(worst_rel, (v - o).norm() / std::max(v.norm(), 1e-12));
  }
  MESSAGE("worst normalized gap " << worst << ", worst relative gap " << worst_rel);
  CHECK(worst < 1e-3);
  CHECK(worst_rel < 1e-4);
}

TEST_CASE("velocity_field ordering and pointwise equality") {
  FlowNetwork net = projected_net(5);
  const std::vector<double> times{0.0, 0.5, 1.0};
  const std::vector<Vec2> grid{Vec2(0.0, 0.0), Vec2(0.0, 1.0), Vec2(1.0, 0.0), Vec2(1.0, 1.0)};
  VelocityField f = velocity_field(net, times, grid, 2.5);
  REQUIRE(f.samples.size() == 12);
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const auto& s = f.samples[i * grid.size() + j];
      CHECK(s.t == times[i]);
      CHECK(s.x == grid[j]);
      CHECK(s.v == velocity_at(net, times[i], grid[j]));
      CHECK(std::isfinite(s.v(0)));
      CHECK(std::isfinite(s.v(1)));
    }
  }
  CHECK(f.unit_scale == 2.5);
  CHECK_THROWS_AS(velocity_field(net, {1.5}, grid), ContractError);

  RotationFlow rot(1.0, Vec2::Zero());
  const std::vector<Vec2> axis{Vec2(1, 0), Vec2(0, 1), Vec2(-1, 0), Vec2(0, -1)};
  VelocityField r = velocity_field(rot, {0.2}, axis);
  CHECK((r.samples[0].v - Vec2(0, -1)).norm() < 1e-12);
  CHECK((r.samples[1].v - Vec2(1, 0)).norm() < 1e-12);
  CHECK((r.samples[2].v - Vec2(0, 1)).norm() < 1e-12);
  CHECK((r.samples[3].v - Vec2(-1, 0)).norm() < 1e-12);
}

TEST_CASE("velocity file round trip") {
  FlowNetwork net = projected_net(9);
  VelocityField f = velocity_field(net, {0.25, 0.75}, {Vec2(0.1, 0.2), Vec2(0.3, 0.4)}, 3.0);
  std::stringstream buf;
  write_velocity(buf, f);
  const std::string textual = buf.str();
  CHECK(textual.rfind("t,x1,x2,v1,v2\n", 0) == 0);

  VelocityField back = read_velocity(buf, "mem");
  REQUIRE(back.samples.size() == f.samples.size());
  for (std::size_t i = 0; i < f.samples.size(); ++i) {
    CHECK(back.samples[i].t == f.samples[i].t);
    CHECK(back.samples[i].x == f.samples[i].x);
    // unit_scale is baked in on output
    CHECK(back.samples[i].v == Vec2(f.samples[i].v * 3.0));
  }

  std::istringstream bad_header("t,x,y\n");
  CHECK_THROWS_AS(read_velocity(bad_header, "mem"), FormatError);
  std::istringstream bad_cell("t,x1,x2,v1,v2\n0,0,0,1,2\n0,0,0,abc,2\n");
  try {
    read_velocity(bad_cell, "mem");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.line() == 3);
    CHECK(e.column() == 4);
  }
}

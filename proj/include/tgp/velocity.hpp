#pragma once

// Velocity of a backward flow: vel(psi)(t, x) = -[grad psi_t(x)]^-1 d/dt psi_t(x),
// plus a trajectory-differencing oracle that never touches the Jacobian.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tgp/errors.hpp"
#include "tgp/flow.hpp"
#include "tgp/linalg.hpp"

namespace tgp::velocity {

class SingularJacobianError : public SingularError {
 public:
  SingularJacobianError(double t, const Vec2& x, double det);
  double t() const { return t_; }
  const Vec2& x() const { return x_; }

 private:
  double t_;
  Vec2 x_;
};

struct VelocitySample {
  double t = 0.0;
  Vec2 x = Vec2::Zero();
  Vec2 v = Vec2::Zero();  // grid units per unit time
};

// Samples are time-major, then in the order of the spatial grid.
struct VelocityField {
  std::vector<VelocitySample> samples;
  // Multiplies v on output only; internal values stay in fitting units.
  double unit_scale = 1.0;
};

inline constexpr double kSingularDeterminant = 1e-12;

Vec2 velocity_at(const flow::BackwardFlow& flow, double t, const Vec2& x);

// (psi^-1_{t+h}(psi_t(x)) - psi^-1_{t-h}(psi_t(x))) / 2h
Vec2 velocity_fd_oracle(const flow::BackwardFlow& flow, double t, const Vec2& x, double h);

VelocityField velocity_field(const flow::BackwardFlow& flow, const std::vector<double>& times,
                             const std::vector<Vec2>& grid, double unit_scale = 1.0);

// Text table `t,x1,x2,v1,v2`, 17 significant digits, v multiplied by unit_scale.
void write_velocity(std::ostream& out, const VelocityField& field);
void write_velocity_file(const std::filesystem::path& path, const VelocityField& field);
// Reads back with unit_scale = 1.
VelocityField read_velocity(std::istream& in, const std::string& source);
VelocityField read_velocity_file(const std::filesystem::path& path);

}  // namespace tgp::velocity

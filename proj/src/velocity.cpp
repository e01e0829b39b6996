#include "tgp/velocity.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "tgp/textio.hpp"

namespace tgp::velocity {

SingularJacobianError::SingularJacobianError(double t, const Vec2& x, double det)
    : SingularError("singular flow Jacobian at t=" + text::format_double(t, 6) + " x=(" +
                    text::format_double(x(0), 6) + ", " + text::format_double(x(1), 6) +
                    "), det=" + text::format_double(det, 6)),
      t_(t),
      x_(x) {}

Vec2 velocity_at(const flow::BackwardFlow& flow, double t, const Vec2& x) {
  const Mat2 j = flow.jacobian(t, x);
  const Vec2 dt = flow.time_derivative(t, x);
  const double det = j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0);
  if (!(std::abs(det) >= kSingularDeterminant)) throw SingularJacobianError(t, x, det);
  // -J^-1 dt with J^-1 = adj(J) / det
  return Vec2(-(j(1, 1) * dt(0) - j(0, 1) * dt(1)) / det, -(-j(1, 0) * dt(0) + j(0, 0) * dt(1)) / det);
}

Vec2 velocity_fd_oracle(const flow::BackwardFlow& flow, double t, const Vec2& x, double h) {
  if (!(h > 0.0) || t - h < 0.0 || t + h > 1.0) {
    throw ContractError("velocity_fd_oracle: need h > 0 and [t-h, t+h] inside [0, 1]");
  }
  const Vec2 label = flow.forward(t, x);
  return (flow.inverse(t + h, label) - flow.inverse(t - h, label)) / (2.0 * h);
}

VelocityField velocity_field(const flow::BackwardFlow& flow, const std::vector<double>& times,
                             const std::vector<Vec2>& grid, double unit_scale) {
  VelocityField field;
  field.unit_scale = unit_scale;
  field.samples.reserve(times.size() * grid.size());
  for (double t : times) {
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("velocity_field: time " + text::format_double(t) + " outside [0, 1]");
    for (const Vec2& x : grid) field.samples.push_back(VelocitySample{t, x, velocity_at(flow, t, x)});
  }
  return field;
}

void write_velocity(std::ostream& out, const VelocityField& field) {
  using text::format_double;
  out << "t,x1,x2,v1,v2\n";
  for (const auto& s : field.samples) {
    const Vec2 v = s.v * field.unit_scale;
    out << format_double(s.t) << ',' << format_double(s.x(0)) << ',' << format_double(s.x(1)) << ','
        << format_double(v(0)) << ',' << format_double(v(1)) << '\n';
  }
}

void write_velocity_file(const std::filesystem::path& path, const VelocityField& field) {
  text::write_atomically(path, [&](std::ostream& out) { write_velocity(out, field); });
}

VelocityField read_velocity(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || text::trim(line) != "t,x1,x2,v1,v2") {
    throw FormatError(source, 1, 0, "expected header 't,x1,x2,v1,v2'");
  }
  VelocityField field;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto cells = text::split(line, ',');
    if (cells.size() != 5) throw FormatError(source, lineno, 0, "expected 5 fields, got " + std::to_string(cells.size()));
    double vals[5];
    for (std::size_t c = 0; c < 5; ++c) {
      auto v = text::parse_double(cells[c]);
      if (!v) throw FormatError(source, lineno, c + 1, "not a number: '" + std::string(text::trim(cells[c])) + "'");
      vals[c] = *v;
    }
    field.samples.push_back(VelocitySample{vals[0], Vec2(vals[1], vals[2]), Vec2(vals[3], vals[4])});
  }
  return field;
}

VelocityField read_velocity_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_velocity(in, path.string());
}

}  // namespace tgp::velocity

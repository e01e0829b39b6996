#include "tgp/scenes.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

#include "tgp/errors.hpp"

namespace tgp::scenes {
namespace {

double lattice_coord(int i, int n) { return n == 1 ? 0.5 : static_cast<double>(i) / (n - 1); }

struct Group {
  std::size_t begin;
  std::size_t end;
};

std::vector<Group> time_groups(const velocity::VelocityField& field) {
  std::vector<Group> groups;
  const auto& s = field.samples;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i == 0 || s[i].t != s[i - 1].t) {
      if (i > 0 && s[i].t < s[i - 1].t) {
        throw ContractError("velocity samples are not grouped by ascending time (sample " + std::to_string(i) + ")");
      }
      groups.push_back({i, i});
    }
    groups.back().end = i + 1;
  }
  return groups;
}

std::string describe(const velocity::VelocitySample& s) {
  return "(t=" + text::format_double(s.t) + ", x=(" + text::format_double(s.x(0)) + ", " +
         text::format_double(s.x(1)) + "))";
}

}  // namespace

std::string_view to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::identity:
      return "identity";
    case FlowKind::constant:
      return "constant";
    case FlowKind::rotation:
      return "rotation";
    case FlowKind::residual:
      return "residual";
  }
  return "?";
}

FlowKind parse_flow_kind(std::string_view name) {
  for (FlowKind k : {FlowKind::identity, FlowKind::constant, FlowKind::rotation, FlowKind::residual}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown flow kind '" + std::string(name) + "' (identity, constant, rotation, residual)");
}

std::size_t SceneSpec::point_count() const {
  return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * static_cast<std::size_t>(times);
}

void SceneSpec::validate() const {
  if (rows < 1 || cols < 1 || times < 1) throw ConfigError("scene: rows, cols and times must be >= 1");
  if (point_count() > max_points) {
    throw ConfigError("scene has " + std::to_string(point_count()) + " points, above the cap of " +
                      std::to_string(max_points));
  }
  params.validate();
  if (!drift.allFinite() || !std::isfinite(rate)) throw ConfigError("scene: drift and rate must be finite");
  if (flow == FlowKind::residual) {
    if (residual_arch.blocks < 1 || residual_arch.layers < 2 || residual_arch.width < 1) {
      throw ConfigError("scene: residual flow needs k >= 1, L >= 2, h >= 1");
    }
    if (!(residual_norm_product > 0.0 && residual_norm_product < 1.0)) {
      throw ConfigError("scene: norm_product must lie in (0, 1)");
    }
  }
}

SceneSpec SceneSpec::from_doc(text::KeyValueDoc& doc) {
  SceneSpec s;
  auto dbl = [&](const char* key, double& into) {
    if (auto v = doc.take_double(key)) into = *v;
  };
  auto integer = [&](const char* key, int& into) {
    if (auto v = doc.take_int(key)) into = static_cast<int>(*v);
  };
  auto seed = [&](const char* key, std::uint64_t& into) {
    if (auto v = doc.take_int(key)) {
      if (*v < 0) throw ConfigError(doc.source() + ": " + key + " must be >= 0");
      into = static_cast<std::uint64_t>(*v);
    }
  };
  if (auto v = doc.take_string("flow")) s.flow = parse_flow_kind(*v);
  dbl("w1", s.drift(0));
  dbl("w2", s.drift(1));
  dbl("rate", s.rate);
  integer("k", s.residual_arch.blocks);
  integer("L", s.residual_arch.layers);
  integer("h", s.residual_arch.width);
  if (auto v = doc.take_string("activation")) s.residual_arch.activation = flow::parse_activation(*v);
  seed("flow_seed", s.flow_seed);
  dbl("norm_product", s.residual_norm_product);
  integer("rows", s.rows);
  integer("cols", s.cols);
  integer("times", s.times);
  dbl("sigma2", s.params.sigma2);
  dbl("l0", s.params.l0);
  dbl("l1", s.params.l1);
  dbl("l2", s.params.l2);
  dbl("tau2", s.params.tau2);
  if (auto v = doc.take_double("nu")) s.params.nu = cov::smoothness_from(*v);
  seed("seed", s.seed);
  if (auto v = doc.take_int("max_points")) {
    if (*v < 1) throw ConfigError(doc.source() + ": max_points must be >= 1");
    s.max_points = static_cast<std::size_t>(*v);
  }
  doc.require_all_consumed();
  s.validate();
  return s;
}

SceneSpec SceneSpec::load(const std::filesystem::path& path) {
  auto doc = text::KeyValueDoc::load(path);
  return from_doc(doc);
}

std::vector<Vec2> unit_lattice(int rows, int cols) {
  std::vector<Vec2> grid;
  grid.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) grid.emplace_back(lattice_coord(r, rows), lattice_coord(c, cols));
  }
  return grid;
}

std::vector<double> uniform_times(int n) {
  std::vector<double> ts;
  for (int i = 0; i < n; ++i) ts.push_back(n == 1 ? 0.0 : static_cast<double>(i) / (n - 1));
  return ts;
}

std::unique_ptr<flow::BackwardFlow> make_flow(const SceneSpec& spec) {
  switch (spec.flow) {
    case FlowKind::identity:
      return std::make_unique<flow::IdentityFlow>();
    case FlowKind::constant:
      return std::make_unique<flow::ConstantDriftFlow>(spec.drift);
    case FlowKind::rotation:
      return std::make_unique<flow::RotationFlow>(spec.rate, kRotationCenter);
    case FlowKind::residual: {
      flow::FlowNetwork::RandomInit init;
      init.norm_product = spec.residual_norm_product;
      init.bias_scale = 0.5;
      init.output_bias_scale = 0.3;
      return std::make_unique<flow::FlowNetwork>(flow::FlowNetwork::random(spec.residual_arch, spec.flow_seed, init));
    }
  }
  throw ContractError("make_flow: unknown flow kind");
}

ObservationSet sample_scene(const SceneSpec& spec) {
  spec.validate();
  const auto flow = make_flow(spec);
  std::vector<cov::SpaceTimePoint> points;
  points.reserve(spec.point_count());
  const auto grid = unit_lattice(spec.rows, spec.cols);
  for (double t : uniform_times(spec.times)) {
    for (const Vec2& x : grid) points.push_back({t, x});
  }
  Matrix l;
  try {
    l = ad::cholesky_lower(cov::cov_matrix(points, spec.params, *flow));
  } catch (const NotPositiveDefiniteError& e) {
    throw SingularError(std::string("scene covariance: ") + e.what() + "; raise tau2");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  Vector z(l.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  Vector y = l.triangularView<Eigen::Lower>() * z;
  return make_observations(std::move(points), std::move(y));
}

Vec2 truth_velocity(const SceneSpec& spec, double t, const Vec2& x) {
  switch (spec.flow) {
    case FlowKind::identity:
      return Vec2::Zero();
    case FlowKind::constant:
      return spec.drift;
    case FlowKind::rotation: {
      const Vec2 d = x - kRotationCenter;
      return spec.rate * Vec2(d(1), -d(0));
    }
    case FlowKind::residual:
      return velocity::velocity_at(*make_flow(spec), t, x);
  }
  throw ContractError("truth_velocity: unknown flow kind");
}

velocity::VelocityField truth_field(const SceneSpec& spec) {
  spec.validate();
  velocity::VelocityField field;
  const auto grid = unit_lattice(spec.rows, spec.cols);
  if (spec.flow == FlowKind::residual) return velocity::velocity_field(*make_flow(spec), uniform_times(spec.times), grid);
  for (double t : uniform_times(spec.times)) {
    for (const Vec2& x : grid) field.samples.push_back({t, x, truth_velocity(spec, t, x)});
  }
  return field;
}

double rms(const velocity::VelocityField& field) {
  if (field.samples.empty()) throw ContractError("rms: empty field");
  const auto groups = time_groups(field);
  double total = 0.0;
  for (const auto& g : groups) {
    double sq = 0.0;
    for (std::size_t i = g.begin; i < g.end; ++i) sq += (field.unit_scale * field.samples[i].v).squaredNorm();
    total += std::sqrt(sq / static_cast<double>(g.end - g.begin));
  }
  return total / static_cast<double>(groups.size());
}

double rmse(const velocity::VelocityField& est, const velocity::VelocityField& truth) {
  if (est.samples.size() != truth.samples.size()) {
    throw ContractError("rmse: " + std::to_string(est.samples.size()) + " estimated samples vs " +
                        std::to_string(truth.samples.size()) + " truth samples");
  }
  velocity::VelocityField diff;
  diff.samples.reserve(est.samples.size());
  for (std::size_t i = 0; i < est.samples.size(); ++i) {
    const auto& a = est.samples[i];
    const auto& b = truth.samples[i];
    if (a.t != b.t || a.x != b.x) {
      throw ContractError("rmse: sample " + std::to_string(i + 1) + " differs: " + describe(a) + " vs " + describe(b));
    }
    diff.samples.push_back({a.t, a.x, est.unit_scale * a.v - truth.unit_scale * b.v});
  }
  return rms(diff);
}

void write_observations(std::ostream& out, const ObservationSet& data) {
  using text::format_double;
  out << "t,x1,x2,value\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data.points[i];
    out << format_double(p.t) << ',' << format_double(p.x(0)) << ',' << format_double(p.x(1)) << ','
        << format_double(data.values(static_cast<Eigen::Index>(i))) << '\n';
  }
}

void write_observations_file(const std::filesystem::path& path, const ObservationSet& data) {
  text::write_atomically(path, [&](std::ostream& out) { write_observations(out, data); });
}

ObservationSet read_observations(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "t,x1,x2,value") {
    throw FormatError(source, 1, 0, "expected header 't,x1,x2,value'");
  }
  std::vector<cov::SpaceTimePoint> points;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    if (cells.size() != 4) throw FormatError(source, lineno, 0, "expected 4 fields, got " + std::to_string(cells.size()));
    double v[4];
    for (std::size_t c = 0; c < 4; ++c) {
      auto parsed = text::parse_double(cells[c]);
      if (!parsed || !std::isfinite(*parsed)) {
        throw FormatError(source, lineno, c + 1, "not a finite number: '" + std::string(text::trim(cells[c])) + "'");
      }
      v[c] = *parsed;
    }
    if (!points.empty() && v[0] < points.back().t) {
      throw FormatError(source, lineno, 1, "time " + text::format_double(v[0]) + " goes backwards; rows must be grouped by ascending time");
    }
    points.push_back({v[0], Vec2(v[1], v[2])});
    values.push_back(v[3]);
  }
  if (points.empty()) throw FormatError(source, lineno, 0, "no observations");
  return make_observations(std::move(points), Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
}

ObservationSet read_observations_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_observations(in, path.string());
}

}  // namespace tgp::scenes

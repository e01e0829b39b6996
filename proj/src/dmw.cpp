#include "tgp/dmw.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "tgp/errors.hpp"

namespace tgp::dmw {
namespace {

std::string pixel_str(const Pixel& p) { return "(" + std::to_string(p(0)) + ", " + std::to_string(p(1)) + ")"; }

void require_inside(const ImageFrame& frame, const Pixel& at, int reach, const char* what) {
  if (at(0) - reach < 0 || at(1) - reach < 0 || at(0) + reach >= frame.rows() || at(1) + reach >= frame.cols()) {
    throw BoundaryError(std::string(what) + " around " + pixel_str(at) + " with reach " + std::to_string(reach) +
                        " leaves the " + std::to_string(frame.rows()) + "x" + std::to_string(frame.cols()) +
                        " frame");
  }
}

// Pairing lag in frame steps; delta must be a whole multiple of the spacing.
int lag_steps(const DmwConfig& config, double spacing) {
  if (!config.delta) return 1;
  const double ratio = *config.delta / spacing;
  const double m = std::round(ratio);
  if (m < 1.0 || std::abs(ratio - m) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError("dmw: delta " + text::format_double(*config.delta) + " is not a whole multiple of the frame spacing " +
                      text::format_double(spacing));
  }
  return static_cast<int>(m);
}

}  // namespace

void DmwConfig::validate() const {
  if (window_half < 1) throw ConfigError("dmw: window_half must be >= 1");
  if (search_radius < 1) throw ConfigError("dmw: search_radius must be >= 1");
  if (stride < 1) throw ConfigError("dmw: stride must be >= 1");
  if (variance_floor && !(*variance_floor >= 0.0)) throw ConfigError("dmw: variance_floor must be >= 0");
  if (delta && !(*delta > 0.0)) throw ConfigError("dmw: delta must be > 0");
  if (!(pixel_size > 0.0)) throw ConfigError("dmw: pixel_size must be > 0");
}

DmwConfig DmwConfig::from_doc(text::KeyValueDoc& doc) {
  DmwConfig c;
  if (auto v = doc.take_int("window_half")) c.window_half = static_cast<int>(*v);
  if (auto v = doc.take_int("search_radius")) c.search_radius = static_cast<int>(*v);
  if (auto v = doc.take_int("stride")) c.stride = static_cast<int>(*v);
  if (auto v = doc.take_double("delta")) c.delta = *v;
  if (auto v = doc.take_double("variance_floor")) c.variance_floor = *v;
  if (auto v = doc.take_bool("two_sided")) c.two_sided = *v;
  if (auto v = doc.take_double("pixel_size")) c.pixel_size = *v;
  doc.require_all_consumed();
  c.validate();
  return c;
}

DmwConfig DmwConfig::load(const std::filesystem::path& path) {
  auto doc = text::KeyValueDoc::load(path);
  return from_doc(doc);
}

double window_variance(const ImageFrame& frame, const Pixel& at, int half) {
  require_inside(frame, at, half, "window");
  const int side = 2 * half + 1;
  const auto block = frame.grid.block(at(0) - half, at(1) - half, side, side);
  const double mean = block.mean();
  return (block.array() - mean).square().mean();
}

double default_variance_floor(const std::vector<ImageFrame>& frames) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& f : frames) {
    lo = std::min(lo, f.grid.minCoeff());
    hi = std::max(hi, f.grid.maxCoeff());
  }
  const double floor = hi >= lo ? 1e-4 * (hi - lo) * (hi - lo) : 0.0;
  return std::max(floor, std::numeric_limits<double>::min());
}

bool trackability(const ImageFrame& frame, const Pixel& at, const DmwConfig& config, double variance_floor) {
  return window_variance(frame, at, config.window_half) >= variance_floor;
}

std::optional<SsdResult> ssd_search(const ImageFrame& later, const ImageFrame& earlier, const Pixel& at,
                                    const DmwConfig& config, double variance_floor) {
  const int w = config.window_half;
  const int r = config.search_radius;
  if (later.rows() != earlier.rows() || later.cols() != earlier.cols()) {
    throw DimensionError("ssd_search: frames differ in size");
  }
  require_inside(later, at, w, "target window");
  require_inside(earlier, at, w + r, "search region");
  if (!trackability(later, at, config, variance_floor)) return std::nullopt;

  const int side = 2 * w + 1;
  const auto target = later.grid.block(at(0) - w, at(1) - w, side, side);
  SsdResult res;
  res.surface.resize(2 * r + 1, 2 * r + 1);
  bool have = false;
  int best_norm = 0;
  for (int d1 = -r; d1 <= r; ++d1) {
    for (int d2 = -r; d2 <= r; ++d2) {
      const auto source = earlier.grid.block(at(0) - d1 - w, at(1) - d2 - w, side, side);
      const double ssd = (target - source).squaredNorm();
      res.surface(d1 + r, d2 + r) = ssd;
      const int norm = d1 * d1 + d2 * d2;
      // Scanning is lexicographic, so a strict comparison on the norm keeps the
      // lexicographically first among equal-norm ties.
      if (!have || ssd < res.min_ssd || (ssd == res.min_ssd && norm < best_norm)) {
        have = true;
        res.min_ssd = ssd;
        best_norm = norm;
        res.displacement = Pixel(d1, d2);
      }
    }
  }
  return res;
}

double parabolic_offset(double minus, double centre, double plus) {
  const double denom = 2.0 * (minus - 2.0 * centre + plus);
  if (denom == 0.0) return 0.0;
  return std::clamp((minus - plus) / denom, -0.5, 0.5);
}

Subpixel subpixel_refine(const Matrix& surface, const Pixel& argmin) {
  if (surface.rows() != surface.cols() || surface.rows() % 2 == 0 || surface.rows() < 3) {
    throw DimensionError("subpixel_refine: surface must be square with odd side >= 3");
  }
  const int r = static_cast<int>(surface.rows() - 1) / 2;
  const int i = argmin(0) + r;
  const int j = argmin(1) + r;
  if (i < 0 || j < 0 || i > 2 * r || j > 2 * r) throw ContractError("subpixel_refine: argmin outside the surface");
  Subpixel out;
  out.displacement = argmin.cast<double>();
  if (i == 0 || j == 0 || i == 2 * r || j == 2 * r) {
    out.saturated = true;
    return out;
  }
  out.displacement(0) += parabolic_offset(surface(i - 1, j), surface(i, j), surface(i + 1, j));
  out.displacement(1) += parabolic_offset(surface(i, j - 1), surface(i, j), surface(i, j + 1));
  return out;
}

std::optional<DmwVector> dmw_vector(const ImageFrame& earlier, const ImageFrame& current, const ImageFrame* later,
                                    const Pixel& at, double delta, const DmwConfig& config, double variance_floor) {
  if (!(delta > 0.0)) throw ContractError("dmw_vector: delta must be > 0");
  if (config.two_sided && later == nullptr) throw ContractError("dmw_vector: two-sided mode needs a later frame");

  struct Side {
    Vec2 v;
    bool saturated;
  };
  auto side = [&](const ImageFrame& to, const ImageFrame& from) -> std::optional<Side> {
    auto found = ssd_search(to, from, at, config, variance_floor);
    if (!found) return std::nullopt;
    const Subpixel sp = subpixel_refine(found->surface, found->displacement);
    return Side{sp.displacement * current.pixel_size / delta, sp.saturated};
  };

  const auto back = side(current, earlier);
  const auto fwd = config.two_sided ? side(*later, current) : std::nullopt;
  if (!back && !fwd) return std::nullopt;
  DmwVector out;
  if (back && fwd) {
    out.v = 0.5 * (back->v + fwd->v);
    out.saturated = back->saturated || fwd->saturated;
  } else {
    const Side& s = back ? *back : *fwd;
    out.v = s.v;
    out.saturated = s.saturated;
    out.one_side_only = config.two_sided;
  }
  return out;
}

DmwField dmw_field(const std::vector<ImageFrame>& frames, const DmwConfig& config) {
  config.validate();
  const std::size_t needed = config.two_sided ? 3 : 2;
  if (frames.size() < needed) {
    throw ConfigError("dmw: " + std::to_string(frames.size()) + " frames given, " + std::to_string(needed) +
                      " needed" + (config.two_sided ? " for two-sided matching" : ""));
  }
  for (const auto& f : frames) {
    if (f.rows() != frames[0].rows() || f.cols() != frames[0].cols()) throw DimensionError("dmw: frames differ in size");
    if (!f.grid.allFinite()) throw DomainError("dmw: non-finite pixel at t=" + text::format_double(f.timestamp));
  }
  const double spacing = frames[1].timestamp - frames[0].timestamp;
  if (!(spacing > 0.0)) throw ConfigError("dmw: frame times must increase");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const double gap = frames[i].timestamp - frames[i - 1].timestamp;
    if (std::abs(gap - spacing) > 1e-9 * spacing) throw ConfigError("dmw: frames are not evenly spaced in time");
  }
  const int m = lag_steps(config, spacing);
  const double delta = config.delta.value_or(spacing);
  const double floor = config.variance_floor.value_or(default_variance_floor(frames));

  const auto n = static_cast<int>(frames.size());
  const int first = m;
  const int last = config.two_sided ? n - 1 - m : n - 1;
  if (first > last) throw ConfigError("dmw: too few frames for a lag of " + std::to_string(m) + " steps");

  DmwField out;
  const int margin = config.window_half + config.search_radius;
  const auto rows = static_cast<int>(frames[0].rows());
  const auto cols = static_cast<int>(frames[0].cols());
  for (int i = first; i <= last; ++i) {
    const ImageFrame* later = config.two_sided ? &frames[static_cast<std::size_t>(i + m)] : nullptr;
    for (int r = margin; r < rows - margin; ++r) {
      if (r % config.stride != 0) continue;
      for (int c = margin; c < cols - margin; ++c) {
        if (c % config.stride != 0) continue;
        ++out.sites;
        const auto v = dmw_vector(frames[static_cast<std::size_t>(i - m)], frames[static_cast<std::size_t>(i)], later,
                                  Pixel(r, c), delta, config, floor);
        if (!v) {
          ++out.skipped;
          continue;
        }
        if (v->one_side_only) ++out.one_sided;
        if (v->saturated) ++out.saturated;
        out.field.samples.push_back({frames[static_cast<std::size_t>(i)].timestamp, Vec2(r, c), v->v});
      }
    }
  }
  return out;
}

std::vector<ImageFrame> read_frames(std::istream& in, const std::string& source, double pixel_size) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "t,row,col,value") {
    throw FormatError(source, 1, 0, "expected header 't,row,col,value'");
  }
  struct Cell {
    long long row, col;
    double value;
    std::size_t line;
  };
  std::vector<std::pair<double, std::vector<Cell>>> groups;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    if (cells.size() != 4) throw FormatError(source, lineno, 0, "expected 4 fields, got " + std::to_string(cells.size()));
    auto t = text::parse_double(cells[0]);
    if (!t || !std::isfinite(*t)) throw FormatError(source, lineno, 1, "bad time");
    auto row = text::parse_int(cells[1]);
    if (!row || *row < 0) throw FormatError(source, lineno, 2, "row must be an integer >= 0");
    auto col = text::parse_int(cells[2]);
    if (!col || *col < 0) throw FormatError(source, lineno, 3, "col must be an integer >= 0");
    auto value = text::parse_double(cells[3]);
    if (!value || !std::isfinite(*value)) throw FormatError(source, lineno, 4, "bad pixel value");
    if (groups.empty() || *t != groups.back().first) {
      if (!groups.empty() && *t < groups.back().first) throw FormatError(source, lineno, 1, "frame times must ascend");
      groups.push_back({*t, {}});
    }
    groups.back().second.push_back({*row, *col, *value, lineno});
  }
  if (groups.empty()) throw FormatError(source, lineno, 0, "no frames");

  std::vector<ImageFrame> frames;
  long long rows = -1, cols = -1;
  for (const auto& [t, cells] : groups) {
    long long fr = 0, fc = 0;
    for (const auto& c : cells) {
      fr = std::max(fr, c.row + 1);
      fc = std::max(fc, c.col + 1);
    }
    if (rows < 0) {
      rows = fr;
      cols = fc;
    }
    if (fr != rows || fc != cols) {
      throw FormatError(source, cells.front().line, 0, "frame at t=" + text::format_double(t) + " is " +
                                                           std::to_string(fr) + "x" + std::to_string(fc) + ", expected " +
                                                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    ImageFrame f;
    f.timestamp = t;
    f.pixel_size = pixel_size;
    f.grid = Matrix::Constant(rows, cols, std::numeric_limits<double>::quiet_NaN());
    for (const auto& c : cells) {
      double& slot = f.grid(c.row, c.col);
      if (!std::isnan(slot)) throw FormatError(source, c.line, 0, "pixel " + std::to_string(c.row) + "," + std::to_string(c.col) + " repeated");
      slot = c.value;
    }
    if (static_cast<long long>(cells.size()) != rows * cols) {
      throw FormatError(source, cells.back().line, 0, "frame at t=" + text::format_double(t) + " is missing pixels");
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<ImageFrame> read_frames_file(const std::filesystem::path& path, double pixel_size) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_frames(in, path.string(), pixel_size);
}

void write_frames(std::ostream& out, const std::vector<ImageFrame>& frames) {
  out << "t,row,col,value\n";
  for (const auto& f : frames) {
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      for (Eigen::Index c = 0; c < f.cols(); ++c) {
        out << text::format_double(f.timestamp) << ',' << r << ',' << c << ',' << text::format_double(f.grid(r, c)) << '\n';
      }
    }
  }
}

}  // namespace tgp::dmw

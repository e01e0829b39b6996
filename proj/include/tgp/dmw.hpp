#pragma once

// Feature-tracking baseline: exhaustive sum-of-squared-differences block
// matching between frames, with a trackability screen, parabolic sub-pixel
// refinement and averaging of the backward and forward estimates.
//
// Positions and displacements are (row, col) in pixels. A displacement d at a
// site means the pattern around it moved by +d from the earlier frame to the
// later one: later(y) ~ earlier(y - d).

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tgp/linalg.hpp"
#include "tgp/textio.hpp"
#include "tgp/velocity.hpp"

namespace tgp::dmw {

struct ImageFrame {
  Matrix grid;  // rows x cols
  double pixel_size = 1.0;
  double timestamp = 0.0;

  Eigen::Index rows() const { return grid.rows(); }
  Eigen::Index cols() const { return grid.cols(); }
};

struct DmwConfig {
  int window_half = 7;    // 15 x 15 target window
  int search_radius = 10;
  // Lag between paired frames, a whole multiple of the frame spacing. Unset: one spacing.
  std::optional<double> delta;
  // Unset: default_variance_floor(frames).
  std::optional<double> variance_floor;
  bool two_sided = true;
  int stride = 1;
  double pixel_size = 1.0;

  void validate() const;
  // Keys: window_half, search_radius, delta, variance_floor, two_sided, stride, pixel_size.
  static DmwConfig from_doc(text::KeyValueDoc& doc);
  static DmwConfig load(const std::filesystem::path& path);
};

using Pixel = Eigen::Vector2i;

// Population variance of the (2 half + 1)^2 window centred at `at`.
double window_variance(const ImageFrame& frame, const Pixel& at, int half);
// Floor used when the config leaves it unset: 1e-4 * range^2 over the frames,
// but never zero, so flat windows stay untrackable.
double default_variance_floor(const std::vector<ImageFrame>& frames);

// Window variance >= floor. BoundaryError when the window leaves the frame.
bool trackability(const ImageFrame& frame, const Pixel& at, const DmwConfig& config, double variance_floor);

struct SsdResult {
  Pixel displacement = Pixel::Zero();
  double min_ssd = 0.0;
  // (2R + 1) x (2R + 1); entry (d1 + R, d2 + R) is the SSD for displacement (d1, d2).
  Matrix surface;
};

// Exhaustive search over |d1|, |d2| <= search_radius. Ties go to the smallest
// |d|, then lexicographic. nullopt when the later window is untrackable;
// BoundaryError when a window or shifted window leaves a frame.
std::optional<SsdResult> ssd_search(const ImageFrame& later, const ImageFrame& earlier, const Pixel& at,
                                    const DmwConfig& config, double variance_floor);

// Vertex of the parabola through (-1, minus), (0, centre), (1, plus), clamped
// to [-0.5, 0.5]; 0 when the three values are collinear.
double parabolic_offset(double minus, double centre, double plus);

struct Subpixel {
  Vec2 displacement = Vec2::Zero();
  bool saturated = false;  // argmin on the edge of the search grid
};
Subpixel subpixel_refine(const Matrix& surface, const Pixel& argmin);

struct DmwVector {
  Vec2 v = Vec2::Zero();  // pixel_size units per time unit, (row, col) axes
  bool one_side_only = false;
  bool saturated = false;
};

// Two-sided: average of the (earlier, current) and (current, later) estimates,
// falling back to whichever side is trackable. One-sided: (earlier, current)
// only and `later` may be null. nullopt when nothing is trackable.
std::optional<DmwVector> dmw_vector(const ImageFrame& earlier, const ImageFrame& current, const ImageFrame* later,
                                    const Pixel& at, double delta, const DmwConfig& config, double variance_floor);

struct DmwField {
  velocity::VelocityField field;  // x = (row, col), t = timestamp of the centre frame
  std::size_t sites = 0;
  std::size_t skipped = 0;
  std::size_t one_sided = 0;
  std::size_t saturated = 0;
};

// Frames must share dimensions and be evenly spaced in time.
DmwField dmw_field(const std::vector<ImageFrame>& frames, const DmwConfig& config);

// Text table `t,row,col,value`: frames by ascending t, every pixel of a frame
// present exactly once.
std::vector<ImageFrame> read_frames(std::istream& in, const std::string& source, double pixel_size = 1.0);
std::vector<ImageFrame> read_frames_file(const std::filesystem::path& path, double pixel_size = 1.0);
void write_frames(std::ostream& out, const std::vector<ImageFrame>& frames);

}  // namespace tgp::dmw

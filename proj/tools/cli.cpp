#include "tgp/cli.hpp"

#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tgp/dmw.hpp"
#include "tgp/errors.hpp"
#include "tgp/estimation.hpp"
#include "tgp/scenes.hpp"
#include "tgp/textio.hpp"
#include "tgp/velocity.hpp"

namespace tgp::cli {
namespace {

std::vector<double> parse_times(const std::string& arg) {
  std::vector<double> times;
  for (auto cell : text::split(arg, ',')) {
    auto v = text::parse_double(cell);
    if (!v) throw ConfigError("--times: not a number: '" + std::string(text::trim(cell)) + "'");
    times.push_back(*v);
  }
  return times;
}

std::pair<int, int> parse_grid(const std::string& arg) {
  const auto parts = text::split(arg, 'x');
  std::optional<long long> r, c;
  if (parts.size() == 2) {
    r = text::parse_int(parts[0]);
    c = text::parse_int(parts[1]);
  }
  if (!r || !c || *r < 1 || *c < 1) throw ConfigError("--grid: expected ROWSxCOLS, got '" + arg + "'");
  return {static_cast<int>(*r), static_cast<int>(*c)};
}

std::string fmt6(double v) { return text::format_double(v, 6); }

struct Args {
  std::string spec, out, data, config, checkpoint, times, grid, frames, est, truth;
  double unit_scale = 1.0;
};

void cmd_simulate(const Args& a, std::ostream& out) {
  const scenes::SceneSpec spec = scenes::SceneSpec::load(a.spec);
  const ObservationSet data = scenes::sample_scene(spec);
  const velocity::VelocityField truth = scenes::truth_field(spec);
  const auto truth_path = truth_path_for(a.out);
  scenes::write_observations_file(a.out, data);
  velocity::write_velocity_file(truth_path, truth);
  out << "wrote " << data.size() << " observations (" << spec.times << " times x " << spec.rows << "x" << spec.cols
      << ") to " << a.out << " and truth to " << truth_path.string() << "\n";
}

void cmd_fit(const Args& a, std::ostream& out, std::ostream& err) {
  const ObservationSet data = scenes::read_observations_file(a.data);
  const est::FitConfig config = a.config.empty() ? est::FitConfig{} : est::FitConfig::load(a.config);
  est::FitHooks hooks;
  hooks.log = [&err](const std::string& msg) { err << "tgp-cli: " << msg << "\n"; };
  const est::FitResult fit = est::fit(data, config, hooks);
  est::write_fit_file(a.out, fit);
  // Scales in data units: time scales by t_scale, space by x_scale.
  const auto& p = fit.params;
  out << "sigma2 " << fmt6(p.sigma2) << "\n";
  out << "l0 " << fmt6(p.l0 * fit.norm.t_scale) << "\n";
  out << "l1 " << fmt6(p.l1 * fit.norm.x_scale) << "\n";
  out << "l2 " << fmt6(p.l2 * fit.norm.x_scale) << "\n";
  out << "tau2 " << fmt6(p.tau2) << "\n";
  out << "iterations " << fit.nll_trace.size() << "\n";
  out << "final_objective " << fmt6(fit.nll_trace.back()) << "\n";
  out << "nugget_retries " << fit.nugget_retries << "\n";
  out << "wallclock_s " << text::format_double(fit.wallclock, 4) << "\n";
}

void cmd_velocity(const Args& a, std::ostream& out) {
  const est::FitResult fit = est::read_fit_file(a.checkpoint);
  const std::vector<double> times = parse_times(a.times);
  const auto [rows, cols] = parse_grid(a.grid);
  if (!(a.unit_scale > 0.0)) throw ConfigError("--unit-scale must be > 0");
  std::vector<Vec2> grid;
  for (const Vec2& u : scenes::unit_lattice(rows, cols)) grid.push_back(fit.norm.space_to_data(u));
  const velocity::VelocityField field = est::fitted_velocity(fit, times, grid, a.unit_scale);
  velocity::write_velocity_file(a.out, field);
  out << "wrote " << field.samples.size() << " velocity samples to " << a.out << "\n";
}

void cmd_dmw(const Args& a, std::ostream& out) {
  const dmw::DmwConfig config = dmw::DmwConfig::load(a.config);
  const auto frames = dmw::read_frames_file(a.frames, config.pixel_size);
  const dmw::DmwField result = dmw::dmw_field(frames, config);
  velocity::write_velocity_file(a.out, result.field);
  out << "sites " << result.sites << "\n";
  out << "emitted " << result.field.samples.size() << "\n";
  out << "skipped " << result.skipped << "\n";
  out << "one_sided " << result.one_sided << "\n";
  out << "saturated " << result.saturated << "\n";
}

void cmd_metrics(const Args& a, std::ostream& out) {
  const auto est_field = velocity::read_velocity_file(a.est);
  const auto truth_field = velocity::read_velocity_file(a.truth);
  const double err = scenes::rmse(est_field, truth_field);
  out << "rms_truth " << fmt6(scenes::rms(truth_field)) << "\n";
  out << "rms_est " << fmt6(scenes::rms(est_field)) << "\n";
  out << "rmse " << fmt6(err) << "\n";
}

}  // namespace

std::filesystem::path truth_path_for(const std::filesystem::path& out) {
  std::filesystem::path p = out;
  const auto ext = out.extension().string();
  p.replace_filename(out.stem().string() + ".truth" + ext);
  return p;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transport Gaussian process velocity estimation", "tgp-cli"};
  app.require_subcommand(1);
  Args a;

  auto* sim = app.add_subcommand("simulate", "Sample a synthetic scene and its true velocity");
  sim->add_option("--spec", a.spec, "Scene spec file")->required();
  sim->add_option("--out", a.out, "Observation file to write")->required();

  auto* fit = app.add_subcommand("fit", "Fit a model to observations");
  fit->add_option("--data", a.data, "Observation file")->required();
  fit->add_option("--config", a.config, "Fit config file");
  fit->add_option("--out", a.out, "Checkpoint to write")->required();

  auto* vel = app.add_subcommand("velocity", "Export the velocity field of a fitted model");
  vel->add_option("--checkpoint", a.checkpoint, "Checkpoint from fit")->required();
  vel->add_option("--times", a.times, "Comma-separated times")->required();
  vel->add_option("--grid", a.grid, "Lattice as ROWSxCOLS")->required();
  vel->add_option("--out", a.out, "Velocity file to write")->required();
  vel->add_option("--unit-scale", a.unit_scale, "Multiplier applied to written velocities");

  auto* dm = app.add_subcommand("dmw", "Block-matching velocities from an image sequence");
  dm->add_option("--frames", a.frames, "Frame table t,row,col,value")->required();
  dm->add_option("--config", a.config, "Matching config file")->required();
  dm->add_option("--out", a.out, "Velocity file to write")->required();

  auto* met = app.add_subcommand("metrics", "RMS and RMSE of an estimate against truth");
  met->add_option("--est", a.est, "Estimated velocity file")->required();
  met->add_option("--truth", a.truth, "True velocity file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) cmd_simulate(a, out);
    if (*fit) cmd_fit(a, out, err);
    if (*vel) cmd_velocity(a, out);
    if (*dm) cmd_dmw(a, out);
    if (*met) cmd_metrics(a, out);
  } catch (const NotPositiveDefiniteError& e) {
    err << "tgp-cli: numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const SingularError& e) {
    err << "tgp-cli: numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConvergenceError& e) {
    err << "tgp-cli: numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "tgp-cli: error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace tgp::cli

// hsfuse: simulate, fuse, classify, report and sweep from the command line.
//
// Settings come from built-in defaults, then --config (key = value text or a
// metadata.json written by an earlier run), then flags. Errors print one line
// "hsfuse: <kind> error: <message>" and exit with
//   2 parameter, 3 dimension, 4 I/O, 5 solver, 6 precondition, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "hsfuse/config.hpp"
#include "hsfuse/io.hpp"
#include "hsfuse/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hsfuse;

namespace {

int exit_code(ErrorKind kind)
{
  switch (kind) {
    case ErrorKind::parameter: return 2;
    case ErrorKind::dimension: return 3;
    case ErrorKind::io: return 4;
    case ErrorKind::solver: return 5;
    case ErrorKind::precondition: return 6;
  }
  return 1;
}

std::string one_line(std::string s)
{
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

// Flag values are kept as text and applied through the config keys, so flags
// and config files share one parser.
struct Settings {
  std::string config_path;
  std::vector<std::pair<CLI::Option*, std::string>> flags;  // option, config key
  std::map<std::string, std::string> values;
  std::vector<std::string> assignments;  // --set key=value

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help)
  {
    flags.emplace_back(app->add_option(flag, values[key], help), key);
  }

  RunConfig resolve() const
  {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& a : assignments) {
      const auto eq = a.find('=');
      if (eq == std::string::npos) throw ParameterError("--set expects key=value, got '" + a + "'");
      set_config_value(c, detail::trim(a.substr(0, eq)), a.substr(eq + 1));
    }
    for (const auto& [opt, key] : flags)
      if (opt->count() > 0) set_config_value(c, key, values.at(key));
    c.validate();
    return c;
  }
};

void add_settings(CLI::App* app, Settings& s)
{
  app->add_option("--config", s.config_path, "config file (key = value) or an earlier metadata.json");
  app->add_option("--set", s.assignments, "override any config key, as key=value");
  s.add(app, "--seed", "seed", "scene seed; trial t uses seed + t for noise and training pixels");
  s.add(app, "--d", "d", "spatial decimation factor");
  s.add(app, "--ne", "ne", "number of fused features N_e");
  s.add(app, "--lambda", "lambda", "weight of the profile data term");
  s.add(app, "--lambda-tv", "lambda_tv", "total variation weight");
  s.add(app, "--radii", "radii", "profile radii, comma separated, 'default' or empty");
  s.add(app, "--snr-h", "snr_h", "HS noise level in dB, or inf");
  s.add(app, "--snr-m", "snr_m", "MS noise level in dB, or inf");
  s.add(app, "--per-class", "per_class", "training pixels per class");
  s.add(app, "--trials", "trials", "number of trials");
  s.add(app, "--jobs", "jobs", "worker threads");
}

void make_dir(const std::string& dir)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir + "'");
}

std::string in_dir(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

Json metadata(const std::string& command, const RunConfig& c)
{
  return Json{{"tool", "hsfuse"}, {"command", command}, {"config", to_json(c)}};
}

Json shape_json(const SpectralCube& c)
{
  return Json{{"width", c.width()}, {"height", c.height()}, {"bands", c.bands()}};
}

Json stat_json(const MetricStat& s) { return Json{{"mean", s.mean}, {"std", s.stddev}}; }

SimulationSettings simulation_settings(const RunConfig& c)
{
  SimulationSettings s = c.experiment.sim;
  if (!c.response_file.empty()) s.response = load_spectral_response(c.response_file);
  return s;
}

// ---- simulate -----------------------------------------------------------------------

void cmd_simulate(const RunConfig& c, const std::string& out)
{
  const SimulationSettings sim = simulation_settings(c);
  const SimulatedPair pair = simulate(sim, c.seed);
  make_dir(out);
  write_cube(in_dir(out, "reference.cube"), pair.reference);
  write_cube(in_dir(out, "y_h.cube"), pair.y_h);
  write_cube(in_dir(out, "y_m.cube"), pair.y_m);
  write_labels(in_dir(out, "truth.cube"), pair.truth);
  Json meta = metadata("simulate", c);
  meta["reference"] = shape_json(pair.reference);
  meta["y_h"] = shape_json(pair.y_h);
  meta["y_m"] = shape_json(pair.y_m);
  meta["blur_support"] = pair.model.kernel.support();
  meta["realized_snr_h"] = detail::format_double(pair.realized_snr_h);
  meta["realized_snr_m"] = detail::format_double(pair.realized_snr_m);
  write_json(in_dir(out, "metadata.json"), meta);
  std::printf("simulated %dx%dx%d reference, %dx%dx%d HS, %dx%dx%d MS into %s\n", pair.reference.width(),
              pair.reference.height(), pair.reference.bands(), pair.y_h.width(), pair.y_h.height(),
              pair.y_h.bands(), pair.y_m.width(), pair.y_m.height(), pair.y_m.bands(), out.c_str());
}

// ---- fuse ---------------------------------------------------------------------------

void cmd_fuse(const RunConfig& c, const std::string& y_h_path, const std::string& y_m_path,
              const std::string& out, std::string trace_path)
{
  const SpectralCube y_h = read_cube(y_h_path);
  const SpectralCube y_m = read_cube(y_m_path);
  const GridShape fine = y_m.shape();
  const std::vector<int> radii = effective_radii(c.experiment, fine);
  const SpectralCube mp = profile_cube(y_m, radii);

  make_dir(out);
  if (trace_path.empty()) trace_path = in_dir(out, "trace.jsonl");
  TraceWriter trace(trace_path);
  const FusionResult r = fuse_pair(y_h, mp, simulation_blur(c.experiment.sim), Decimation(c.experiment.sim.d),
                                   c.experiment.fusion,
                                   [&](const AoRecord& rec) { trace.write(to_json(rec)); });

  write_cube(in_dir(out, "features.cube"), fused_features(r, fine));
  write_matrix(in_dir(out, "Q.cube"), r.factors.Q);
  write_matrix(in_dir(out, "Q_mp.cube"), r.factors.Q_mp);
  Json meta = metadata("fuse", c);
  meta["radii"] = radii;
  meta["profile_features"] = mp.bands();
  meta["ao_iterations"] = static_cast<int>(r.records.size());
  meta["converged"] = r.converged;
  meta["degenerate_procrustes"] = r.degenerate_procrustes;
  meta["final_objective"] = r.objective_trace.back();
  write_json(in_dir(out, "metadata.json"), meta);
  std::printf("fused %d features after %zu AO iterations (%s), J = %.6g\n", c.experiment.fusion.ne,
              r.records.size(), r.converged ? "converged" : "iteration limit", r.objective_trace.back());
}

// ---- classify -----------------------------------------------------------------------

void print_summary(const MetricsReport& r)
{
  std::printf("OA %.2f +- %.2f  AA %.2f +- %.2f  kappa %.4f +- %.4f  (%d trials)\n",
              100.0 * r.overall_accuracy.mean, 100.0 * r.overall_accuracy.stddev,
              100.0 * r.average_accuracy.mean, 100.0 * r.average_accuracy.stddev, r.kappa.mean,
              r.kappa.stddev, r.n_trials());
}

// The features are fixed here, so trials redraw only the training pixels.
void cmd_classify(const RunConfig& c, const std::string& features_path, const std::string& truth_path,
                  const std::string& out)
{
  const SpectralCube features = read_cube(features_path);
  const LabelMap truth = read_labels(truth_path);
  if (features.shape() != truth.shape)
    throw DimensionError("features grid " + to_string(features.shape()) + " differs from truth grid " +
                         to_string(truth.shape));
  LabelMap first;
  const MetricsReport report = run_trials(
      c.trials, c.seed,
      [&](int t, std::uint64_t seed) {
        return classify_once(features, truth, c.experiment.per_class, seed, c.experiment.classifier,
                             t == 0 ? &first : nullptr);
      },
      c.jobs);
  make_dir(out);
  write_report(in_dir(out, "report.txt"), report);
  write_class_map_png(in_dir(out, "classmap.png"), first);
  Json meta = metadata("classify", c);
  meta["overall_accuracy"] = stat_json(report.overall_accuracy);
  meta["average_accuracy"] = stat_json(report.average_accuracy);
  meta["kappa"] = stat_json(report.kappa);
  write_json(in_dir(out, "metadata.json"), meta);
  print_summary(report);
}

// ---- report -------------------------------------------------------------------------

void cmd_report(const std::string& path, bool as_json)
{
  const MetricsReport r = read_report(path);
  if (as_json) {
    Json j{{"trials", r.n_trials()},
           {"classes", r.n_classes()},
           {"overall_accuracy", stat_json(r.overall_accuracy)},
           {"average_accuracy", stat_json(r.average_accuracy)},
           {"kappa", stat_json(r.kappa)}};
    Json per_class = Json::array();
    for (const auto& s : r.per_class_accuracy) per_class.push_back(stat_json(s));
    j["per_class_accuracy"] = per_class;
    std::cout << j.dump(2) << '\n';
    return;
  }
  print_summary(r);
  for (int k = 0; k < r.n_classes(); ++k)
    std::printf("  class %2d  %.2f +- %.2f\n", k + 1, 100.0 * r.per_class_accuracy[k].mean,
                100.0 * r.per_class_accuracy[k].stddev);
}

// ---- sweep --------------------------------------------------------------------------

std::string sweep_table(const std::vector<int>& ne_grid, const std::vector<double>& tv_grid,
                        const std::vector<SweepCell>& cells, const std::vector<bool>& done)
{
  std::string out = "# mean overall accuracy; rows N_e, columns lambda_tv; nan = not finished\n";
  out += "ne";
  for (double tv : tv_grid) out += "\t" + detail::format_double(tv);
  out += "\n";
  const std::size_t cols = tv_grid.size();
  for (std::size_t i = 0; i < ne_grid.size(); ++i) {
    out += std::to_string(ne_grid[i]);
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t k = i * cols + j;
      out += "\t" + (done[k] ? detail::format_double(cells[k].report.overall_accuracy.mean) : std::string("nan"));
    }
    out += "\n";
  }
  return out;
}

std::vector<double> parse_real_list(const std::string& what, const std::string& text)
{
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) throw ParameterError(what + " has an empty item");
    try {
      out.push_back(detail::parse_double(item, what));
    } catch (const IoError&) {
      throw ParameterError(what + " expects numbers, got '" + item + "'");
    }
  }
  return out;
}

void cmd_sweep(const RunConfig& c, const std::string& ne_text, const std::string& tv_text,
               const std::string& out, const std::string& trace_path)
{
  const std::vector<int> ne_grid = detail::config_int_list("ne grid", ne_text);
  const std::vector<double> tv_grid = parse_real_list("lambda_tv grid", tv_text);
  if (ne_grid.empty() || tv_grid.empty()) throw ParameterError("sweep grid is empty");
  const Scene scene = generate_scene(c.experiment.sim.scene);
  ExperimentSettings s = c.experiment;
  s.sim = simulation_settings(c);

  const std::size_t n_cells = ne_grid.size() * tv_grid.size();
  std::vector<SweepCell> partial(n_cells);
  std::vector<bool> done(n_cells, false);
  std::optional<TraceWriter> trace;
  if (!trace_path.empty()) trace.emplace(trace_path);
  detail::write_file(out, sweep_table(ne_grid, tv_grid, partial, done));
  const auto cells = run_sweep(scene, s, ne_grid, tv_grid, c.trials, c.seed, c.jobs, [&](const SweepCell& cell) {
    const std::size_t k = static_cast<std::size_t>(cell.row) * tv_grid.size() + cell.col;
    partial[k] = cell;
    done[k] = true;
    detail::write_file(out, sweep_table(ne_grid, tv_grid, partial, done));
    if (trace)
      trace->write(Json{{"ne", cell.ne},
                        {"lambda_tv", cell.lambda_tv},
                        {"overall_accuracy", stat_json(cell.report.overall_accuracy)}});
    std::printf("ne %d lambda_tv %s: OA %.2f +- %.2f\n", cell.ne, detail::format_double(cell.lambda_tv).c_str(),
                100.0 * cell.report.overall_accuracy.mean, 100.0 * cell.report.overall_accuracy.stddev);
    std::fflush(stdout);
  });

  Json meta = metadata("sweep", c);
  meta["ne_grid"] = ne_grid;
  meta["lambda_tv_grid"] = tv_grid;
  Json rows = Json::array();
  for (const auto& cell : cells)
    rows.push_back(Json{{"ne", cell.ne},
                        {"lambda_tv", cell.lambda_tv},
                        {"overall_accuracy", stat_json(cell.report.overall_accuracy)},
                        {"average_accuracy", stat_json(cell.report.average_accuracy)},
                        {"kappa", stat_json(cell.report.kappa)}});
  meta["cells"] = rows;
  write_json(out + ".json", meta);
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Hyperspectral and multispectral feature fusion for classification"};
  app.require_subcommand(1);

  Settings sim_s, fuse_s, cls_s, sweep_s;
  std::string out, y_h, y_m, trace, features, truth, report_path, ne_grid = "2,4,6,8,12,16,24",
                                                                  tv_grid = "0.0001,0.001,0.01,0.1,1";
  bool as_json = false;

  CLI::App* simulate_cmd = app.add_subcommand("simulate", "draw a synthetic scene and its HS/MS observations");
  add_settings(simulate_cmd, sim_s);
  simulate_cmd->add_option("--out", out, "output directory")->required();

  CLI::App* fuse_cmd = app.add_subcommand("fuse", "fuse an HS cube with the profile of an MS cube");
  add_settings(fuse_cmd, fuse_s);
  fuse_cmd->add_option("--y-h", y_h, "HS cube")->required();
  fuse_cmd->add_option("--y-m", y_m, "MS cube")->required();
  fuse_cmd->add_option("--out", out, "output directory")->required();
  fuse_cmd->add_option("--trace", trace, "JSONL trace (default <out>/trace.jsonl)");

  CLI::App* classify_cmd = app.add_subcommand("classify", "classify a feature cube against a label map");
  add_settings(classify_cmd, cls_s);
  classify_cmd->add_option("--features", features, "feature cube")->required();
  classify_cmd->add_option("--truth", truth, "label map")->required();
  classify_cmd->add_option("--out", out, "output directory")->required();

  CLI::App* report_cmd = app.add_subcommand("report", "re-verify and print a metrics report");
  report_cmd->add_option("report", report_path, "report file")->required();
  report_cmd->add_flag("--json", as_json, "print JSON");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "mean OA of fused features over an N_e x lambda_tv grid");
  add_settings(sweep_cmd, sweep_s);
  sweep_cmd->add_option("--ne-grid", ne_grid, "N_e values, comma separated");
  sweep_cmd->add_option("--lambda-tv-grid", tv_grid, "lambda_tv values, comma separated");
  sweep_cmd->add_option("--out", out, "table file; <out>.json gets the details")->required();
  sweep_cmd->add_option("--trace", trace, "JSONL record per finished cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "hsfuse: parameter error: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (simulate_cmd->parsed()) cmd_simulate(sim_s.resolve(), out);
    if (fuse_cmd->parsed()) cmd_fuse(fuse_s.resolve(), y_h, y_m, out, trace);
    if (classify_cmd->parsed()) cmd_classify(cls_s.resolve(), features, truth, out);
    if (report_cmd->parsed()) cmd_report(report_path, as_json);
    if (sweep_cmd->parsed()) cmd_sweep(sweep_s.resolve(), ne_grid, tv_grid, out, trace);
  } catch (const Error& e) {
    std::fprintf(stderr, "hsfuse: %s error: %s\n", to_string(e.kind()), one_line(e.what()).c_str());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hsfuse: error: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}

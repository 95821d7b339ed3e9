// Command-line front end: single runs and parameter sweeps over the
// partitioned coupling schemes, emitting a CSV summary and full JSON reports.

#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsilab/config.hpp"
#include "fsilab/runner.hpp"

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream stream(path, std::ios::binary);
  if (!stream) throw fsilab::IoError("cannot read config file " + path);
  std::ostringstream buffer;
  buffer << stream.rdbuf();
  return buffer.str();
}

std::vector<std::string> split_csv_list(const std::string& text) {
  std::vector<std::string> values;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      values.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  values.push_back(current);
  return values;
}

void print_summary(const std::vector<fsilab::runner::RunOutcome>& outcomes) {
  std::fputs(fsilab::runner::summary_csv(outcomes).c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fsilab: partitioned fluid-structure interaction coupling laboratory"};
  app.require_subcommand(1);

  std::string run_config_path;
  std::string run_out_dir;
  CLI::App* run_cmd = app.add_subcommand("run", "execute a single coupled simulation");
  run_cmd->add_option("config", run_config_path, "JSON run configuration")->required();
  run_cmd->add_option("--out", run_out_dir, "output directory (default: config output_path)");

  std::string sweep_config_path;
  std::string sweep_axis;
  std::string sweep_values;
  std::string sweep_out_dir;
  unsigned sweep_workers = 0;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "execute one run per value of an axis");
  sweep_cmd->add_option("config", sweep_config_path, "JSON base configuration")->required();
  sweep_cmd->add_option("--axis", sweep_axis, "robin_parameter | update | omega | dt")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated sweep values")->required();
  sweep_cmd->add_option("--out", sweep_out_dir, "output directory (default: config output_path)");
  sweep_cmd->add_option("--workers", sweep_workers, "worker pool size (default: hardware)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const fsilab::config::RunConfig config =
          fsilab::config::parse_config(read_text_file(run_config_path));
      std::vector<fsilab::runner::RunOutcome> outcomes{fsilab::runner::execute_run(config)};
      const std::string out_dir = run_out_dir.empty() ? config.output_path : run_out_dir;
      fsilab::runner::write_outputs(outcomes, out_dir);
      print_summary(outcomes);
      return fsilab::runner::exit_code(outcomes);
    }

    const fsilab::config::RunConfig base =
        fsilab::config::parse_config(read_text_file(sweep_config_path));
    const fsilab::runner::SweepAxis axis = fsilab::runner::parse_axis(sweep_axis);
    const std::vector<fsilab::config::RunConfig> configs =
        fsilab::runner::expand_sweep(base, axis, split_csv_list(sweep_values));
    const std::vector<fsilab::runner::RunOutcome> outcomes =
        fsilab::runner::execute_many(configs, sweep_workers);
    const std::string out_dir = sweep_out_dir.empty() ? base.output_path : sweep_out_dir;
    fsilab::runner::write_outputs(outcomes, out_dir);
    print_summary(outcomes);
    return fsilab::runner::exit_code(outcomes);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
}

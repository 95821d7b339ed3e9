#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsilab/config.hpp"
#include "fsilab/errors.hpp"
#include "fsilab/models.hpp"
#include "fsilab/schemes.hpp"

// Assembles problems and update strategies from a RunConfig, executes single
// runs and parameter sweeps, and writes the summary table and full reports.

namespace fsilab::runner {

using nlohmann::json;

inline std::unique_ptr<schemes::CoupledProblem> make_problem(const config::RunConfig& config) {
  switch (config.problem) {
    case config::ProblemKind::Affine: {
      const auto& m = config.affine;
      models::AffineProblemConfig cfg;
      const std::size_t dim = m.b_structure.size();
      cfg.a_structure = Matrix(dim, dim);
      cfg.a_fluid = Matrix(dim, dim);
      if (m.a_structure.size() != dim || m.a_fluid.size() != dim || m.b_fluid.size() != dim) {
        throw ConfigError("model: affine blocks disagree in size");
      }
      for (std::size_t i = 0; i < dim; ++i) {
        if (m.a_structure[i].size() != dim || m.a_fluid[i].size() != dim) {
          throw ConfigError("model: affine matrices must be square");
        }
        for (std::size_t j = 0; j < dim; ++j) {
          cfg.a_structure(i, j) = m.a_structure[i][j];
          cfg.a_fluid(i, j) = m.a_fluid[i][j];
        }
      }
      cfg.b_structure = Vector::from(m.b_structure);
      cfg.b_fluid = Vector::from(m.b_fluid);
      return std::make_unique<models::AffineProblem>(cfg);
    }
    case config::ProblemKind::Balloon0d: {
      models::BalloonConfig cfg;
      cfg.initial_radius = config.balloon.initial_radius;
      cfg.structure_density = config.balloon.structure_density;
      cfg.wall_thickness = config.balloon.wall_thickness;
      cfg.youngs_modulus = config.balloon.youngs_modulus;
      const double amplitude = config.balloon.inflow_amplitude;
      if (config.balloon.inflow_kind == "constant") {
        cfg.inflow = [amplitude](double) { return amplitude; };
      } else {
        cfg.inflow = [amplitude](double t) { return amplitude * std::sin(M_PI * t); };
      }
      return std::make_unique<models::BalloonProblem>(cfg);
    }
    case config::ProblemKind::Tube1dOpen:
    case config::ProblemKind::Tube1dClosed: {
      models::TubeConfig cfg;
      cfg.length = config.tube.length;
      cfg.cells = config.tube.cells;
      cfg.initial_radius = config.tube.initial_radius;
      cfg.wall_thickness = config.tube.wall_thickness;
      cfg.fluid_density = config.tube.fluid_density;
      cfg.structure_density = config.tube.structure_density;
      cfg.dynamic_viscosity = config.tube.dynamic_viscosity;
      cfg.youngs_modulus = config.tube.youngs_modulus;
      cfg.poisson_ratio = config.tube.poisson_ratio;
      cfg.pulse_amplitude = config.tube.pulse_amplitude;
      cfg.pulse_period = config.tube.pulse_period;
      cfg.closed_outlet = config.problem == config::ProblemKind::Tube1dClosed;
      return std::make_unique<models::TubeProblem>(cfg, config.eps_problem);
    }
  }
  throw ConfigError("problem: unhandled kind");
}

inline std::unique_ptr<accel::UpdateStrategy> make_update(const config::UpdateConfig& update) {
  switch (update.kind) {
    case config::UpdateKind::None:
      return std::make_unique<accel::IdentityUpdate>();
    case config::UpdateKind::Relax:
      return std::make_unique<accel::RelaxUpdate>(update.omega);
    case config::UpdateKind::Aitken:
      return std::make_unique<accel::AitkenUpdate>(update.omega0, update.omega_min,
                                                   update.omega_max);
    case config::UpdateKind::Ils:
      return std::make_unique<accel::IlsUpdate>(update.omega0, update.eps_filter);
    case config::UpdateKind::Imvls:
      return std::make_unique<accel::ImvlsUpdate>(update.omega0, update.eps_filter,
                                                  update.max_blocks);
  }
  throw ConfigError("update: unhandled kind");
}

struct RunOutcome {
  config::RunConfig config;
  schemes::RunReport report;
  double wall_seconds = 0.0;
};

inline RunOutcome execute_run(const config::RunConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  auto problem = make_problem(config);
  auto update = make_update(config.update);

  schemes::ConvergenceConfig convergence;
  convergence.eps_coupling = config.eps_coupling;
  convergence.eps_problem = config.eps_problem;
  convergence.max_coupling_iterations = config.max_coupling_iterations;

  schemes::SimulationOptions options;
  options.robin_parameter = config.robin_parameter.value_or(0.0);
  options.trajectory_stride = config.trajectory_stride;
  options.record_step_details = config.iteration_diagnostics;

  RunOutcome outcome;
  outcome.config = config;
  outcome.report = schemes::run_simulation(*problem, config.scheme, *update, convergence,
                                           config.n_steps, config.dt, options);
  outcome.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return outcome;
}

/// Executes the runs on a bounded worker pool; results keep input order.
inline std::vector<RunOutcome> execute_many(const std::vector<config::RunConfig>& configs,
                                            unsigned workers = 0) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, configs.size() > 0 ? configs.size() : 1);

  std::vector<RunOutcome> outcomes(configs.size());
  std::vector<std::exception_ptr> failures(configs.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t index = next.fetch_add(1);
      if (index >= configs.size()) return;
      try {
        outcomes[index] = execute_run(configs[index]);
      } catch (...) {
        failures[index] = std::current_exception();
      }
    }
  };

  std::vector<std::thread> pool;
  for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (std::thread& thread : pool) thread.join();

  for (const std::exception_ptr& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }
  return outcomes;
}

enum class SweepAxis { RobinParameter, Update, Omega, Dt };

inline SweepAxis parse_axis(const std::string& name) {
  if (name == "robin_parameter") return SweepAxis::RobinParameter;
  if (name == "update") return SweepAxis::Update;
  if (name == "omega") return SweepAxis::Omega;
  if (name == "dt") return SweepAxis::Dt;
  throw ConfigError("axis: unknown sweep axis '" + name + "'");
}

inline double parse_double_value(const std::string& text, const char* axis) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ConfigError(std::string("values: '") + text + "' is not a number for axis " + axis);
  }
}

/// One run configuration per sweep value; the base config supplies everything else.
inline std::vector<config::RunConfig> expand_sweep(const config::RunConfig& base, SweepAxis axis,
                                                   const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("values: sweep requires at least one value");
  std::vector<config::RunConfig> configs;
  configs.reserve(values.size());
  for (const std::string& value : values) {
    config::RunConfig next = base;
    switch (axis) {
      case SweepAxis::RobinParameter: {
        if (!base.robin_parameter.has_value()) {
          throw ConfigError("axis: robin_parameter sweep requires an rn / rn_qn base config");
        }
        const double alpha = parse_double_value(value, "robin_parameter");
        if (!(alpha > 0.0)) throw ConfigError("values: robin_parameter must be > 0");
        next.robin_parameter = alpha;
        break;
      }
      case SweepAxis::Update: {
        if (base.scheme == schemes::SchemeKind::Rn) {
          throw ConfigError("axis: the plain rn scheme takes no update strategy");
        }
        const config::UpdateKind kind = [&] {
          if (value == "relax") return config::UpdateKind::Relax;
          if (value == "aitken") return config::UpdateKind::Aitken;
          if (value == "ils") return config::UpdateKind::Ils;
          if (value == "imvls") return config::UpdateKind::Imvls;
          throw ConfigError("values: unknown update '" + value + "'");
        }();
        next.update.kind = kind;
        break;
      }
      case SweepAxis::Omega: {
        if (base.update.kind == config::UpdateKind::None) {
          throw ConfigError("axis: omega sweep requires an update strategy");
        }
        const double omega = parse_double_value(value, "omega");
        if (!(omega > 0.0) || omega > 1.0) throw ConfigError("values: omega must lie in (0, 1]");
        if (base.update.kind == config::UpdateKind::Relax) {
          next.update.omega = omega;
        } else {
          next.update.omega0 = omega;
        }
        break;
      }
      case SweepAxis::Dt: {
        const double dt = parse_double_value(value, "dt");
        if (!(dt > 0.0)) throw ConfigError("values: dt must be > 0");
        next.dt = dt;
        break;
      }
    }
    configs.push_back(std::move(next));
  }
  return configs;
}

namespace detail {

inline std::string format_number(double value, const char* spec) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), spec, value);
  return buffer;
}

inline const char* termination_name(schemes::TerminationStatus status) {
  switch (status) {
    case schemes::TerminationStatus::Completed: return "completed";
    case schemes::TerminationStatus::Diverged: return "diverged";
    case schemes::TerminationStatus::Dilemma: return "dilemma";
  }
  return "unknown";
}

}  // namespace detail

/// Summary table, one row per run. Incomplete runs leave the numeric cells
/// empty, mirroring how missing table entries mark unstable configurations.
inline std::string summary_csv(const std::vector<RunOutcome>& outcomes) {
  std::string csv = "scheme,update,robin_parameter,mean_iterations,eps_rel,termination\n";
  for (const RunOutcome& outcome : outcomes) {
    const bool completed = outcome.report.termination == schemes::TerminationStatus::Completed;
    csv += schemes::scheme_name(outcome.config.scheme);
    csv += ',';
    csv += config::update_name(outcome.config.update.kind);
    csv += ',';
    if (outcome.config.robin_parameter.has_value()) {
      csv += detail::format_number(*outcome.config.robin_parameter, "%.12g");
    }
    csv += ',';
    if (completed) csv += detail::format_number(outcome.report.mean_iterations, "%.12g");
    csv += ',';
    if (completed) csv += detail::format_number(outcome.report.eps_rel, "%.6e");
    csv += ',';
    csv += detail::termination_name(outcome.report.termination);
    csv += '\n';
  }
  return csv;
}

inline json report_json(const RunOutcome& outcome) {
  json report;
  report["config"] = config::to_json(outcome.config);
  report["per_step_iterations"] = outcome.report.per_step_iterations;
  report["mean_iterations"] = outcome.report.mean_iterations;
  report["max_iterations"] = outcome.report.max_iterations;
  report["eps_rel"] = outcome.report.eps_rel;
  json termination;
  termination["status"] = detail::termination_name(outcome.report.termination);
  if (outcome.report.termination != schemes::TerminationStatus::Completed) {
    termination["step"] = outcome.report.failing_step;
    termination["reason"] = outcome.report.failure_reason;
  }
  report["termination"] = termination;
  report["mass_audit_max_rel"] = outcome.report.mass_audit_max_rel;
  json trajectory = json::array();
  for (const schemes::TrajectorySample& sample : outcome.report.trajectory) {
    trajectory.push_back({{"t", sample.t}, {"values", sample.values}});
  }
  report["trajectory"] = trajectory;
  if (!outcome.report.step_details.empty()) {
    json steps = json::array();
    for (const schemes::TimeStepReport& step : outcome.report.step_details) {
      json iterations = json::array();
      for (const schemes::IterationRecord& rec : step.history) {
        json entry;
        entry["residual_rel"] = rec.residual_rel;
        entry["residual_abs"] = rec.residual_abs;
        entry["secondary_rel"] = rec.secondary_rel;
        if (rec.omega.has_value()) entry["omega"] = *rec.omega;
        if (rec.alpha_norm.has_value()) entry["alpha_norm"] = *rec.alpha_norm;
        iterations.push_back(entry);
      }
      steps.push_back({{"iterations", step.iterations}, {"history", iterations}});
    }
    report["step_diagnostics"] = steps;
  }
  report["wall_seconds"] = outcome.wall_seconds;
  return report;
}

inline json reports_json(const std::vector<RunOutcome>& outcomes) {
  json root;
  json runs = json::array();
  for (const RunOutcome& outcome : outcomes) runs.push_back(report_json(outcome));
  root["runs"] = runs;
  return root;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream stream(path, std::ios::binary | std::ios::trunc);
  if (!stream) throw IoError("cannot open " + path.string() + " for writing");
  stream << content;
  if (!stream) throw IoError("failed writing " + path.string());
}

/// Writes <out>/summary.csv and <out>/reports.json.
inline void write_outputs(const std::vector<RunOutcome>& outcomes, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  write_file(std::filesystem::path(out_dir) / "summary.csv", summary_csv(outcomes));
  write_file(std::filesystem::path(out_dir) / "reports.json", reports_json(outcomes).dump(2) + "\n");
}

/// Exit code contract: 0 all completed, 2 at least one diverged or hit the
/// dilemma (outputs still written), 1 configuration or I/O failure.
inline int exit_code(const std::vector<RunOutcome>& outcomes) {
  for (const RunOutcome& outcome : outcomes) {
    if (outcome.report.termination != schemes::TerminationStatus::Completed) return 2;
  }
  return 0;
}

}  // namespace fsilab::runner

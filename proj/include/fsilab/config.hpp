#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsilab/densela.hpp"
#include "fsilab/errors.hpp"
#include "fsilab/models.hpp"
#include "fsilab/schemes.hpp"

// Run configuration: a single JSON document selecting problem, scheme,
// update strategy, and numerical parameters. Unknown keys are rejected so
// typos cannot silently fall back to defaults.

namespace fsilab::config {

using nlohmann::json;

enum class ProblemKind { Affine, Balloon0d, Tube1dOpen, Tube1dClosed };

enum class UpdateKind { None, Relax, Aitken, Ils, Imvls };

struct UpdateConfig {
  UpdateKind kind = UpdateKind::None;
  double omega = 0.5;       // relax
  double omega0 = 0.1;      // first-iteration relaxation of aitken/ils/imvls
  double omega_min = 1e-4;  // aitken clamp
  double omega_max = 1.0;
  double eps_filter = 1e-8;
  std::size_t max_blocks = 8;  // imvls retention, 0 = unlimited
};

struct BalloonModelConfig {
  double initial_radius = 0.28;
  double structure_density = 1000.0;
  double wall_thickness = 0.02;
  double youngs_modulus = 1.4e6;
  std::string inflow_kind = "sine";  // sine: amplitude * sin(pi t); constant: amplitude
  double inflow_amplitude = 0.2;
};

struct TubeModelConfig {
  double length = 0.05;
  int cells = 16;
  double initial_radius = 0.005;
  double wall_thickness = 0.001;
  double fluid_density = 1000.0;
  double structure_density = 1000.0;
  double dynamic_viscosity = 0.003;
  double youngs_modulus = 3.0e5;
  double poisson_ratio = 0.3;
  double pulse_amplitude = 3.75;
  double pulse_period = 0.003;
};

struct AffineModelConfig {
  std::vector<std::vector<double>> a_structure;
  std::vector<double> b_structure;
  std::vector<std::vector<double>> a_fluid;
  std::vector<double> b_fluid;
};

struct RunConfig {
  ProblemKind problem = ProblemKind::Balloon0d;
  schemes::SchemeKind scheme = schemes::SchemeKind::RnQn;
  UpdateConfig update;
  std::optional<double> robin_parameter;
  double eps_coupling = 1e-6;
  double eps_problem = 1e-10;
  int max_coupling_iterations = 500;
  double dt = 0.01;
  int n_steps = 1;
  int trajectory_stride = 1;
  bool iteration_diagnostics = false;
  std::string output_path = "out";
  BalloonModelConfig balloon;
  TubeModelConfig tube;
  AffineModelConfig affine;
};

inline const char* problem_name(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::Affine: return "affine";
    case ProblemKind::Balloon0d: return "balloon0d";
    case ProblemKind::Tube1dOpen: return "tube1d_open";
    case ProblemKind::Tube1dClosed: return "tube1d_closed";
  }
  return "unknown";
}

inline const char* update_name(UpdateKind kind) {
  switch (kind) {
    case UpdateKind::None: return "none";
    case UpdateKind::Relax: return "relax";
    case UpdateKind::Aitken: return "aitken";
    case UpdateKind::Ils: return "ils";
    case UpdateKind::Imvls: return "imvls";
  }
  return "unknown";
}

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& reason) {
  throw ConfigError(path + ": " + reason);
}

inline void reject_unknown_keys(const json& object, const std::string& path,
                                std::initializer_list<const char*> known) {
  for (const auto& item : object.items()) {
    bool found = false;
    for (const char* key : known) {
      if (item.key() == key) {
        found = true;
        break;
      }
    }
    if (!found) fail(path + "." + item.key(), "unknown key");
  }
}

inline double require_positive(const json& object, const std::string& path, const char* key,
                               double fallback) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_number()) fail(path + "." + key, "must be a number");
  const double value = object.at(key).get<double>();
  if (!(value > 0.0) || !std::isfinite(value)) fail(path + "." + key, "must be > 0 and finite");
  return value;
}

inline ProblemKind parse_problem(const std::string& name) {
  if (name == "affine") return ProblemKind::Affine;
  if (name == "balloon0d") return ProblemKind::Balloon0d;
  if (name == "tube1d_open") return ProblemKind::Tube1dOpen;
  if (name == "tube1d_closed") return ProblemKind::Tube1dClosed;
  fail("problem", "unknown problem '" + name + "'");
}

inline schemes::SchemeKind parse_scheme(const std::string& name) {
  if (name == "dn") return schemes::SchemeKind::Dn;
  if (name == "dn_qn_s") return schemes::SchemeKind::DnQnS;
  if (name == "dn_qn_f") return schemes::SchemeKind::DnQnF;
  if (name == "rn") return schemes::SchemeKind::Rn;
  if (name == "rn_qn") return schemes::SchemeKind::RnQn;
  fail("scheme", "unknown scheme '" + name + "'");
}

inline UpdateKind parse_update_kind(const std::string& name) {
  if (name == "none") return UpdateKind::None;
  if (name == "relax") return UpdateKind::Relax;
  if (name == "aitken") return UpdateKind::Aitken;
  if (name == "ils") return UpdateKind::Ils;
  if (name == "imvls") return UpdateKind::Imvls;
  fail("update.kind", "unknown update '" + name + "'");
}

inline UpdateConfig parse_update(const json& object) {
  UpdateConfig update;
  if (!object.is_object()) fail("update", "must be an object");
  reject_unknown_keys(object, "update",
                      {"kind", "omega", "omega0", "omega_min", "omega_max", "eps_filter",
                       "max_blocks"});
  if (!object.contains("kind")) fail("update.kind", "required");
  update.kind = parse_update_kind(object.at("kind").get<std::string>());
  update.omega = require_positive(object, "update", "omega", update.omega);
  update.omega0 = require_positive(object, "update", "omega0", update.omega0);
  update.omega_min = require_positive(object, "update", "omega_min", update.omega_min);
  update.omega_max = require_positive(object, "update", "omega_max", update.omega_max);
  update.eps_filter = require_positive(object, "update", "eps_filter", update.eps_filter);
  if (object.contains("max_blocks")) {
    if (!object.at("max_blocks").is_number_unsigned()) {
      fail("update.max_blocks", "must be a non-negative integer");
    }
    update.max_blocks = object.at("max_blocks").get<std::size_t>();
  }
  if (update.omega > 1.0) fail("update.omega", "must lie in (0, 1]");
  if (update.omega0 > 1.0) fail("update.omega0", "must lie in (0, 1]");
  if (update.omega_min > update.omega_max || update.omega_max > 1.0) {
    fail("update.omega_min", "need 0 < omega_min <= omega_max <= 1");
  }
  return update;
}

inline BalloonModelConfig parse_balloon_model(const json& object) {
  BalloonModelConfig model;
  reject_unknown_keys(object, "model",
                      {"initial_radius", "structure_density", "wall_thickness", "youngs_modulus",
                       "inflow_kind", "inflow_amplitude"});
  model.initial_radius = require_positive(object, "model", "initial_radius", model.initial_radius);
  model.structure_density =
      require_positive(object, "model", "structure_density", model.structure_density);
  model.wall_thickness = require_positive(object, "model", "wall_thickness", model.wall_thickness);
  model.youngs_modulus = require_positive(object, "model", "youngs_modulus", model.youngs_modulus);
  if (object.contains("inflow_kind")) {
    model.inflow_kind = object.at("inflow_kind").get<std::string>();
    if (model.inflow_kind != "sine" && model.inflow_kind != "constant") {
      fail("model.inflow_kind", "must be 'sine' or 'constant'");
    }
  }
  model.inflow_amplitude =
      require_positive(object, "model", "inflow_amplitude", model.inflow_amplitude);
  return model;
}

inline TubeModelConfig parse_tube_model(const json& object) {
  TubeModelConfig model;
  reject_unknown_keys(object, "model",
                      {"length", "cells", "initial_radius", "wall_thickness", "fluid_density",
                       "structure_density", "dynamic_viscosity", "youngs_modulus", "poisson_ratio",
                       "pulse_amplitude", "pulse_period"});
  model.length = require_positive(object, "model", "length", model.length);
  if (object.contains("cells")) {
    if (!object.at("cells").is_number_integer()) fail("model.cells", "must be an integer");
    model.cells = object.at("cells").get<int>();
    if (model.cells < 4) fail("model.cells", "need at least 4 cells");
  }
  model.initial_radius = require_positive(object, "model", "initial_radius", model.initial_radius);
  model.wall_thickness = require_positive(object, "model", "wall_thickness", model.wall_thickness);
  model.fluid_density = require_positive(object, "model", "fluid_density", model.fluid_density);
  model.structure_density =
      require_positive(object, "model", "structure_density", model.structure_density);
  model.dynamic_viscosity =
      require_positive(object, "model", "dynamic_viscosity", model.dynamic_viscosity);
  model.youngs_modulus = require_positive(object, "model", "youngs_modulus", model.youngs_modulus);
  if (object.contains("poisson_ratio")) {
    model.poisson_ratio = object.at("poisson_ratio").get<double>();
  }
  model.pulse_amplitude =
      require_positive(object, "model", "pulse_amplitude", model.pulse_amplitude);
  model.pulse_period = require_positive(object, "model", "pulse_period", model.pulse_period);
  return model;
}

inline std::vector<std::vector<double>> parse_matrix_rows(const json& value,
                                                          const std::string& path) {
  if (!value.is_array() || value.empty()) fail(path, "must be a non-empty array of rows");
  std::vector<std::vector<double>> rows;
  for (const auto& row : value) {
    if (!row.is_array()) fail(path, "rows must be arrays");
    rows.push_back(row.get<std::vector<double>>());
    if (rows.back().size() != rows.front().size()) fail(path, "ragged rows");
  }
  return rows;
}

inline AffineModelConfig parse_affine_model(const json& object) {
  AffineModelConfig model;
  reject_unknown_keys(object, "model", {"a_structure", "b_structure", "a_fluid", "b_fluid"});
  for (const char* key : {"a_structure", "b_structure", "a_fluid", "b_fluid"}) {
    if (!object.contains(key)) fail(std::string("model.") + key, "required for affine problems");
  }
  model.a_structure = parse_matrix_rows(object.at("a_structure"), "model.a_structure");
  model.a_fluid = parse_matrix_rows(object.at("a_fluid"), "model.a_fluid");
  model.b_structure = object.at("b_structure").get<std::vector<double>>();
  model.b_fluid = object.at("b_fluid").get<std::vector<double>>();
  return model;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& err) {
    throw ConfigError(std::string("config: invalid JSON: ") + err.what());
  }
  if (!root.is_object()) detail::fail("config", "top level must be an object");
  detail::reject_unknown_keys(root, "config",
                              {"problem", "scheme", "update", "robin_parameter", "eps_coupling",
                               "eps_problem", "max_coupling_iterations", "dt", "n_steps",
                               "trajectory_stride", "iteration_diagnostics", "output_path",
                               "model"});

  RunConfig config;
  if (!root.contains("problem")) detail::fail("problem", "required");
  config.problem = detail::parse_problem(root.at("problem").get<std::string>());
  if (!root.contains("scheme")) detail::fail("scheme", "required");
  config.scheme = detail::parse_scheme(root.at("scheme").get<std::string>());

  if (root.contains("update")) {
    config.update = detail::parse_update(root.at("update"));
  } else {
    config.update.kind = UpdateKind::None;
  }

  const bool robin_scheme =
      config.scheme == schemes::SchemeKind::Rn || config.scheme == schemes::SchemeKind::RnQn;
  if (root.contains("robin_parameter")) {
    if (!robin_scheme) detail::fail("robin_parameter", "only valid for rn / rn_qn schemes");
    const double alpha = root.at("robin_parameter").get<double>();
    if (!(alpha > 0.0) || !std::isfinite(alpha)) detail::fail("robin_parameter", "must be > 0");
    config.robin_parameter = alpha;
  } else if (robin_scheme) {
    detail::fail("robin_parameter", "required for rn / rn_qn schemes");
  }

  if (config.scheme == schemes::SchemeKind::Rn && config.update.kind != UpdateKind::None) {
    detail::fail("update.kind", "the plain rn scheme takes no update strategy");
  }
  const bool qn_scheme = config.scheme == schemes::SchemeKind::DnQnS ||
                         config.scheme == schemes::SchemeKind::DnQnF ||
                         config.scheme == schemes::SchemeKind::RnQn;
  if (qn_scheme && config.update.kind == UpdateKind::None) {
    detail::fail("update.kind", "dn_qn_s, dn_qn_f, and rn_qn require an update strategy");
  }

  config.eps_coupling = detail::require_positive(root, "config", "eps_coupling", config.eps_coupling);
  config.eps_problem = detail::require_positive(root, "config", "eps_problem", config.eps_problem);
  if (root.contains("max_coupling_iterations")) {
    config.max_coupling_iterations = root.at("max_coupling_iterations").get<int>();
    if (config.max_coupling_iterations < 1) detail::fail("max_coupling_iterations", "must be >= 1");
  }
  if (!root.contains("dt")) detail::fail("dt", "required");
  config.dt = detail::require_positive(root, "config", "dt", 0.0);
  if (!root.contains("n_steps")) detail::fail("n_steps", "required");
  if (!root.at("n_steps").is_number_integer()) detail::fail("n_steps", "must be an integer");
  config.n_steps = root.at("n_steps").get<int>();
  if (config.n_steps < 1) detail::fail("n_steps", "must be >= 1");
  if (root.contains("trajectory_stride")) {
    config.trajectory_stride = root.at("trajectory_stride").get<int>();
    if (config.trajectory_stride < 1) detail::fail("trajectory_stride", "must be >= 1");
  }
  if (root.contains("iteration_diagnostics")) {
    config.iteration_diagnostics = root.at("iteration_diagnostics").get<bool>();
  }
  if (root.contains("output_path")) {
    config.output_path = root.at("output_path").get<std::string>();
    if (config.output_path.empty()) detail::fail("output_path", "must not be empty");
  }

  const json model = root.contains("model") ? root.at("model") : json::object();
  if (!model.is_object()) detail::fail("model", "must be an object");
  switch (config.problem) {
    case ProblemKind::Affine:
      config.affine = detail::parse_affine_model(model);
      break;
    case ProblemKind::Balloon0d:
      config.balloon = detail::parse_balloon_model(model);
      break;
    case ProblemKind::Tube1dOpen:
    case ProblemKind::Tube1dClosed:
      config.tube = detail::parse_tube_model(model);
      break;
  }
  return config;
}

inline json to_json(const UpdateConfig& update) {
  json object;
  object["kind"] = update_name(update.kind);
  if (update.kind == UpdateKind::Relax) object["omega"] = update.omega;
  if (update.kind == UpdateKind::Aitken) {
    object["omega0"] = update.omega0;
    object["omega_min"] = update.omega_min;
    object["omega_max"] = update.omega_max;
  }
  if (update.kind == UpdateKind::Ils || update.kind == UpdateKind::Imvls) {
    object["omega0"] = update.omega0;
    object["eps_filter"] = update.eps_filter;
  }
  if (update.kind == UpdateKind::Imvls) object["max_blocks"] = update.max_blocks;
  return object;
}

inline json to_json(const RunConfig& config) {
  json root;
  root["problem"] = problem_name(config.problem);
  root["scheme"] = schemes::scheme_name(config.scheme);
  root["update"] = to_json(config.update);
  if (config.robin_parameter.has_value()) root["robin_parameter"] = *config.robin_parameter;
  root["eps_coupling"] = config.eps_coupling;
  root["eps_problem"] = config.eps_problem;
  root["max_coupling_iterations"] = config.max_coupling_iterations;
  root["dt"] = config.dt;
  root["n_steps"] = config.n_steps;
  root["trajectory_stride"] = config.trajectory_stride;
  root["iteration_diagnostics"] = config.iteration_diagnostics;
  root["output_path"] = config.output_path;

  json model = json::object();
  switch (config.problem) {
    case ProblemKind::Affine:
      model["a_structure"] = config.affine.a_structure;
      model["b_structure"] = config.affine.b_structure;
      model["a_fluid"] = config.affine.a_fluid;
      model["b_fluid"] = config.affine.b_fluid;
      break;
    case ProblemKind::Balloon0d:
      model["initial_radius"] = config.balloon.initial_radius;
      model["structure_density"] = config.balloon.structure_density;
      model["wall_thickness"] = config.balloon.wall_thickness;
      model["youngs_modulus"] = config.balloon.youngs_modulus;
      model["inflow_kind"] = config.balloon.inflow_kind;
      model["inflow_amplitude"] = config.balloon.inflow_amplitude;
      break;
    case ProblemKind::Tube1dOpen:
    case ProblemKind::Tube1dClosed:
      model["length"] = config.tube.length;
      model["cells"] = config.tube.cells;
      model["initial_radius"] = config.tube.initial_radius;
      model["wall_thickness"] = config.tube.wall_thickness;
      model["fluid_density"] = config.tube.fluid_density;
      model["structure_density"] = config.tube.structure_density;
      model["dynamic_viscosity"] = config.tube.dynamic_viscosity;
      model["youngs_modulus"] = config.tube.youngs_modulus;
      model["poisson_ratio"] = config.tube.poisson_ratio;
      model["pulse_amplitude"] = config.tube.pulse_amplitude;
      model["pulse_period"] = config.tube.pulse_period;
      break;
  }
  root["model"] = model;
  return root;
}

inline std::string serialize_config(const RunConfig& config) { return to_json(config).dump(2); }

}  // namespace fsilab::config

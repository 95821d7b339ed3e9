#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsilab/accel.hpp"
#include "fsilab/densela.hpp"
#include "fsilab/errors.hpp"
#include "fsilab/metrics.hpp"

// Coupling-loop orchestrators for the partitioned schemes: Dirichlet-Neumann
// with the update applied to deformations (DN, DN-QN(S)) or to the fluid
// loads (DN-QN(F)), plain Robin-Neumann, and Robin-Neumann with quasi-Newton
// acceleration of the fed-back tractions. A time step counts as converged
// only when the relative interface residual is below eps_coupling, the
// secondary exchanged field has settled to the same bound, and both
// subproblem solvers report convergence.

namespace fsilab::schemes {

inline constexpr double kNormFloor = 1e-12;

struct TimeContext {
  double t_new = 0.0;  // time level being solved (end of the step)
  double dt = 0.0;
  int step_index = 0;  // 0-based committed-step counter
};

struct BoundaryData {
  enum class Kind { Dirichlet, Neumann, Robin };

  Kind kind = Kind::Neumann;
  Vector deformation;
  Vector deformation_rate;
  Vector traction;
  double robin_parameter = 0.0;

  static BoundaryData dirichlet(Vector deformation, Vector rate) {
    BoundaryData b;
    b.kind = Kind::Dirichlet;
    b.deformation = std::move(deformation);
    b.deformation_rate = std::move(rate);
    return b;
  }

  static BoundaryData neumann(Vector traction) {
    BoundaryData b;
    b.kind = Kind::Neumann;
    b.traction = std::move(traction);
    return b;
  }

  static BoundaryData robin(Vector deformation, Vector rate, Vector traction, double alpha) {
    if (!(alpha > 0.0)) throw ParameterError("BoundaryData: robin parameter must be > 0");
    BoundaryData b;
    b.kind = Kind::Robin;
    b.deformation = std::move(deformation);
    b.deformation_rate = std::move(rate);
    b.traction = std::move(traction);
    b.robin_parameter = alpha;
    return b;
  }
};

struct BoundaryOutput {
  Vector field;
  bool subproblem_converged = true;
};

/// Black-box subproblem solver. Every solve starts from the state committed
/// at the end of the previous time step; commit() promotes the latest solve
/// to the new time level.
class SolverAdapter {
public:
  virtual ~SolverAdapter() = default;
  virtual BoundaryOutput solve(const BoundaryData& input, const TimeContext& ctx) = 0;
  virtual void commit() = 0;
};

struct ConvergenceConfig {
  double eps_coupling = 1e-6;
  double eps_problem = 1e-10;
  int max_coupling_iterations = 500;

  void validate() const {
    if (!(eps_coupling > 0.0)) throw ParameterError("eps_coupling must be > 0");
    if (!(eps_problem > 0.0)) throw ParameterError("eps_problem must be > 0");
    if (max_coupling_iterations < 1) throw ParameterError("max_coupling_iterations must be >= 1");
  }
};

struct CouplingState {
  int k = 0;
  Vector x_in;
  Vector x_out_raw;
  double residual_norm_rel = std::numeric_limits<double>::infinity();
  bool criterion_i_met = false;
  bool criterion_ii_met = false;
};

/// Criterion (I): relative interface residual at or below eps_coupling.
/// Criterion (II): both subproblems converged on their own tolerance.
inline bool check_convergence(CouplingState& state, const ConvergenceConfig& config,
                              bool fluid_converged, bool structure_converged) {
  state.criterion_i_met = state.residual_norm_rel <= config.eps_coupling;
  state.criterion_ii_met = fluid_converged && structure_converged;
  return state.criterion_i_met && state.criterion_ii_met;
}

inline double relative_norm(const Vector& numerator, const Vector& scale_vector) {
  return numerator.norm2() / std::max(scale_vector.norm2(), kNormFloor);
}

struct IterationRecord {
  double residual_rel = 0.0;
  double residual_abs = 0.0;
  double secondary_rel = 0.0;
  std::optional<double> omega;
  std::optional<double> alpha_norm;

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct TimeStepReport {
  int iterations = 0;
  double final_residual_rel = 0.0;
  double final_secondary_rel = 0.0;
  std::vector<IterationRecord> history;
  std::vector<Vector> updated_iterates;  // filled when requested

  friend bool operator==(const TimeStepReport&, const TimeStepReport&) = default;
};

/// Converged interface fields carried from one time step to the next.
struct CouplingFields {
  Vector traction_seed;            // next step's traction loop input
  Vector committed_deformation;    // structure output at the last commit (rate baseline)
  Vector previous_deformation;     // structure output one commit earlier

  /// Deformation loop seed: constant-velocity extrapolation of the two last
  /// committed states. Seeding with the frozen previous position makes the
  /// first fluid call of a step see a stopped wall, whose water-hammer
  /// response destabilizes the Dirichlet-Neumann loops.
  Vector predicted_deformation() const {
    Vector d = committed_deformation;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += committed_deformation[i] - previous_deformation[i];
    return d;
  }
};

struct StepOptions {
  bool record_iterates = false;
};

namespace detail {

inline void guard_finite(const Vector& v, const char* what) {
  try {
    v.validate();
  } catch (const NonFiniteError&) {
    throw SolverDiverged(std::string(what) + " became non-finite");
  }
}

inline void note_diagnostics(IterationRecord& rec, const accel::UpdateStrategy& update) {
  const accel::UpdateDiagnostics diag = update.diagnostics();
  rec.omega = diag.omega;
  rec.alpha_norm = diag.alpha_norm;
}

}  // namespace detail

/// Dirichlet-Neumann loop, update applied to the interface deformation.
/// With an ILS/IMVLS strategy this is the DN-QN(S) scheme.
inline TimeStepReport run_dn_step(SolverAdapter& fluid, SolverAdapter& structure,
                                  accel::UpdateStrategy& update, CouplingFields& fields,
                                  const ConvergenceConfig& config, const TimeContext& ctx,
                                  const StepOptions& options = {}) {
  config.validate();
  update.begin_step();
  const Vector rate_baseline = fields.committed_deformation;

  Vector d = fields.predicted_deformation();
  Vector h_previous = fields.traction_seed;
  TimeStepReport report;
  CouplingState state;

  for (int k = 1; k <= config.max_coupling_iterations; ++k) {
    const Vector rate = (1.0 / ctx.dt) * (d - rate_baseline);
    const BoundaryOutput fluid_out = fluid.solve(BoundaryData::dirichlet(d, rate), ctx);
    detail::guard_finite(fluid_out.field, "fluid traction");
    const BoundaryOutput structure_out = structure.solve(BoundaryData::neumann(fluid_out.field), ctx);
    detail::guard_finite(structure_out.field, "structure deformation");
    const Vector& d_tilde = structure_out.field;

    state.k = k;
    state.x_in = d;
    state.x_out_raw = d_tilde;
    state.residual_norm_rel = relative_norm(d_tilde - d, d_tilde);
    const double secondary_rel = relative_norm(fluid_out.field - h_previous, fluid_out.field);

    IterationRecord rec;
    rec.residual_rel = state.residual_norm_rel;
    rec.residual_abs = (d_tilde - d).norm2();
    rec.secondary_rel = secondary_rel;

    const Vector d_next = update.apply(d_tilde, d, k);
    detail::note_diagnostics(rec, update);
    report.history.push_back(rec);
    if (options.record_iterates) report.updated_iterates.push_back(d_next);

    if (check_convergence(state, config, fluid_out.subproblem_converged,
                          structure_out.subproblem_converged) &&
        secondary_rel <= config.eps_coupling) {
      report.iterations = k;
      report.final_residual_rel = state.residual_norm_rel;
      report.final_secondary_rel = secondary_rel;
      update.end_step();
      fluid.commit();
      structure.commit();
      fields.traction_seed = fluid_out.field;
      fields.previous_deformation = fields.committed_deformation;
      fields.committed_deformation = d_tilde;
      return report;
    }

    d = d_next;
    h_previous = fluid_out.field;
  }
  throw MaxIterationsExceeded("dn step: coupling iteration cap reached",
                              config.max_coupling_iterations);
}

/// Dirichlet-Neumann loop with switched solver order and the update applied
/// to the fluid loads: the DN-QN(F) variant.
inline TimeStepReport run_dn_forces_step(SolverAdapter& fluid, SolverAdapter& structure,
                                         accel::UpdateStrategy& update, CouplingFields& fields,
                                         const ConvergenceConfig& config, const TimeContext& ctx,
                                         const StepOptions& options = {}) {
  config.validate();
  update.begin_step();
  const Vector rate_baseline = fields.committed_deformation;

  Vector h = fields.traction_seed;
  Vector d_previous = fields.committed_deformation;
  TimeStepReport report;
  CouplingState state;

  for (int k = 1; k <= config.max_coupling_iterations; ++k) {
    const BoundaryOutput structure_out = structure.solve(BoundaryData::neumann(h), ctx);
    detail::guard_finite(structure_out.field, "structure deformation");
    const Vector& d = structure_out.field;
    const Vector rate = (1.0 / ctx.dt) * (d - rate_baseline);
    const BoundaryOutput fluid_out = fluid.solve(BoundaryData::dirichlet(d, rate), ctx);
    detail::guard_finite(fluid_out.field, "fluid traction");
    const Vector& h_tilde = fluid_out.field;

    state.k = k;
    state.x_in = h;
    state.x_out_raw = h_tilde;
    state.residual_norm_rel = relative_norm(h_tilde - h, h_tilde);
    const double secondary_rel = relative_norm(d - d_previous, d);

    IterationRecord rec;
    rec.residual_rel = state.residual_norm_rel;
    rec.residual_abs = (h_tilde - h).norm2();
    rec.secondary_rel = secondary_rel;

    const Vector h_next = update.apply(h_tilde, h, k);
    detail::note_diagnostics(rec, update);
    report.history.push_back(rec);
    if (options.record_iterates) report.updated_iterates.push_back(h_next);

    if (check_convergence(state, config, fluid_out.subproblem_converged,
                          structure_out.subproblem_converged) &&
        secondary_rel <= config.eps_coupling) {
      report.iterations = k;
      report.final_residual_rel = state.residual_norm_rel;
      report.final_secondary_rel = secondary_rel;
      update.end_step();
      fluid.commit();
      structure.commit();
      fields.traction_seed = h_next;
      fields.previous_deformation = fields.committed_deformation;
      fields.committed_deformation = d;
      return report;
    }

    h = h_next;
    d_previous = d;
  }
  throw MaxIterationsExceeded("dn forces step: coupling iteration cap reached",
                              config.max_coupling_iterations);
}

/// Robin-Neumann loop: the structure gets the current tractions, the fluid a
/// Robin condition blending the structure motion with the same tractions.
/// With an identity update this is the plain RN scheme; with a quasi-Newton
/// strategy it is the RN-QN scheme. The updated tractions feed both the
/// structure and the next Robin condition, and seed the next time step.
inline TimeStepReport run_rn_step(SolverAdapter& fluid, SolverAdapter& structure,
                                  double robin_parameter, accel::UpdateStrategy& update,
                                  CouplingFields& fields, const ConvergenceConfig& config,
                                  const TimeContext& ctx, const StepOptions& options = {}) {
  config.validate();
  if (!(robin_parameter > 0.0)) throw ParameterError("run_rn_step: robin parameter must be > 0");
  update.begin_step();
  const Vector rate_baseline = fields.committed_deformation;

  Vector h = fields.traction_seed;
  Vector d_previous = fields.committed_deformation;
  TimeStepReport report;
  CouplingState state;

  for (int k = 1; k <= config.max_coupling_iterations; ++k) {
    const BoundaryOutput structure_out = structure.solve(BoundaryData::neumann(h), ctx);
    detail::guard_finite(structure_out.field, "structure deformation");
    const Vector& d = structure_out.field;
    const Vector rate = (1.0 / ctx.dt) * (d - rate_baseline);
    const BoundaryOutput fluid_out =
        fluid.solve(BoundaryData::robin(d, rate, h, robin_parameter), ctx);
    detail::guard_finite(fluid_out.field, "fluid traction");
    const Vector& h_tilde = fluid_out.field;

    state.k = k;
    state.x_in = h;
    state.x_out_raw = h_tilde;
    state.residual_norm_rel = relative_norm(h_tilde - h, h_tilde);
    const double secondary_rel = relative_norm(d - d_previous, d);

    IterationRecord rec;
    rec.residual_rel = state.residual_norm_rel;
    rec.residual_abs = (h_tilde - h).norm2();
    rec.secondary_rel = secondary_rel;

    const Vector h_next = update.apply(h_tilde, h, k);
    detail::note_diagnostics(rec, update);
    report.history.push_back(rec);
    if (options.record_iterates) report.updated_iterates.push_back(h_next);

    if (check_convergence(state, config, fluid_out.subproblem_converged,
                          structure_out.subproblem_converged) &&
        secondary_rel <= config.eps_coupling) {
      report.iterations = k;
      report.final_residual_rel = state.residual_norm_rel;
      report.final_secondary_rel = secondary_rel;
      update.end_step();
      fluid.commit();
      structure.commit();
      fields.traction_seed = h_next;  // h^1 of the next time step
      fields.previous_deformation = fields.committed_deformation;
      fields.committed_deformation = d;
      return report;
    }

    h = h_next;
    d_previous = d;
  }
  throw MaxIterationsExceeded("rn step: coupling iteration cap reached",
                              config.max_coupling_iterations);
}

// ---------------------------------------------------------------------------
// Whole-run driver over a coupled problem.
// ---------------------------------------------------------------------------

/// Committed-state diagnostics a problem exposes after each time step.
struct InterfaceKinematics {
  Vector structure_velocity;
  Vector fluid_velocity;
  Vector quadrature_weights;
  double net_volume_rate = 0.0;
  double mass_audit_rel = 0.0;
};

struct TrajectorySample {
  double t = 0.0;
  std::vector<double> values;

  friend bool operator==(const TrajectorySample&, const TrajectorySample&) = default;
};

class CoupledProblem {
public:
  virtual ~CoupledProblem() = default;
  virtual SolverAdapter& fluid() = 0;
  virtual SolverAdapter& structure() = 0;
  virtual std::size_t interface_size() const = 0;
  virtual Vector initial_deformation() const { return Vector(interface_size()); }
  virtual Vector initial_traction() const { return Vector(interface_size()); }
  virtual double initial_volume() const { return 1.0; }
  virtual InterfaceKinematics interface_kinematics() const {
    InterfaceKinematics kin;
    kin.structure_velocity = Vector(interface_size());
    kin.fluid_velocity = Vector(interface_size());
    kin.quadrature_weights = Vector(interface_size());
    return kin;
  }
  virtual TrajectorySample trajectory_sample(double t) const { return {t, {}}; }
};

enum class SchemeKind { Dn, DnQnS, DnQnF, Rn, RnQn };

inline const char* scheme_name(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::Dn: return "dn";
    case SchemeKind::DnQnS: return "dn_qn_s";
    case SchemeKind::DnQnF: return "dn_qn_f";
    case SchemeKind::Rn: return "rn";
    case SchemeKind::RnQn: return "rn_qn";
  }
  return "unknown";
}

enum class TerminationStatus { Completed, Diverged, Dilemma };

struct RunReport {
  std::vector<int> per_step_iterations;
  double mean_iterations = 0.0;
  int max_iterations = 0;
  double eps_rel = 0.0;
  TerminationStatus termination = TerminationStatus::Completed;
  int failing_step = 0;  // 1-based; 0 when completed
  std::string failure_reason;
  std::vector<TrajectorySample> trajectory;
  double mass_audit_max_rel = 0.0;
  std::vector<TimeStepReport> step_details;  // only when requested

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

struct SimulationOptions {
  double robin_parameter = 0.0;  // required for Rn / RnQn
  int trajectory_stride = 1;
  bool record_step_details = false;
  bool record_iterates = false;
};

inline RunReport run_simulation(CoupledProblem& problem, SchemeKind scheme,
                                accel::UpdateStrategy& update, const ConvergenceConfig& config,
                                int n_steps, double dt, const SimulationOptions& options = {}) {
  if (n_steps < 1) throw ParameterError("run_simulation: n_steps must be >= 1");
  if (!(dt > 0.0)) throw ParameterError("run_simulation: dt must be > 0");
  config.validate();

  CouplingFields fields;
  fields.traction_seed = problem.initial_traction();
  fields.committed_deformation = problem.initial_deformation();
  fields.previous_deformation = fields.committed_deformation;

  metrics::FluxAccumulator flux(problem.initial_volume());
  RunReport report;

  for (int n = 0; n < n_steps; ++n) {
    const TimeContext ctx{(n + 1) * dt, dt, n};
    const StepOptions step_options{options.record_iterates};
    TimeStepReport step;
    try {
      switch (scheme) {
        case SchemeKind::Dn:
        case SchemeKind::DnQnS:
          step = run_dn_step(problem.fluid(), problem.structure(), update, fields, config, ctx,
                             step_options);
          break;
        case SchemeKind::DnQnF:
          step = run_dn_forces_step(problem.fluid(), problem.structure(), update, fields, config,
                                    ctx, step_options);
          break;
        case SchemeKind::Rn:
        case SchemeKind::RnQn:
          step = run_rn_step(problem.fluid(), problem.structure(), options.robin_parameter, update,
                             fields, config, ctx, step_options);
          break;
      }
    } catch (const IncompressibilityDilemma& err) {
      report.termination = TerminationStatus::Dilemma;
      report.failing_step = n + 1;
      report.failure_reason = err.what();
      break;
    } catch (const MaxIterationsExceeded& err) {
      report.termination = TerminationStatus::Diverged;
      report.failing_step = n + 1;
      report.failure_reason = err.what();
      break;
    } catch (const SolverDiverged& err) {
      report.termination = TerminationStatus::Diverged;
      report.failing_step = n + 1;
      report.failure_reason = err.what();
      break;
    } catch (const NonFiniteError& err) {
      report.termination = TerminationStatus::Diverged;
      report.failing_step = n + 1;
      report.failure_reason = err.what();
      break;
    } catch (const NonPhysical& err) {
      report.termination = TerminationStatus::Diverged;
      report.failing_step = n + 1;
      report.failure_reason = err.what();
      break;
    }

    report.per_step_iterations.push_back(step.iterations);
    if (options.record_step_details) report.step_details.push_back(step);

    const InterfaceKinematics kin = problem.interface_kinematics();
    const double rate = metrics::artificial_flux_rate(kin.structure_velocity, kin.fluid_velocity,
                                                      kin.quadrature_weights);
    flux = metrics::accumulate_eps_rel(flux, rate, kin.net_volume_rate, dt);
    report.eps_rel = flux.eps_rel;
    report.mass_audit_max_rel = std::max(report.mass_audit_max_rel, kin.mass_audit_rel);

    if (options.trajectory_stride > 0 &&
        ((n + 1) % options.trajectory_stride == 0 || n + 1 == n_steps)) {
      report.trajectory.push_back(problem.trajectory_sample(ctx.t_new));
    }
  }

  const metrics::IterationStats stats = metrics::IterationStats::from(report.per_step_iterations);
  report.mean_iterations = stats.mean;
  report.max_iterations = stats.max;
  return report;
}

}  // namespace fsilab::schemes

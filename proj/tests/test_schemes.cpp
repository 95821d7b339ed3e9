#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fsilab/models.hpp"
#include "fsilab/schemes.hpp"

using namespace fsilab;
using namespace fsilab::schemes;
using models::AffineProblem;
using models::AffineProblemConfig;
using models::BalloonConfig;
using models::BalloonProblem;
using models::TubeConfig;
using models::TubeProblem;

namespace {

AffineProblemConfig contraction_config(double factor) {
  // S = I, F = factor * I: composed spectral radius = |factor|
  AffineProblemConfig cfg;
  cfg.a_structure = Matrix::identity(2);
  cfg.b_structure = Vector{0.0, 0.0};
  cfg.a_fluid = Matrix(2, 2);
  cfg.a_fluid(0, 0) = factor;
  cfg.a_fluid(1, 1) = factor;
  cfg.b_fluid = Vector{1.0, -0.5};
  return cfg;
}

BalloonConfig balloon_config() {
  BalloonConfig cfg;
  cfg.inflow = [](double t) { return 0.2 * std::sin(M_PI * t); };
  return cfg;
}

TubeConfig tube_config(bool closed) {
  TubeConfig cfg;
  cfg.cells = 8;
  cfg.closed_outlet = closed;
  return cfg;
}

/// Counts solver invocations to pin the reported iteration semantics.
class CountingAdapter final : public SolverAdapter {
public:
  explicit CountingAdapter(SolverAdapter& inner) : inner_(inner) {}
  BoundaryOutput solve(const BoundaryData& input, const TimeContext& ctx) override {
    ++calls;
    return inner_.solve(input, ctx);
  }
  void commit() override { inner_.commit(); }
  int calls = 0;

private:
  SolverAdapter& inner_;
};

CouplingFields zero_fields(std::size_t m) {
  return CouplingFields{Vector(m), Vector(m), Vector(m)};
}

}  // namespace

TEST_CASE("check_convergence requires both criteria") {
  ConvergenceConfig config;
  config.eps_coupling = 1e-6;
  CouplingState state;

  state.residual_norm_rel = 0.0;
  CHECK(check_convergence(state, config, true, true));
  CHECK(state.criterion_i_met);
  CHECK(state.criterion_ii_met);

  state.residual_norm_rel = 1e-9;
  CHECK_FALSE(check_convergence(state, config, false, true));
  CHECK(state.criterion_i_met);
  CHECK_FALSE(state.criterion_ii_met);

  state.residual_norm_rel = 1e-5;
  CHECK_FALSE(check_convergence(state, config, true, true));
  CHECK_FALSE(state.criterion_i_met);
}

TEST_CASE("plain relaxation converges on a contraction within the documented budget") {
  AffineProblem problem(contraction_config(0.5));
  accel::RelaxUpdate update(1.0);
  ConvergenceConfig config;
  config.eps_coupling = 1e-6;

  CouplingFields fields = zero_fields(2);
  const TimeContext ctx{0.1, 0.1, 0};
  const TimeStepReport report =
      run_dn_step(problem.fluid(), problem.structure(), update, fields, config, ctx);
  CHECK(report.iterations <= 45);
  CHECK(report.final_residual_rel <= 1e-6);

  const Vector d_star = models::affine_fixed_point(contraction_config(0.5));
  CHECK((fields.committed_deformation - d_star).norm2() <= 1e-5 * std::max(d_star.norm2(), 1.0));
}

TEST_CASE("dn with ils reaches machine-level residuals in m + 2 iterations") {
  AffineProblemConfig cfg = contraction_config(0.5);
  cfg.a_fluid(0, 1) = 0.4;  // non-diagonal coupling
  AffineProblem problem(cfg);
  accel::IlsUpdate update(0.1, 1e-8);
  ConvergenceConfig config;
  config.eps_coupling = 1e-13;
  config.max_coupling_iterations = 20;

  CouplingFields fields = zero_fields(2);
  const TimeContext ctx{0.1, 0.1, 0};
  const TimeStepReport report = run_dn_step(problem.fluid(), problem.structure(), update, fields,
                                            config, ctx, StepOptions{true});
  double best = 1.0;
  const std::size_t budget = std::min<std::size_t>(report.history.size(), 2 + 2);
  for (std::size_t i = 0; i < budget; ++i) best = std::min(best, report.history[i].residual_abs);
  CHECK(best <= 1e-12);
}

TEST_CASE("deformation and force variants agree on the interface fixed point") {
  AffineProblemConfig cfg = contraction_config(0.7);
  cfg.a_fluid(1, 0) = -0.3;
  cfg.b_structure = Vector{0.4, 0.1};

  ConvergenceConfig config;
  config.eps_coupling = 1e-10;

  AffineProblem problem_s(cfg);
  accel::IlsUpdate update_s(0.1, 1e-8);
  CouplingFields fields_s = zero_fields(2);
  run_dn_step(problem_s.fluid(), problem_s.structure(), update_s, fields_s, config,
              TimeContext{0.1, 0.1, 0});

  AffineProblem problem_f(cfg);
  accel::IlsUpdate update_f(0.1, 1e-8);
  CouplingFields fields_f = zero_fields(2);
  run_dn_forces_step(problem_f.fluid(), problem_f.structure(), update_f, fields_f, config,
                     TimeContext{0.1, 0.1, 0});

  CHECK((fields_s.committed_deformation - fields_f.committed_deformation).norm2() <=
        1e-8 * std::max(fields_s.committed_deformation.norm2(), 1.0));
  CHECK((fields_s.traction_seed - fields_f.traction_seed).norm2() <=
        1e-8 * std::max(fields_s.traction_seed.norm2(), 1.0));
}

TEST_CASE("iterations reported equal fluid solver calls") {
  AffineProblem problem(contraction_config(0.5));
  CountingAdapter counted_fluid(problem.fluid());
  CountingAdapter counted_structure(problem.structure());
  accel::RelaxUpdate update(1.0);
  ConvergenceConfig config;
  config.eps_coupling = 1e-6;

  CouplingFields fields = zero_fields(2);
  const TimeStepReport report =
      run_dn_step(counted_fluid, counted_structure, update, fields, config, TimeContext{0.1, 0.1, 0});
  CHECK(counted_fluid.calls == report.iterations);
  CHECK(counted_structure.calls == report.iterations);
}

TEST_CASE("expanding maps overwhelm plain relaxation but not the quasi-newton update") {
  AffineProblemConfig cfg = contraction_config(1.3);  // spectral radius 1.3

  SUBCASE("relaxation with omega = 1 diverges") {
    AffineProblem problem(cfg);
    accel::RelaxUpdate update(1.0);
    ConvergenceConfig config;
    config.eps_coupling = 1e-6;
    config.max_coupling_iterations = 400;
    const RunReport report = run_simulation(problem, SchemeKind::Dn, update, config, 1, 0.1);
    CHECK(report.termination == TerminationStatus::Diverged);
  }

  SUBCASE("ils still converges") {
    AffineProblem problem(cfg);
    accel::IlsUpdate update(0.1, 1e-8);
    ConvergenceConfig config;
    config.eps_coupling = 1e-10;
    const RunReport report = run_simulation(problem, SchemeKind::DnQnS, update, config, 1, 0.1);
    CHECK(report.termination == TerminationStatus::Completed);
    CHECK(report.per_step_iterations.front() <= 6);
  }
}

TEST_CASE("the balloon rejects every dirichlet-neumann variant at step one") {
  for (SchemeKind scheme : {SchemeKind::Dn, SchemeKind::DnQnS, SchemeKind::DnQnF}) {
    BalloonProblem problem(balloon_config());
    accel::IlsUpdate update(0.1, 1e-8);
    ConvergenceConfig config;
    const RunReport report = run_simulation(problem, scheme, update, config, 10, 0.01);
    CHECK(report.termination == TerminationStatus::Dilemma);
    CHECK(report.failing_step == 1);
  }
}

TEST_CASE("balloon rn_qn completes and satisfies the robin closure identity") {
  BalloonProblem problem(balloon_config());
  accel::ImvlsUpdate update(0.1, 1e-8, 8);
  ConvergenceConfig config;
  SimulationOptions options;
  options.robin_parameter = 1e4;
  options.record_step_details = true;

  const RunReport report =
      run_simulation(problem, SchemeKind::RnQn, update, config, 20, 0.01, options);
  REQUIRE(report.termination == TerminationStatus::Completed);
  CHECK(report.per_step_iterations.size() == 20);

  const InterfaceKinematics kin = problem.interface_kinematics();
  const double mismatch = std::abs(kin.structure_velocity[0] - kin.fluid_velocity[0]);
  const double exit_abs = report.step_details.back().history.back().residual_abs;
  CHECK(mismatch * options.robin_parameter <= exit_abs * (1.0 + 1e-9) + 1e-12);
}

TEST_CASE("tube rn convergence obeys the robin closure identity pointwise") {
  // at exit the structure used the same deformation the fluid saw, so the
  // velocity mismatch per cell is exactly (p - h_fed_back) / alpha, bounded
  // by the final traction increment over alpha
  TubeProblem problem(tube_config(true), 1e-10);
  accel::ImvlsUpdate update(0.1, 1e-8, 8);
  ConvergenceConfig config;
  SimulationOptions options;
  options.robin_parameter = 1e5;
  options.record_step_details = true;
  const RunReport report =
      run_simulation(problem, SchemeKind::RnQn, update, config, 15, 2.5e-5, options);
  REQUIRE(report.termination == TerminationStatus::Completed);

  const InterfaceKinematics kin = problem.interface_kinematics();
  const double exit_abs = report.step_details.back().history.back().residual_abs;
  double mismatch = 0.0;
  for (std::size_t i = 0; i < kin.structure_velocity.size(); ++i) {
    mismatch = std::max(mismatch,
                        std::abs(kin.structure_velocity[i] - kin.fluid_velocity[i]));
  }
  CHECK(mismatch * options.robin_parameter <= exit_abs * (1.0 + 1e-9) + 1e-12);
}

TEST_CASE("plain rn iteration counts grow as the robin parameter shrinks") {
  std::vector<double> alphas{3000.0, 1500.0, 700.0};
  std::vector<double> means;
  for (double alpha : alphas) {
    BalloonProblem problem(balloon_config());
    accel::IdentityUpdate update;
    ConvergenceConfig config;
    SimulationOptions options;
    options.robin_parameter = alpha;
    const RunReport report =
        run_simulation(problem, SchemeKind::Rn, update, config, 3, 0.01, options);
    REQUIRE(report.termination == TerminationStatus::Completed);
    means.push_back(report.mean_iterations);
  }
  CHECK(means[0] < means[1]);
  CHECK(means[1] < means[2]);
}

TEST_CASE("rn at an extreme robin parameter matches the dn force fixed point") {
  // the coupling residual floor scales with alpha times the inner solver
  // tolerance, so the bound here follows the weak-Dirichlet limit at 1e-6
  ConvergenceConfig config;
  config.eps_coupling = 1e-7;

  TubeProblem tube_rn(tube_config(false), config.eps_problem);
  accel::ImvlsUpdate update_rn(0.1, 1e-8, 8);
  SimulationOptions options_rn;
  options_rn.robin_parameter = 1e12;
  const RunReport rn_report =
      run_simulation(tube_rn, SchemeKind::RnQn, update_rn, config, 1, 2.5e-5, options_rn);
  REQUIRE(rn_report.termination == TerminationStatus::Completed);

  TubeProblem tube_dn(tube_config(false), config.eps_problem);
  accel::ImvlsUpdate update_dn(0.1, 1e-8, 8);
  const RunReport dn_report =
      run_simulation(tube_dn, SchemeKind::DnQnF, update_dn, config, 1, 2.5e-5);
  REQUIRE(dn_report.termination == TerminationStatus::Completed);

  const Vector& p_rn = tube_rn.committed_pressure();
  const Vector& p_dn = tube_dn.committed_pressure();
  CHECK((p_rn - p_dn).norm2() <= 1e-6 * std::max(p_dn.norm2(), 1.0));
}

TEST_CASE("run_simulation validates its preconditions") {
  AffineProblem problem(contraction_config(0.5));
  accel::RelaxUpdate update(0.5);
  ConvergenceConfig config;
  CHECK_THROWS_AS(run_simulation(problem, SchemeKind::Dn, update, config, 0, 0.1), ParameterError);
  CHECK_THROWS_AS(run_simulation(problem, SchemeKind::Dn, update, config, 1, 0.0), ParameterError);
}

TEST_CASE("identical configurations yield identical reports") {
  auto make_report = [] {
    BalloonProblem problem(balloon_config());
    accel::ImvlsUpdate update(0.1, 1e-8, 8);
    ConvergenceConfig config;
    SimulationOptions options;
    options.robin_parameter = 1e4;
    options.trajectory_stride = 2;
    return run_simulation(problem, SchemeKind::RnQn, update, config, 12, 0.01, options);
  };
  const RunReport a = make_report();
  const RunReport b = make_report();
  CHECK(a == b);
  CHECK(a.termination == TerminationStatus::Completed);
}

TEST_CASE("tube rn_qn run satisfies the mass audit at every committed step") {
  TubeProblem problem(tube_config(true), 1e-10);
  accel::ImvlsUpdate update(0.1, 1e-8, 8);
  ConvergenceConfig config;
  SimulationOptions options;
  options.robin_parameter = 1e5;
  const RunReport report =
      run_simulation(problem, SchemeKind::RnQn, update, config, 25, 2.5e-5, options);
  REQUIRE(report.termination == TerminationStatus::Completed);
  CHECK(report.mass_audit_max_rel <= 10.0 * config.eps_problem);
}

TEST_CASE("a converged dn run carries only staggered-exit artificial flux") {
  const TubeConfig cfg = tube_config(false);
  TubeProblem problem(cfg, 1e-10);
  accel::IlsUpdate update(0.01, 1e-8);
  ConvergenceConfig config;
  const int n_steps = 40;
  const RunReport report =
      run_simulation(problem, SchemeKind::DnQnS, update, config, n_steps, 2.5e-5);
  REQUIRE(report.termination == TerminationStatus::Completed);
  const double interface_measure = 2.0 * M_PI * cfg.initial_radius * cfg.length;
  const double v0 = M_PI * cfg.initial_radius * cfg.initial_radius * cfg.length;
  CHECK(report.eps_rel <= 10.0 * config.eps_coupling * n_steps * interface_measure / v0);
}

TEST_CASE("dn converged tube step keeps the deformation fields kinematically continuous") {
  TubeProblem problem(tube_config(false), 1e-10);
  accel::ImvlsUpdate update(0.1, 1e-8, 8);
  ConvergenceConfig config;
  SimulationOptions options;
  options.record_step_details = true;
  const RunReport report =
      run_simulation(problem, SchemeKind::DnQnS, update, config, 5, 2.5e-5, options);
  REQUIRE(report.termination == TerminationStatus::Completed);
  for (const TimeStepReport& step : report.step_details) {
    CHECK(step.final_residual_rel <= config.eps_coupling);
    CHECK(step.final_secondary_rel <= config.eps_coupling);
  }
}

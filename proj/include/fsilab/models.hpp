#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fsilab/densela.hpp"
#include "fsilab/errors.hpp"
#include "fsilab/schemes.hpp"

// Desk-scale solver adapters: a synthetic affine fixed-point problem, a 0-D
// enclosed inflating balloon, and a 1-D flexible tube with open or closed
// outlet. Structure walls follow the thin-ring hoop law k_s = E_s s / R0^2;
// time integration is backward Euler throughout.

namespace fsilab::models {

// ---------------------------------------------------------------------------
// Synthetic affine problem: S(h) = A_s h + b_s, F(d) = A_f d + b_f.
// ---------------------------------------------------------------------------

struct AffineProblemConfig {
  Matrix a_structure;
  Vector b_structure;
  Matrix a_fluid;
  Vector b_fluid;

  void validate() const {
    const std::size_t m = b_structure.size();
    if (a_structure.rows() != m || a_structure.cols() != m || a_fluid.rows() != m ||
        a_fluid.cols() != m || b_fluid.size() != m || m == 0) {
      throw ParameterError("affine config: matrices and offsets must share one square size");
    }
    a_structure.validate();
    a_fluid.validate();
    b_structure.validate();
    b_fluid.validate();
  }
};

class AffineProblem final : public schemes::CoupledProblem {
public:
  explicit AffineProblem(AffineProblemConfig config)
      : config_(std::move(config)), fluid_adapter_(*this), structure_adapter_(*this) {
    config_.validate();
  }

  schemes::SolverAdapter& fluid() override { return fluid_adapter_; }
  schemes::SolverAdapter& structure() override { return structure_adapter_; }
  std::size_t interface_size() const override { return config_.b_structure.size(); }

private:
  class FluidAdapter final : public schemes::SolverAdapter {
  public:
    explicit FluidAdapter(AffineProblem& p) : p_(p) {}
    schemes::BoundaryOutput solve(const schemes::BoundaryData& input,
                                  const schemes::TimeContext&) override {
      if (input.kind != schemes::BoundaryData::Kind::Dirichlet) {
        throw ParameterError("affine fluid supports Dirichlet input only");
      }
      return {p_.config_.a_fluid.apply(input.deformation) + p_.config_.b_fluid, true};
    }
    void commit() override {}

  private:
    AffineProblem& p_;
  };

  class StructureAdapter final : public schemes::SolverAdapter {
  public:
    explicit StructureAdapter(AffineProblem& p) : p_(p) {}
    schemes::BoundaryOutput solve(const schemes::BoundaryData& input,
                                  const schemes::TimeContext&) override {
      if (input.kind != schemes::BoundaryData::Kind::Neumann) {
        throw ParameterError("affine structure supports Neumann input only");
      }
      return {p_.config_.a_structure.apply(input.traction) + p_.config_.b_structure, true};
    }
    void commit() override {}

  private:
    AffineProblem& p_;
  };

  AffineProblemConfig config_;
  FluidAdapter fluid_adapter_;
  StructureAdapter structure_adapter_;
};

/// Directly solves for the coupled affine fixed point of the deformation,
/// d* = (I - A_s A_f)^{-1} (A_s b_f + b_s), by Gaussian elimination.
/// Independent of the coupling loops; used as a test oracle.
inline Vector affine_fixed_point(const AffineProblemConfig& config) {
  config.validate();
  const std::size_t m = config.b_structure.size();
  Matrix lhs(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    Vector col(m);
    col[j] = 1.0;
    const Vector as_af_col = config.a_structure.apply(config.a_fluid.apply(col));
    for (std::size_t i = 0; i < m; ++i) lhs(i, j) = (i == j ? 1.0 : 0.0) - as_af_col[i];
  }
  Vector rhs = config.a_structure.apply(config.b_fluid) + config.b_structure;

  // partial-pivot elimination
  std::vector<std::size_t> perm(m);
  for (std::size_t i = 0; i < m; ++i) perm[i] = i;
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(lhs(r, col)) > std::abs(lhs(pivot, col))) pivot = r;
    }
    if (lhs(pivot, col) == 0.0) throw RankDeficient("affine_fixed_point: singular I - A_s A_f");
    if (pivot != col) {
      for (std::size_t j = 0; j < m; ++j) std::swap(lhs(col, j), lhs(pivot, j));
      std::swap(rhs[col], rhs[pivot]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      const double f = lhs(r, col) / lhs(col, col);
      for (std::size_t j = col; j < m; ++j) lhs(r, j) -= f * lhs(col, j);
      rhs[r] -= f * rhs[col];
    }
  }
  Vector x(m);
  for (std::size_t i = m; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t j = i + 1; j < m; ++j) s -= lhs(i, j) * x[j];
    x[i] = s / lhs(i, i);
  }
  return x;
}

// ---------------------------------------------------------------------------
// 0-D inflating balloon: ring wall around an enclosed incompressible fluid
// fed by a prescribed net inflow Q_in(t).
// ---------------------------------------------------------------------------

struct BalloonConfig {
  double initial_radius = 0.28;
  double structure_density = 1000.0;
  double wall_thickness = 0.02;
  double youngs_modulus = 1.4e6;
  std::function<double(double)> inflow;  // Q_in(t), volume rate

  double hoop_stiffness() const {
    return youngs_modulus * wall_thickness / (initial_radius * initial_radius);
  }

  void validate() const {
    if (!(initial_radius > 0.0) || !(structure_density > 0.0) || !(wall_thickness > 0.0) ||
        !(youngs_modulus > 0.0)) {
      throw ParameterError("balloon config: physical parameters must be > 0");
    }
    if (!inflow) throw ParameterError("balloon config: inflow function missing");
  }
};

class BalloonProblem final : public schemes::CoupledProblem {
public:
  explicit BalloonProblem(BalloonConfig config)
      : config_(std::move(config)), fluid_adapter_(*this), structure_adapter_(*this) {
    config_.validate();
    committed_ = State{config_.initial_radius, 0.0, 0.0, 0.0};
    previous_ = committed_;
    work_ = committed_;
  }

  schemes::SolverAdapter& fluid() override { return fluid_adapter_; }
  schemes::SolverAdapter& structure() override { return structure_adapter_; }
  std::size_t interface_size() const override { return 1; }

  double initial_volume() const override {
    return M_PI * config_.initial_radius * config_.initial_radius;
  }

  schemes::InterfaceKinematics interface_kinematics() const override {
    schemes::InterfaceKinematics kin;
    kin.structure_velocity = Vector{committed_.radial_velocity};
    kin.fluid_velocity = Vector{committed_.fluid_velocity};
    kin.quadrature_weights = Vector{2.0 * M_PI * committed_.radius};
    const double v_now = M_PI * committed_.radius * committed_.radius;
    const double v_prev = M_PI * previous_.radius * previous_.radius;
    kin.net_volume_rate = last_dt_ > 0.0 ? (v_now - v_prev) / last_dt_ : 0.0;
    return kin;
  }

  schemes::TrajectorySample trajectory_sample(double t) const override {
    return {t, {committed_.radius}};
  }

  double committed_radius() const { return committed_.radius; }
  double committed_pressure() const { return committed_.pressure; }

private:
  struct State {
    double radius = 0.0;
    double radial_velocity = 0.0;
    double pressure = 0.0;
    double fluid_velocity = 0.0;
  };

  void begin_step_if_new(const schemes::TimeContext& ctx) {
    if (ctx.step_index > last_started_step_) {
      previous_ = committed_;
      last_started_step_ = ctx.step_index;
    }
    last_dt_ = ctx.dt;
  }

  class StructureAdapter final : public schemes::SolverAdapter {
  public:
    explicit StructureAdapter(BalloonProblem& p) : p_(p) {}

    // Backward-Euler step of rho_s s Rdotdot + k_s (R - R0) = p.
    schemes::BoundaryOutput solve(const schemes::BoundaryData& input,
                                  const schemes::TimeContext& ctx) override {
      if (input.kind != schemes::BoundaryData::Kind::Neumann || input.traction.size() != 1) {
        throw ParameterError("balloon structure expects a scalar Neumann traction");
      }
      if (!(ctx.dt > 0.0)) throw ParameterError("balloon structure: dt must be > 0");
      p_.begin_step_if_new(ctx);
      const BalloonConfig& c = p_.config_;
      const double mass = c.structure_density * c.wall_thickness;
      const double k_s = c.hoop_stiffness();
      const double denom = mass / (ctx.dt * ctx.dt) + k_s;
      const State& prev = p_.committed_;
      const double r_new = (input.traction[0] + k_s * c.initial_radius +
                            mass * (prev.radius / (ctx.dt * ctx.dt) + prev.radial_velocity / ctx.dt)) /
                           denom;
      if (!(r_new > 0.0)) throw NonPhysical("balloon structure: radius driven to or below zero");
      p_.work_.radius = r_new;
      p_.work_.radial_velocity = (r_new - prev.radius) / ctx.dt;
      return {Vector{r_new - c.initial_radius}, true};
    }

    void commit() override {
      p_.committed_.radius = p_.work_.radius;
      p_.committed_.radial_velocity = p_.work_.radial_velocity;
    }

  private:
    BalloonProblem& p_;
  };

  class FluidAdapter final : public schemes::SolverAdapter {
  public:
    explicit FluidAdapter(BalloonProblem& p) : p_(p) {}

    // Enclosed incompressible fluid: the interface velocity is fixed by the
    // mass constraint 2 pi R u_f = Q_in(t); the Robin condition then yields
    // the pressure, p = h_prev + alpha (u_f - Rdot_s).
    schemes::BoundaryOutput solve(const schemes::BoundaryData& input,
                                  const schemes::TimeContext& ctx) override {
      if (input.kind == schemes::BoundaryData::Kind::Dirichlet) {
        throw IncompressibilityDilemma(
            "balloon fluid: enclosed incompressible fluid rejects a pure Dirichlet interface");
      }
      if (input.kind != schemes::BoundaryData::Kind::Robin) {
        throw ParameterError("balloon fluid expects a Robin interface");
      }
      if (input.deformation.size() != 1 || input.deformation_rate.size() != 1 ||
          input.traction.size() != 1) {
        throw ParameterError("balloon fluid expects scalar interface fields");
      }
      p_.begin_step_if_new(ctx);
      const double radius = p_.config_.initial_radius + input.deformation[0];
      if (!(radius > 0.0)) throw NonPhysical("balloon fluid: non-positive radius");
      const double u_f = p_.config_.inflow(ctx.t_new) / (2.0 * M_PI * radius);
      const double pressure =
          input.traction[0] + input.robin_parameter * (u_f - input.deformation_rate[0]);
      check_finite(pressure, "balloon fluid pressure");
      p_.work_.pressure = pressure;
      p_.work_.fluid_velocity = u_f;
      return {Vector{pressure}, true};
    }

    void commit() override {
      p_.committed_.pressure = p_.work_.pressure;
      p_.committed_.fluid_velocity = p_.work_.fluid_velocity;
    }

  private:
    BalloonProblem& p_;
  };

  BalloonConfig config_;
  State committed_, previous_, work_;
  int last_started_step_ = -1;
  double last_dt_ = 0.0;
  FluidAdapter fluid_adapter_;
  StructureAdapter structure_adapter_;
};

// ---------------------------------------------------------------------------
// 1-D flexible tube: finite-volume flow in a compliant channel whose wall is
// a chain of independent rings, excited by a short inflow pulse.
// ---------------------------------------------------------------------------

struct TubeConfig {
  double length = 0.05;
  int cells = 16;
  double initial_radius = 0.005;
  double wall_thickness = 0.001;
  double fluid_density = 1000.0;
  double structure_density = 1000.0;
  double dynamic_viscosity = 0.003;
  double youngs_modulus = 3.0e5;
  double poisson_ratio = 0.3;  // stored for reporting; the ring law has no Poisson coupling
  bool closed_outlet = false;
  double pulse_amplitude = 3.75;
  double pulse_period = 0.003;

  double dx() const { return length / cells; }

  double hoop_stiffness() const {
    return youngs_modulus * wall_thickness / (initial_radius * initial_radius);
  }

  double u_pulse(double t) const {
    if (t > pulse_period) return 0.0;
    return pulse_amplitude * (1.0 - std::cos(2.0 * M_PI * t / pulse_period));
  }

  /// Section mean of the parabolic inlet profile.
  double inlet_velocity(double t) const { return 0.5 * u_pulse(t); }

  void validate() const {
    if (cells < 4) throw ParameterError("tube config: need at least 4 cells");
    if (!(length > 0.0) || !(initial_radius > 0.0) || !(wall_thickness > 0.0) ||
        !(fluid_density > 0.0) || !(structure_density > 0.0) || !(dynamic_viscosity > 0.0) ||
        !(youngs_modulus > 0.0) || !(pulse_amplitude > 0.0) || !(pulse_period > 0.0)) {
      throw ParameterError("tube config: physical parameters must be > 0");
    }
  }
};

class TubeProblem final : public schemes::CoupledProblem {
public:
  explicit TubeProblem(TubeConfig config, double eps_problem = 1e-10)
      : config_(std::move(config)),
        eps_problem_(eps_problem),
        fluid_adapter_(*this),
        structure_adapter_(*this) {
    config_.validate();
    if (!(eps_problem_ > 0.0)) throw ParameterError("tube: eps_problem must be > 0");
    const std::size_t n = static_cast<std::size_t>(config_.cells);
    committed_ = State{Vector(n), Vector(n), Vector(n + 1), Vector(n), Vector(n)};
    previous_ = committed_;
    work_ = committed_;
  }

  schemes::SolverAdapter& fluid() override { return fluid_adapter_; }
  schemes::SolverAdapter& structure() override { return structure_adapter_; }
  std::size_t interface_size() const override { return static_cast<std::size_t>(config_.cells); }

  double initial_volume() const override {
    return M_PI * config_.initial_radius * config_.initial_radius * config_.length;
  }

  schemes::InterfaceKinematics interface_kinematics() const override {
    const std::size_t n = interface_size();
    schemes::InterfaceKinematics kin;
    kin.structure_velocity = committed_.wall_velocity;
    kin.fluid_velocity = committed_.fluid_wall_velocity;
    kin.quadrature_weights = Vector(n);
    for (std::size_t i = 0; i < n; ++i) {
      kin.quadrature_weights[i] =
          2.0 * M_PI * (config_.initial_radius + committed_.wall_displacement[i]) * config_.dx();
    }
    kin.net_volume_rate =
        last_dt_ > 0.0 ? (volume_of(committed_.wall_displacement) - volume_of(previous_.wall_displacement)) / last_dt_
                       : 0.0;
    kin.mass_audit_rel = committed_audit_rel_;
    return kin;
  }

  schemes::TrajectorySample trajectory_sample(double t) const override {
    std::vector<double> values;
    values.reserve(2 * interface_size());
    for (std::size_t i = 0; i < interface_size(); ++i) values.push_back(committed_.pressure[i]);
    for (std::size_t i = 0; i < interface_size(); ++i)
      values.push_back(committed_.wall_displacement[i]);
    return {t, values};
  }

  const Vector& committed_pressure() const { return committed_.pressure; }
  const Vector& committed_displacement() const { return committed_.wall_displacement; }
  const Vector& committed_face_velocity() const { return committed_.face_velocity; }
  double committed_mass_audit_rel() const { return committed_audit_rel_; }

  double volume_of(const Vector& w) const {
    double v = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double r = config_.initial_radius + w[i];
      v += M_PI * r * r * config_.dx();
    }
    return v;
  }

private:
  struct State {
    Vector wall_displacement;     // w
    Vector wall_velocity;         // wdot
    Vector face_velocity;         // u on the n+1 faces
    Vector pressure;              // p
    Vector fluid_wall_velocity;   // wall-normal fluid velocity
  };

  void begin_step_if_new(const schemes::TimeContext& ctx) {
    if (ctx.step_index > last_started_step_) {
      previous_ = committed_;
      last_started_step_ = ctx.step_index;
    }
    last_dt_ = ctx.dt;
  }

  class StructureAdapter final : public schemes::SolverAdapter {
  public:
    explicit StructureAdapter(TubeProblem& p) : p_(p) {}

    // Independent rings: rho_s s wdotdot_i + k_s w_i = p_i, backward Euler.
    schemes::BoundaryOutput solve(const schemes::BoundaryData& input,
                                  const schemes::TimeContext& ctx) override {
      if (input.kind != schemes::BoundaryData::Kind::Neumann ||
          input.traction.size() != p_.interface_size()) {
        throw ParameterError("tube structure expects a per-cell Neumann traction");
      }
      if (!(ctx.dt > 0.0)) throw ParameterError("tube structure: dt must be > 0");
      p_.begin_step_if_new(ctx);
      const TubeConfig& c = p_.config_;
      const double mass = c.structure_density * c.wall_thickness;
      const double k_s = c.hoop_stiffness();
      const double denom = mass / (ctx.dt * ctx.dt) + k_s;
      const std::size_t n = p_.interface_size();
      Vector w(n), wdot(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double w_prev = p_.committed_.wall_displacement[i];
        const double wdot_prev = p_.committed_.wall_velocity[i];
        w[i] = (input.traction[i] + mass * (w_prev / (ctx.dt * ctx.dt) + wdot_prev / ctx.dt)) / denom;
        if (!(c.initial_radius + w[i] > 0.0)) {
          throw NonPhysical("tube structure: wall collapsed through the axis");
        }
        wdot[i] = (w[i] - w_prev) / ctx.dt;
      }
      w.validate();
      p_.work_.wall_displacement = w;
      p_.work_.wall_velocity = wdot;
      return {std::move(w), true};
    }

    void commit() override {
      p_.committed_.wall_displacement = p_.work_.wall_displacement;
      p_.committed_.wall_velocity = p_.work_.wall_velocity;
    }

  private:
    TubeProblem& p_;
  };

  class FluidAdapter final : public schemes::SolverAdapter {
  public:
    explicit FluidAdapter(TubeProblem& p) : p_(p) {}

    schemes::BoundaryOutput solve(const schemes::BoundaryData& input,
                                  const schemes::TimeContext& ctx) override {
      const bool robin = input.kind == schemes::BoundaryData::Kind::Robin;
      if (input.kind != schemes::BoundaryData::Kind::Dirichlet && !robin) {
        throw ParameterError("tube fluid expects a Dirichlet or Robin interface");
      }
      const std::size_t n = p_.interface_size();
      if (input.deformation.size() != n || input.deformation_rate.size() != n ||
          (robin && input.traction.size() != n)) {
        throw ParameterError("tube fluid: interface field dimension mismatch");
      }
      if (!(ctx.dt > 0.0)) throw ParameterError("tube fluid: dt must be > 0");
      p_.begin_step_if_new(ctx);
      p_.solve_flow(input, ctx);
      return {p_.work_.pressure, true};
    }

    void commit() override {
      p_.committed_.face_velocity = p_.work_.face_velocity;
      p_.committed_.pressure = p_.work_.pressure;
      p_.committed_.fluid_wall_velocity = p_.work_.fluid_wall_velocity;
      p_.committed_audit_rel_ = p_.work_audit_rel_;
    }

  private:
    TubeProblem& p_;
  };

  // ------------------------------------------------------------------
  // Staggered flow solver: velocities live on the N+1 cell faces,
  // pressures at the N cell centers. Compact face-to-face pressure
  // differences drive each face momentum balance, so the discrete system
  // carries no odd-even pressure mode. The inlet face holds the
  // prescribed pulse velocity; a closed outlet pins the last face to
  // zero, an open outlet sees ambient ghost pressure 0.
  // ------------------------------------------------------------------

  std::size_t velocity_unknowns() const {
    return interface_size() - 1 + (config_.closed_outlet ? 0 : 1);
  }

  struct FlowSetup {
    std::vector<double> area;       // cell areas from the structure input
    std::vector<double> area_prev;  // committed-step areas
    bool robin = false;
    double alpha = 0.0;
    double u_inlet = 0.0;
  };

  FlowSetup flow_setup(const schemes::BoundaryData& input, const schemes::TimeContext& ctx) const {
    const std::size_t n = interface_size();
    FlowSetup setup;
    setup.area.resize(n);
    setup.area_prev.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = config_.initial_radius + input.deformation[i];
      if (!(r > 0.0)) throw NonPhysical("tube fluid: non-positive radius from structure input");
      setup.area[i] = M_PI * r * r;
      const double r_prev = config_.initial_radius + committed_.wall_displacement[i];
      setup.area_prev[i] = M_PI * r_prev * r_prev;
    }
    setup.robin = input.kind == schemes::BoundaryData::Kind::Robin;
    setup.alpha = input.robin_parameter;
    setup.u_inlet = config_.inlet_velocity(ctx.t_new);
    return setup;
  }

  /// Full face-velocity vector from the unknowns, with prescribed entries.
  Vector assemble_faces(const FlowSetup& setup, const Vector& x) const {
    const std::size_t n = interface_size();
    Vector u(n + 1);
    u[0] = setup.u_inlet;
    for (std::size_t f = 1; f < n; ++f) u[f] = x[f - 1];
    u[n] = config_.closed_outlet ? 0.0 : x[n - 1];
    return u;
  }

  /// Donor-cell upwind mass flux phi_f = a_donor * u_f.
  double donor_area(const FlowSetup& setup, std::size_t face, const Vector& u) const {
    const std::size_t n = interface_size();
    if (face == 0) return setup.area[0];
    if (face == n) return setup.area[n - 1];
    return u[face] >= 0.0 ? setup.area[face - 1] : setup.area[face];
  }

  // Residual layout: rows 0..n-1 continuity, then one momentum row per
  // unknown face velocity. Unknowns x = [u_faces..., p_cells...].
  Vector flow_residual(const FlowSetup& setup, const Vector& x,
                       const schemes::BoundaryData& input, const schemes::TimeContext& ctx) const {
    const std::size_t n = interface_size();
    const std::size_t n_uf = velocity_unknowns();
    const double dx = config_.dx();
    const double rho = config_.fluid_density;
    const double friction = 8.0 * M_PI * config_.dynamic_viscosity / rho;

    const Vector u = assemble_faces(setup, x);
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = x[n_uf + i];

    std::vector<double> phi(n + 1);
    for (std::size_t f = 0; f <= n; ++f) phi[f] = donor_area(setup, f, u) * u[f];

    // momentum convective flux at cell centers, donated by the upwind face
    std::vector<double> phi_u(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double mean_flux = 0.5 * (phi[i] + phi[i + 1]);
      const std::size_t donor_face = mean_flux >= 0.0 ? i : i + 1;
      phi_u[i] = mean_flux * u[donor_face];
    }

    Vector res(n + n_uf);
    for (std::size_t i = 0; i < n; ++i) {
      double q_wall = 0.0;
      if (setup.robin) {
        const double perimeter = 2.0 * M_PI * (config_.initial_radius + input.deformation[i]);
        q_wall = -perimeter * (p[i] - input.traction[i]) / setup.alpha;
      }
      res[i] = (setup.area[i] - setup.area_prev[i]) / ctx.dt + (phi[i + 1] - phi[i]) / dx - q_wall;
    }

    for (std::size_t f = 1; f <= n_uf; ++f) {
      const std::size_t row = n + f - 1;
      const bool outlet = f == n;  // only reachable when open
      const double a_mean = outlet ? setup.area[n - 1] : 0.5 * (setup.area[f - 1] + setup.area[f]);
      const double a_mean_prev =
          outlet ? setup.area_prev[n - 1] : 0.5 * (setup.area_prev[f - 1] + setup.area_prev[f]);
      const double conv = outlet ? (phi[n] * u[n] - phi_u[n - 1]) / dx
                                 : (phi_u[f] - phi_u[f - 1]) / dx;
      const double p_right = outlet ? 0.0 : p[f];  // ambient ghost past the outlet
      res[row] = (a_mean * u[f] - a_mean_prev * committed_.face_velocity[f]) / ctx.dt + conv +
                 (a_mean / rho) * (p_right - p[f - 1]) / dx + friction * u[f];
    }
    return res;
  }

  Matrix flow_jacobian(const FlowSetup& setup, const Vector& x,
                       const schemes::BoundaryData& input, const schemes::TimeContext& ctx) const {
    const std::size_t n = interface_size();
    const std::size_t n_uf = velocity_unknowns();
    const double dx = config_.dx();
    const double rho = config_.fluid_density;
    const double friction = 8.0 * M_PI * config_.dynamic_viscosity / rho;

    const Vector u = assemble_faces(setup, x);
    std::vector<double> phi(n + 1), a_don(n + 1);
    for (std::size_t f = 0; f <= n; ++f) {
      a_don[f] = donor_area(setup, f, u);
      phi[f] = a_don[f] * u[f];
    }
    // face f is an unknown iff 1 <= f <= n_uf
    auto ucol = [&](std::size_t f) -> int {
      return (f >= 1 && f <= n_uf) ? static_cast<int>(f - 1) : -1;
    };

    std::vector<double> mean_flux(n);
    std::vector<std::size_t> donor_face(n);
    for (std::size_t i = 0; i < n; ++i) {
      mean_flux[i] = 0.5 * (phi[i] + phi[i + 1]);
      donor_face[i] = mean_flux[i] >= 0.0 ? i : i + 1;
    }

    Matrix jac(n + n_uf, n + n_uf);

    for (std::size_t i = 0; i < n; ++i) {
      const int right = ucol(i + 1);
      if (right >= 0) jac(i, right) += a_don[i + 1] / dx;
      const int left = ucol(i);
      if (left >= 0) jac(i, left) -= a_don[i] / dx;
      if (setup.robin) {
        const double perimeter = 2.0 * M_PI * (config_.initial_radius + input.deformation[i]);
        jac(i, n_uf + i) += perimeter / setup.alpha;
      }
    }

    // d(phi_u)_i / d u[f]: through the mean flux and the donated velocity
    auto add_phiu_terms = [&](std::size_t row, std::size_t i, double sign) {
      const std::size_t df = donor_face[i];
      for (std::size_t f : {i, i + 1}) {
        const int col = ucol(f);
        if (col < 0) continue;
        double deriv = 0.5 * a_don[f] * u[df];
        if (f == df) deriv += mean_flux[i];
        jac(row, col) += sign * deriv / dx;
      }
    };

    for (std::size_t f = 1; f <= n_uf; ++f) {
      const std::size_t row = n + f - 1;
      const bool outlet = f == n;
      const double a_mean = outlet ? setup.area[n - 1] : 0.5 * (setup.area[f - 1] + setup.area[f]);
      const int self = ucol(f);
      jac(row, self) += a_mean / ctx.dt + friction;

      if (outlet) {
        // (phi u)_ghost = a_donor u_N^2
        jac(row, self) += 2.0 * a_don[n] * u[n] / dx;
        add_phiu_terms(row, n - 1, -1.0);
        jac(row, n_uf + n - 1) -= (a_mean / rho) / dx;
      } else {
        add_phiu_terms(row, f, +1.0);
        add_phiu_terms(row, f - 1, -1.0);
        jac(row, n_uf + f) += (a_mean / rho) / dx;
        jac(row, n_uf + f - 1) -= (a_mean / rho) / dx;
      }
    }
    return jac;
  }

  // Damped Newton on the staggered backward-Euler system. The Robin mode
  // adds the permeable-wall source that regularizes enclosed problems; a
  // Dirichlet interface on a closed tube leaves the constant pressure mode
  // unconstrained, which surfaces as a singular linearization.
  void solve_flow(const schemes::BoundaryData& input, const schemes::TimeContext& ctx) {
    const std::size_t n = interface_size();
    const std::size_t n_uf = velocity_unknowns();
    const std::size_t dim = n + n_uf;
    const FlowSetup setup = flow_setup(input, ctx);

    Vector x(dim);
    for (std::size_t f = 1; f <= n_uf; ++f) x[f - 1] = committed_.face_velocity[f];
    for (std::size_t i = 0; i < n; ++i) x[n_uf + i] = committed_.pressure[i];

    Vector res = flow_residual(setup, x, input, ctx);
    const double tol = eps_problem_ * std::max(1.0, res.norm2());

    constexpr int kNewtonCap = 50;
    int iteration = 0;
    bool singular_seen = false;
    while (res.norm2() > tol) {
      if (++iteration > kNewtonCap) {
        if (singular_seen) {
          throw IncompressibilityDilemma(
              "tube fluid: singular linearization and stagnating residual; the flow cannot "
              "satisfy the prescribed wall motion");
        }
        throw SolverDiverged("tube fluid: Newton cap exceeded at t = " + std::to_string(ctx.t_new));
      }
      const Matrix jac = flow_jacobian(setup, x, input, ctx);
      Vector neg_res(dim);
      for (std::size_t i = 0; i < dim; ++i) neg_res[i] = -res[i];
      Vector delta;
      bool singular_now = false;
      try {
        delta = lstsq(jac, neg_res, 1e-13);
      } catch (const RankDeficient&) {
        // regularized least-squares step: minimize ||J d + F||^2 + tau^2 ||d||^2
        singular_now = true;
        singular_seen = true;
        double scale = 0.0;
        for (std::size_t i = 0; i < dim; ++i) scale = std::max(scale, std::abs(jac(i, i)));
        const double tau = 1e-8 * std::max(scale, 1.0);
        Matrix stacked(2 * dim, dim);
        for (std::size_t j = 0; j < dim; ++j) {
          for (std::size_t i = 0; i < dim; ++i) stacked(i, j) = jac(i, j);
          stacked(dim + j, j) = tau;
        }
        Vector rhs(2 * dim);
        for (std::size_t i = 0; i < dim; ++i) rhs[i] = neg_res[i];
        delta = lstsq(stacked, rhs, 0.0);
      }

      // halve the step while the residual grows
      double damping = 1.0;
      Vector x_try(dim);
      Vector res_try;
      const double res_old = res.norm2();
      for (int halvings = 0;; ++halvings) {
        for (std::size_t i = 0; i < dim; ++i) x_try[i] = x[i] + damping * delta[i];
        res_try = flow_residual(setup, x_try, input, ctx);
        if (res_try.norm2() < res_old || halvings >= 20) break;
        damping *= 0.5;
      }
      x = x_try;
      res = res_try;

      if (singular_now && res.norm2() > tol && res.norm2() > 0.5 * res_old) {
        // the incompatible component cannot shrink: enclosed flow against a
        // prescribed wall motion
        throw IncompressibilityDilemma(
            "tube fluid: singular linearization and stagnating residual; the flow cannot satisfy "
            "the prescribed wall motion");
      }
    }
    x.validate();

    const Vector u = assemble_faces(setup, x);
    Vector p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = x[n_uf + i];

    Vector wall_velocity(n);
    for (std::size_t i = 0; i < n; ++i) {
      wall_velocity[i] = input.deformation_rate[i];
      if (setup.robin) wall_velocity[i] += (p[i] - input.traction[i]) / setup.alpha;
    }

    // discrete mass audit: the continuity rows telescope to the boundary and
    // wall fluxes
    std::vector<double> phi(n + 1);
    for (std::size_t f = 0; f <= n; ++f) phi[f] = donor_area(setup, f, u) * u[f];
    double wall_source = 0.0;
    if (setup.robin) {
      for (std::size_t i = 0; i < n; ++i) {
        const double perimeter = 2.0 * M_PI * (config_.initial_radius + input.deformation[i]);
        wall_source += -perimeter * (p[i] - input.traction[i]) / setup.alpha * config_.dx();
      }
    }
    double geometry_change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      geometry_change += (setup.area[i] - setup.area_prev[i]) * config_.dx();
    }
    const double audit = geometry_change - ctx.dt * (phi[0] - phi[n] + wall_source);
    work_audit_rel_ = std::abs(audit) / initial_volume();

    work_.face_velocity = u;
    work_.pressure = p;
    work_.fluid_wall_velocity = wall_velocity;
  }

  TubeConfig config_;
  double eps_problem_;
  State committed_, previous_, work_;
  double committed_audit_rel_ = 0.0;
  double work_audit_rel_ = 0.0;
  int last_started_step_ = -1;
  double last_dt_ = 0.0;
  FluidAdapter fluid_adapter_;
  StructureAdapter structure_adapter_;
};

}  // namespace fsilab::models

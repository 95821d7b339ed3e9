#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsilab/densela.hpp"
#include "fsilab/errors.hpp"

// Update strategies applied to the raw solver output within one coupling
// iteration: constant relaxation, Aitken's dynamic relaxation, IQN-ILS, and
// IQN-IMVLS with implicit reuse of past time-step data. Difference data is
// kept newest-column-first.

namespace fsilab::accel {

/// Fixed-point residual R = x_tilde - x.
inline Vector residual(const Vector& x_tilde, const Vector& x) {
  if (x_tilde.size() != x.size()) throw DimensionError("residual: dimension mismatch");
  return x_tilde - x;
}

/// Relaxed update omega * x_tilde + (1 - omega) * x, 0 < omega <= 1.
inline Vector relax(const Vector& x_tilde, const Vector& x, double omega) {
  if (!(omega > 0.0) || omega > 1.0) {
    throw ParameterError("relax: omega must lie in (0, 1], got " + std::to_string(omega));
  }
  if (x_tilde.size() != x.size()) throw DimensionError("relax: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = omega * x_tilde[i] + (1.0 - omega) * x[i];
  out.validate();
  return out;
}

struct FixedPointSnapshot {
  Vector x_tilde;
  Vector residual;
  int iteration_index = 1;

  static FixedPointSnapshot from_iterate(const Vector& x_tilde, const Vector& x, int k) {
    if (k < 1) throw ParameterError("snapshot: iteration index must be >= 1");
    return FixedPointSnapshot{x_tilde, accel::residual(x_tilde, x), k};
  }
};

/// Within-time-step difference matrices V (residual differences) and
/// W (output differences), newest column first.
class PairHistory {
public:
  std::size_t columns() const { return v_cols_.size(); }
  std::size_t dimension() const { return snapshots_.empty() ? 0 : snapshots_.front().x_tilde.size(); }
  const std::vector<FixedPointSnapshot>& snapshots() const { return snapshots_; }

  Matrix v() const { return Matrix::from_columns({v_cols_.begin(), v_cols_.end()}); }
  Matrix w() const { return Matrix::from_columns({w_cols_.begin(), w_cols_.end()}); }

  void clear() {
    snapshots_.clear();
    v_cols_.clear();
    w_cols_.clear();
  }

  void push(const FixedPointSnapshot& snap) {
    if (snap.x_tilde.size() != snap.residual.size()) {
      throw DimensionError("push_pair: snapshot fields disagree in length");
    }
    if (!snapshots_.empty()) {
      const FixedPointSnapshot& last = snapshots_.back();
      if (snap.iteration_index != last.iteration_index + 1) {
        throw SequenceError("push_pair: iteration index " + std::to_string(snap.iteration_index) +
                            " does not follow " + std::to_string(last.iteration_index));
      }
      if (snap.x_tilde.size() != last.x_tilde.size()) {
        throw DimensionError("push_pair: interface dimension changed");
      }
      v_cols_.push_front(snap.residual - last.residual);
      w_cols_.push_front(snap.x_tilde - last.x_tilde);
    } else if (snap.iteration_index < 1) {
      throw ParameterError("push_pair: iteration index must be >= 1");
    }
    snapshots_.push_back(snap);
  }

private:
  std::vector<FixedPointSnapshot> snapshots_;
  std::deque<Vector> v_cols_;  // newest first
  std::deque<Vector> w_cols_;
};

inline PairHistory push_pair(PairHistory history, const FixedPointSnapshot& snap) {
  history.push(snap);
  return history;
}

/// Implicit multi-vector Jacobian: ordered blocks (V_j, Wtilde_j) of past
/// time steps, oldest first. An empty block list is the zero Jacobian.
class MultiVectorJacobian {
public:
  struct Block {
    Matrix v;
    Matrix w_tilde;
  };

  explicit MultiVectorJacobian(std::size_t max_blocks = 8) : max_blocks_(max_blocks) {}

  std::size_t max_blocks() const { return max_blocks_; }
  bool empty() const { return blocks_.empty(); }
  const std::vector<Block>& blocks() const { return blocks_; }

  void append(Matrix v, Matrix w_tilde) {
    if (v.cols() != w_tilde.cols() || v.rows() != w_tilde.rows()) {
      throw DimensionError("MultiVectorJacobian: block shape mismatch");
    }
    blocks_.push_back(Block{std::move(v), std::move(w_tilde)});
    if (max_blocks_ > 0) {
      while (blocks_.size() > max_blocks_) blocks_.erase(blocks_.begin());
    }
  }

private:
  std::vector<Block> blocks_;
  std::size_t max_blocks_;  // 0 means unlimited
};

struct AitkenState {
  double omega = 0.1;
  double omega_min = 1e-4;
  double omega_max = 1.0;
  std::optional<Vector> previous_residual;
};

/// Dynamic relaxation factor update; keeps omega inside its bounds.
/// DegenerateResidual signals an exactly repeated residual (stagnation).
inline AitkenState aitken_step(AitkenState state, const Vector& residual_current) {
  residual_current.validate();
  if (!state.previous_residual.has_value()) {
    state.previous_residual = residual_current;
    return state;
  }
  const Vector diff = residual_current - *state.previous_residual;
  const double denom = dot(diff, diff);
  if (denom == 0.0) {
    throw DegenerateResidual("aitken_step: residual unchanged between iterations");
  }
  const double raw = -state.omega * dot(*state.previous_residual, diff) / denom;
  state.omega = std::clamp(raw, state.omega_min, state.omega_max);
  state.previous_residual = residual_current;
  return state;
}

struct FilteredColumns {
  std::vector<std::size_t> kept;     // original indices, in retained order
  std::vector<std::size_t> dropped;  // original indices, in drop order
};

/// Greedy QR-threshold column selection on V: repeatedly drops the column
/// whose R diagonal magnitude falls below eps_filter times the current
/// maximum, re-factorizing after each drop. Columns beyond the row count are
/// discarded up front (oldest first) so V stays a valid least-squares design.
inline FilteredColumns filter_column_indices(const Matrix& v, double eps_filter) {
  if (!(eps_filter > 0.0)) throw ParameterError("filter_columns: eps_filter must be > 0");
  FilteredColumns result;
  const std::size_t m = v.rows();

  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < std::min(v.cols(), m); ++j) active.push_back(j);
  for (std::size_t j = std::min(v.cols(), m); j < v.cols(); ++j) result.dropped.push_back(j);

  while (!active.empty()) {
    std::vector<Vector> cols;
    cols.reserve(active.size());
    for (std::size_t j : active) cols.push_back(v.column(j));
    const Matrix sub = Matrix::from_columns(cols);

    if (active.size() == 1) {
      if (sub.frobenius() == 0.0) {
        result.dropped.push_back(active.front());
        active.clear();
      }
      break;
    }

    const Vector diag = householder_qr(sub).r_diagonal();
    double max_diag = 0.0;
    for (std::size_t j = 0; j < diag.size(); ++j) max_diag = std::max(max_diag, std::abs(diag[j]));
    std::size_t worst = 0;
    double worst_val = std::abs(diag[0]);
    for (std::size_t j = 1; j < diag.size(); ++j) {
      if (std::abs(diag[j]) < worst_val) {
        worst_val = std::abs(diag[j]);
        worst = j;
      }
    }
    if (worst_val <= eps_filter * max_diag) {
      result.dropped.push_back(active[worst]);
      active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst));
    } else {
      break;
    }
  }

  if (active.empty()) {
    throw AllColumnsFiltered("filter_columns: no usable column left");
  }
  result.kept = std::move(active);
  return result;
}

struct FilteredPair {
  Matrix v;
  Matrix w;
  std::vector<std::size_t> dropped;
};

/// Applies the QR-threshold filter to V and drops the paired W columns identically.
inline FilteredPair filter_columns(const Matrix& v, const Matrix& w, double eps_filter) {
  if (v.cols() != w.cols()) throw DimensionError("filter_columns: V and W column counts differ");
  const FilteredColumns sel = filter_column_indices(v, eps_filter);
  std::vector<Vector> vf, wf;
  vf.reserve(sel.kept.size());
  wf.reserve(sel.kept.size());
  for (std::size_t j : sel.kept) {
    vf.push_back(v.column(j));
    wf.push_back(w.column(j));
  }
  return FilteredPair{Matrix::from_columns(vf), Matrix::from_columns(wf), sel.dropped};
}

namespace detail {

struct QnStep {
  Vector next;
  double alpha_norm = 0.0;
};

/// x_tilde + W * alpha with alpha = argmin || V alpha + R ||_2 on filtered data.
inline QnStep ils_step(const Matrix& v, const Matrix& w, const Vector& x_tilde,
                       const Vector& res, double eps_filter) {
  const FilteredPair f = filter_columns(v, w, eps_filter);
  Vector neg_res(res.size());
  for (std::size_t i = 0; i < res.size(); ++i) neg_res[i] = -res[i];
  const Vector alpha = lstsq(f.v, neg_res, 0.0);
  Vector next = x_tilde + f.w.apply(alpha);
  next.validate();
  return QnStep{std::move(next), alpha.norm2()};
}

}  // namespace detail

/// IQN-ILS update of the raw output x_tilde given the within-step history.
/// The caller relaxes instead when the history is empty.
inline Vector ils_update(const PairHistory& history, const Vector& x_tilde,
                         const Vector& res, double eps_filter) {
  if (history.columns() == 0) {
    throw ParameterError("ils_update: history holds no difference pair yet");
  }
  return detail::ils_step(history.v(), history.w(), x_tilde, res, eps_filter).next;
}

/// Applies the implicit Jacobian to r: sum over blocks of Wtilde_j * beta_j
/// with beta_j = argmin || V_j beta - r ||_2 on the filtered block. Blocks
/// whose columns are filtered away contribute nothing.
inline Vector mvj_apply(const MultiVectorJacobian& jac, const Vector& r, double eps_filter) {
  Vector out(r.size());
  for (const MultiVectorJacobian::Block& block : jac.blocks()) {
    if (block.v.rows() != r.size()) throw DimensionError("mvj_apply: block row count mismatch");
    FilteredPair f;
    try {
      f = filter_columns(block.v, block.w_tilde, eps_filter);
    } catch (const AllColumnsFiltered&) {
      continue;
    }
    const Vector beta = lstsq(f.v, r, 0.0);
    out += f.w.apply(beta);
  }
  out.validate();
  return out;
}

/// Jacobian application column by column: returns the matrix J * V.
inline Matrix mvj_apply_columns(const MultiVectorJacobian& jac, const Matrix& v,
                                double eps_filter) {
  Matrix out(v.rows(), v.cols());
  for (std::size_t j = 0; j < v.cols(); ++j) out.set_column(j, mvj_apply(jac, v.column(j), eps_filter));
  return out;
}

namespace detail {

/// x_tilde - J R + (W - J V) alpha on filtered data, with J V supplied by the caller.
inline QnStep imvls_step(const MultiVectorJacobian& jac, const Matrix& v, const Matrix& w,
                         const Matrix& jac_v, const Vector& x_tilde, const Vector& res,
                         double eps_filter) {
  if (jac_v.cols() != v.cols() || jac_v.rows() != v.rows()) {
    throw DimensionError("imvls: cached J V shape disagrees with V");
  }
  const FilteredColumns sel = filter_column_indices(v, eps_filter);
  std::vector<Vector> vf, dwf;
  vf.reserve(sel.kept.size());
  dwf.reserve(sel.kept.size());
  for (std::size_t j : sel.kept) {
    vf.push_back(v.column(j));
    dwf.push_back(w.column(j) - jac_v.column(j));
  }
  const Matrix v_filtered = Matrix::from_columns(vf);
  const Matrix dw_filtered = Matrix::from_columns(dwf);

  Vector neg_res(res.size());
  for (std::size_t i = 0; i < res.size(); ++i) neg_res[i] = -res[i];
  const Vector alpha = lstsq(v_filtered, neg_res, 0.0);

  Vector next = x_tilde - mvj_apply(jac, res, eps_filter) + dw_filtered.apply(alpha);
  next.validate();
  return QnStep{std::move(next), alpha.norm2()};
}

}  // namespace detail

/// IQN-IMVLS update. With an empty history this reduces to x_tilde - J R;
/// with an empty Jacobian it coincides with ils_update.
inline Vector imvls_update(const MultiVectorJacobian& jac, const PairHistory& history,
                           const Vector& x_tilde, const Vector& res, double eps_filter) {
  if (history.columns() == 0) {
    Vector next = x_tilde - mvj_apply(jac, res, eps_filter);
    next.validate();
    return next;
  }
  const Matrix v = history.v();
  return detail::imvls_step(jac, v, history.w(), mvj_apply_columns(jac, v, eps_filter),
                            x_tilde, res, eps_filter)
      .next;
}

/// Folds the finished time step into the implicit Jacobian:
/// appends the block (V_k, W_k - J V_k) and evicts the oldest block past the cap.
inline MultiVectorJacobian imvls_finalize_timestep(MultiVectorJacobian jac,
                                                   const PairHistory& history,
                                                   const Matrix& cached_jv) {
  if (history.columns() == 0) return jac;
  const Matrix v = history.v();
  const Matrix w = history.w();
  if (cached_jv.cols() != v.cols() || cached_jv.rows() != v.rows()) {
    throw DimensionError("imvls_finalize_timestep: cached J V inconsistent with history");
  }
  Matrix w_tilde(w.rows(), w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) w_tilde.set_column(j, w.column(j) - cached_jv.column(j));
  jac.append(v, std::move(w_tilde));
  return jac;
}

// ---------------------------------------------------------------------------
// Stateful update strategies driven by the coupling loops. One strategy
// instance belongs to one loop; begin_step/end_step bracket each time step.
// ---------------------------------------------------------------------------

struct UpdateDiagnostics {
  std::optional<double> omega;
  std::optional<double> alpha_norm;
};

class UpdateStrategy {
public:
  virtual ~UpdateStrategy() = default;
  virtual void begin_step() {}
  /// Maps the raw output x_tilde of coupling iteration k (1-based) to the
  /// next iteration's input.
  virtual Vector apply(const Vector& x_tilde, const Vector& x, int k) = 0;
  virtual void end_step() {}
  virtual UpdateDiagnostics diagnostics() const { return {}; }
};

class IdentityUpdate final : public UpdateStrategy {
public:
  Vector apply(const Vector& x_tilde, const Vector&, int) override { return x_tilde; }
};

class RelaxUpdate final : public UpdateStrategy {
public:
  explicit RelaxUpdate(double omega) : omega_(omega) {
    if (!(omega > 0.0) || omega > 1.0) throw ParameterError("relax update: omega outside (0, 1]");
  }
  Vector apply(const Vector& x_tilde, const Vector& x, int) override {
    return relax(x_tilde, x, omega_);
  }
  UpdateDiagnostics diagnostics() const override { return {omega_, std::nullopt}; }

private:
  double omega_;
};

class AitkenUpdate final : public UpdateStrategy {
public:
  AitkenUpdate(double omega0, double omega_min, double omega_max)
      : omega0_(omega0), state_{omega0, omega_min, omega_max, std::nullopt} {
    if (!(omega_min > 0.0) || omega_min > omega_max || omega_max > 1.0) {
      throw ParameterError("aitken update: need 0 < omega_min <= omega_max <= 1");
    }
    if (!(omega0 >= omega_min) || omega0 > omega_max) {
      throw ParameterError("aitken update: omega0 outside the clamp bounds");
    }
  }

  void begin_step() override {
    state_.omega = omega0_;
    state_.previous_residual.reset();
  }

  Vector apply(const Vector& x_tilde, const Vector& x, int) override {
    const Vector res = residual(x_tilde, x);
    try {
      state_ = aitken_step(state_, res);
    } catch (const DegenerateResidual&) {
      // stagnated residual: keep the previous factor
    }
    return relax(x_tilde, x, state_.omega);
  }

  UpdateDiagnostics diagnostics() const override { return {state_.omega, std::nullopt}; }

private:
  double omega0_;
  AitkenState state_;
};

class IlsUpdate final : public UpdateStrategy {
public:
  IlsUpdate(double omega0, double eps_filter) : omega0_(omega0), eps_filter_(eps_filter) {
    if (!(omega0 > 0.0) || omega0 > 1.0) throw ParameterError("ils update: omega0 outside (0, 1]");
    if (!(eps_filter > 0.0)) throw ParameterError("ils update: eps_filter must be > 0");
  }

  void begin_step() override { history_.clear(); }

  Vector apply(const Vector& x_tilde, const Vector& x, int k) override {
    history_.push(FixedPointSnapshot::from_iterate(x_tilde, x, k));
    diag_ = {};
    if (history_.columns() == 0) {
      diag_.omega = omega0_;
      return relax(x_tilde, x, omega0_);
    }
    const Vector res = residual(x_tilde, x);
    try {
      detail::QnStep step = detail::ils_step(history_.v(), history_.w(), x_tilde, res, eps_filter_);
      diag_.alpha_norm = step.alpha_norm;
      return std::move(step.next);
    } catch (const AllColumnsFiltered&) {
      diag_.omega = omega0_;
      return relax(x_tilde, x, omega0_);
    }
  }

  UpdateDiagnostics diagnostics() const override { return diag_; }

private:
  double omega0_;
  double eps_filter_;
  PairHistory history_;
  UpdateDiagnostics diag_;
};

class ImvlsUpdate final : public UpdateStrategy {
public:
  ImvlsUpdate(double omega0, double eps_filter, std::size_t max_blocks)
      : omega0_(omega0), eps_filter_(eps_filter), jac_(max_blocks) {
    if (!(omega0 > 0.0) || omega0 > 1.0) throw ParameterError("imvls update: omega0 outside (0, 1]");
    if (!(eps_filter > 0.0)) throw ParameterError("imvls update: eps_filter must be > 0");
  }

  void begin_step() override {
    history_.clear();
    jv_cols_.clear();
  }

  Vector apply(const Vector& x_tilde, const Vector& x, int k) override {
    const std::size_t cols_before = history_.columns();
    history_.push(FixedPointSnapshot::from_iterate(x_tilde, x, k));
    if (history_.columns() > cols_before) {
      // one new difference column arrived; cache J^n against it
      jv_cols_.push_front(mvj_apply(jac_, history_.v().column(0), eps_filter_));
    }
    diag_ = {};
    const Vector res = residual(x_tilde, x);

    if (history_.columns() == 0) {
      if (jac_.empty()) {
        diag_.omega = omega0_;
        return relax(x_tilde, x, omega0_);
      }
      Vector next = x_tilde - mvj_apply(jac_, res, eps_filter_);
      next.validate();
      return next;
    }

    try {
      detail::QnStep step =
          detail::imvls_step(jac_, history_.v(), history_.w(), jv_matrix(), x_tilde, res, eps_filter_);
      diag_.alpha_norm = step.alpha_norm;
      return std::move(step.next);
    } catch (const AllColumnsFiltered&) {
      // blend the pure implicit-Jacobian step with the current input
      diag_.omega = omega0_;
      Vector newton = x_tilde - mvj_apply(jac_, res, eps_filter_);
      return relax(newton, x, omega0_);
    }
  }

  void end_step() override {
    jac_ = imvls_finalize_timestep(std::move(jac_), history_, jv_matrix());
    history_.clear();
    jv_cols_.clear();
  }

  UpdateDiagnostics diagnostics() const override { return diag_; }

  const MultiVectorJacobian& jacobian() const { return jac_; }

private:
  Matrix jv_matrix() const {
    if (history_.columns() == 0) return Matrix(history_.dimension(), 0);
    return Matrix::from_columns({jv_cols_.begin(), jv_cols_.end()});
  }

  double omega0_;
  double eps_filter_;
  MultiVectorJacobian jac_;
  PairHistory history_;
  std::deque<Vector> jv_cols_;  // newest first, aligned with history columns
  UpdateDiagnostics diag_;
};

}  // namespace fsilab::accel

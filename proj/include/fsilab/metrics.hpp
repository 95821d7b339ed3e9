#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "fsilab/densela.hpp"
#include "fsilab/errors.hpp"

// Run diagnostics: relative artificial interface flux, analytic balloon
// radius in the circular limit, and iteration statistics.

namespace fsilab::metrics {

/// Integrated |u_s - u_f| over the interface with positive quadrature weights.
inline double artificial_flux_rate(const Vector& u_s, const Vector& u_f, const Vector& weights) {
  if (u_s.size() != u_f.size() || u_s.size() != weights.size()) {
    throw DimensionError("artificial_flux_rate: dimension mismatch");
  }
  double rate = 0.0;
  for (std::size_t i = 0; i < u_s.size(); ++i) rate += weights[i] * std::abs(u_s[i] - u_f[i]);
  return rate;
}

/// Running value of eps_rel = integral |Vdot_fs| / V dt with the tracked
/// volume advanced by the net signed volume rate (rectangle rule).
struct FluxAccumulator {
  double eps_rel = 0.0;
  double volume = 0.0;
  double initial_volume = 0.0;

  explicit FluxAccumulator(double v0 = 1.0) : volume(v0), initial_volume(v0) {
    if (!(v0 > 0.0)) throw NonPhysical("FluxAccumulator: initial volume must be > 0");
  }
};

inline FluxAccumulator accumulate_eps_rel(FluxAccumulator acc, double flux_rate,
                                          double volume_rate_total, double dt) {
  if (!(dt > 0.0)) throw ParameterError("accumulate_eps_rel: dt must be > 0");
  if (!(acc.volume > 0.0)) throw NonPhysical("accumulate_eps_rel: volume must be > 0");
  acc.eps_rel += dt * flux_rate / acc.volume;
  acc.volume += dt * volume_rate_total;
  if (!(acc.volume > 0.0)) {
    throw NonPhysical("accumulate_eps_rel: volume driven to or below zero");
  }
  return acc;
}

/// Composite Simpson quadrature of q over [0, t] with n subintervals (n even).
inline double simpson_integral(const std::function<double(double)>& q, double t, int n = 10000) {
  if (t == 0.0) return 0.0;
  if (n % 2 != 0) ++n;
  const double h = t / n;
  double sum = q(0.0) + q(t);
  for (int i = 1; i < n; ++i) sum += (i % 2 == 1 ? 4.0 : 2.0) * q(i * h);
  return sum * h / 3.0;
}

/// Analytic balloon radius for an exactly circular interface:
/// R(t) = sqrt(R0^2 + (1/pi) * integral_0^t Q_in).
inline double analytic_balloon_radius(double t, double r0, const std::function<double(double)>& q_in) {
  const double radicand = r0 * r0 + simpson_integral(q_in, t) / M_PI;
  if (radicand <= 0.0) {
    throw NonPhysical("analytic_balloon_radius: radicand not positive");
  }
  return std::sqrt(radicand);
}

struct IterationStats {
  std::vector<int> per_step;
  double mean = 0.0;
  int max = 0;

  static IterationStats from(std::vector<int> per_step) {
    IterationStats s;
    s.per_step = std::move(per_step);
    double sum = 0.0;
    for (int k : s.per_step) {
      sum += k;
      s.max = std::max(s.max, k);
    }
    s.mean = s.per_step.empty() ? 0.0 : sum / static_cast<double>(s.per_step.size());
    return s;
  }
};

}  // namespace fsilab::metrics

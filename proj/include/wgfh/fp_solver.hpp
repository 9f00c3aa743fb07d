#ifndef WGFH_FP_SOLVER_HPP
#define WGFH_FP_SOLVER_HPP

// Implicit-Euler finite-volume flow for d/dt f = (1/pi) div(pi B^{-1} grad f), rho = pi f,
// together with the discrete energy identities used as per-step diagnostics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wgfh/cell_problem.hpp"
#include "wgfh/error.hpp"
#include "wgfh/expr.hpp"
#include "wgfh/grid.hpp"
#include "wgfh/linalg.hpp"
#include "wgfh/media.hpp"

namespace wgfh {

struct DensityState {
  Field rho;
  Field f;
  double t = 0.0;
};

/// Weighted norm sum pi u^2 h^n.
inline double pi_norm2(const DiffusionSystem& sys, std::span<const double> u) {
  double s = 0.0;
  for (std::size_t c = 0; c < u.size(); ++c) s += sys.pi[c] * u[c] * u[c];
  return s * sys.grid.cell_volume();
}

inline double pi_inner(const DiffusionSystem& sys, std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t c = 0; c < u.size(); ++c) s += sys.pi[c] * u[c] * v[c];
  return s * sys.grid.cell_volume();
}

inline double mass(const DiffusionSystem& sys, std::span<const double> rho) { return integrate(sys.grid, rho); }

/// out = L_h u = -(A u) / pi, the discrete generator in f-form.
inline void apply_generator(const DiffusionSystem& sys, std::span<const double> u, std::span<double> out) {
  apply_stiffness(sys.conductance, u, out);
  for (std::size_t c = 0; c < u.size(); ++c) out[c] = -out[c] / sys.pi[c];
}

/// State with density pi f, rescaled to unit mass (f rescaled consistently).
inline DensityState state_from_f(const DiffusionSystem& sys, Field f, double t = 0.0) {
  DensityState s;
  s.rho.resize(f.size());
  for (std::size_t c = 0; c < f.size(); ++c) {
    if (!(f[c] > 0.0)) throw ConfigError("initial density must be positive");
    s.rho[c] = sys.pi[c] * f[c];
  }
  const double scale = 1.0 / mass(sys, s.rho);
  for (std::size_t c = 0; c < f.size(); ++c) {
    s.rho[c] *= scale;
    f[c] *= scale;
  }
  s.f = std::move(f);
  s.t = t;
  return s;
}

inline DensityState state_from_rho(const DiffusionSystem& sys, Field rho, double t = 0.0) {
  Field f(rho.size());
  for (std::size_t c = 0; c < rho.size(); ++c) f[c] = rho[c] / sys.pi[c];
  return state_from_f(sys, std::move(f), t);
}

/// rho0 evaluated at slow cell centres (variables x, x1 in 1D; x1, x2 in 2D).
inline Field evaluate_on_grid(const expr::Expr& e, const Grid& g) {
  Field v(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) {
    expr::Bindings b;
    const double x1 = g.center(c, 0);
    if (g.dim == 1) {
      b.set(expr::Var::x, x1).set(expr::Var::x1, x1);
    } else {
      b.set(expr::Var::x1, x1).set(expr::Var::x2, g.center(c, 1));
    }
    v[c] = e.evaluate(b);
  }
  return v;
}

/// f_0 = rho0 / pi-bar at cell centres of `g`.
inline Field limit_profile(const expr::Expr& rho0, const Medium& med, const Grid& g) {
  Field f = evaluate_on_grid(rho0, g);
  const bool slow = med.density.depends_on_slow();
  const double shared = slow ? 0.0 : average_pi(med.density, {0.5, 0.5});
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!(f[c] > 0.0)) throw ConfigError("initial density rho0 must be positive");
    f[c] /= slow ? average_pi(med.density, {g.center(c, 0), g.dim == 2 ? g.center(c, 1) : 0.0}) : shared;
  }
  return f;
}

/// Well-prepared data rho_eps_0 = c_eps f_0 pi_eps with f_0 = rho0 / pi-bar.
inline DensityState well_prepared_initial(const expr::Expr& rho0, const Medium& med, const DiffusionSystem& sys) {
  return state_from_f(sys, limit_profile(rho0, med, sys.grid));
}

/// One implicit-Euler step in increment form (Pi + dt A) delta = -dt A f, so constant f is reproduced exactly.
class Stepper {
public:
  Stepper(const DiffusionSystem& sys, double dt) : sys_(&sys), dt_(dt) {
    if (!(dt > 0.0)) throw ConfigError("time step must be positive");
    const Grid& g = sys.grid;
    const double inv_h2 = 1.0 / (g.h() * g.h());
    if (g.dim == 1) {
      const std::size_t n = g.size();
      lower_.resize(n);
      upper_.resize(n);
      diag_.resize(n);
      const Field& k = sys.conductance.k[0];
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t left = (c + n - 1) % n;
        lower_[c] = -dt * k[left] * inv_h2;
        upper_[c] = -dt * k[c] * inv_h2;
        diag_[c] = sys.pi[c] + dt * (k[left] + k[c]) * inv_h2;
      }
    } else {
      diag_ = stiffness_diagonal(sys.conductance);
      for (std::size_t c = 0; c < diag_.size(); ++c) diag_[c] = sys.pi[c] + dt * diag_[c];
    }
  }

  double dt() const noexcept { return dt_; }

  Field advance(std::span<const double> f) const {
    const DiffusionSystem& sys = *sys_;
    const std::size_t n = f.size();
    Field rhs(n);
    apply_stiffness(sys.conductance, f, rhs);
    for (double& r : rhs) r *= -dt_;
    Field delta;
    if (sys.grid.dim == 1) {
      delta = solve_cyclic_tridiagonal(lower_, diag_, upper_, rhs);
    } else {
      delta.assign(n, 0.0);
      const JacobiPrecond pre(diag_);
      CgOptions opt;
      opt.rtol = 1e-14;
      opt.max_iterations = std::max(20000, int(4 * n));
      conjugate_gradient(
          [&](std::span<const double> u, std::span<double> out) {
            apply_stiffness(sys.conductance, u, out);
            for (std::size_t c = 0; c < n; ++c) out[c] = sys.pi[c] * u[c] + dt_ * out[c];
          },
          pre, rhs, delta, opt);
    }
    Field next(n);
    for (std::size_t c = 0; c < n; ++c) next[c] = f[c] + delta[c];
    return next;
  }

private:
  const DiffusionSystem* sys_;
  double dt_;
  Field lower_, diag_, upper_;
};

inline DensityState step(const DiffusionSystem& sys, const DensityState& state, double dt) {
  const Stepper s(sys, dt);
  DensityState out;
  out.f = s.advance(state.f);
  out.rho.resize(out.f.size());
  for (std::size_t c = 0; c < out.f.size(); ++c) {
    if (!(out.f[c] > 0.0)) throw NumericalError("positivity lost in implicit step");
    out.rho[c] = sys.pi[c] * out.f[c];
  }
  out.t = state.t + dt;
  return out;
}

struct DiagnosticsRecord {
  double t = 0.0;
  double min_f = 0.0, max_f = 0.0;
  double norm_pi = 0.0;    // ||f||^2_pi
  double dirichlet = 0.0;  // sum K (grad f)^2 h^n
  double dt_norm = 0.0;    // ||d_t f||^2_pi (generator at t = 0, backward difference after)
  double mass = 0.0;
};

/// A0 = ||f0||^2_pi, B0 = Dir(f0), C0 = ||h0||^2_pi, D0 = Dir(h0) with h0 = L_h f0.
struct InitialConstants {
  double A0 = 0.0, B0 = 0.0, C0 = 0.0, D0 = 0.0;
};

/// Residuals of the discrete a-priori identities, each relative to its right side.
struct IdentityResiduals {
  double l2 = 0.0;          // 1/2|f_T|^2 + sum dt Dir(f_k+1) + 1/2 sum |f_k+1 - f_k|^2 = 1/2|f_0|^2
  double h1 = 0.0;          // 1/2 Dir(f_T) + sum dt |h_k|^2 + 1/2 sum Dir(f_k+1 - f_k) = 1/2 Dir(f_0)
  double l2_timeder = 0.0;  // same as l2 for h_k = (f_k+1 - f_k)/dt
  double h1_timeder = 0.0;  // same as h1 for h_k
  double l2_gap = 0.0;      // 1/2 sum |f_k+1 - f_k|^2: the amount by which the continuum identity is strict
};

struct Trajectory {
  DiffusionSystem system;
  double dt = 0.0;
  int steps = 0;
  std::vector<double> times;  // stored snapshots
  std::vector<Field> f;
  std::vector<DiagnosticsRecord> diagnostics;  // every step, including t = 0
  InitialConstants initial;
  IdentityResiduals identities;
  bool max_principle = true;
  double max_mass_drift = 0.0;  // max relative change of mass per step
  double free_energy_increase = 0.0;  // max of E_k+1 - E_k (should be <= round-off)

  Field rho(std::size_t k) const {
    Field r(f[k].size());
    for (std::size_t c = 0; c < r.size(); ++c) r[c] = system.pi[c] * f[k][c];
    return r;
  }
};

struct EvolveOptions {
  int keep_every = 1;                 // snapshot stride (final state always kept)
  std::vector<double> output_times;   // additionally kept (nearest step)
  /// Called after every step with (k, t, f_k, f_k+1); k counts from 0.
  std::function<void(int, double, std::span<const double>, std::span<const double>)> observer;
};

namespace detail {

inline double relative(double lhs, double rhs) {
  const double scale = std::max(std::fabs(rhs), std::numeric_limits<double>::min());
  return std::fabs(lhs - rhs) / scale;
}

inline double kl_energy(const DiffusionSystem& sys, std::span<const double> f) {
  double s = 0.0;
  for (std::size_t c = 0; c < f.size(); ++c) s += sys.pi[c] * f[c] * std::log(f[c]);
  return s * sys.grid.cell_volume();
}

}  // namespace detail

/// Repeated implicit steps to time T; dt is adjusted to T / round(T / dt) so steps are uniform.
inline Trajectory evolve(const DensityState& initial, const DiffusionSystem& sys, double T, double dt,
                         const EvolveOptions& opt = {}) {
  if (T < 0.0) throw ConfigError("final time must be nonnegative");
  if (!(dt > 0.0)) throw ConfigError("time step must be positive");
  Trajectory tr;
  tr.system = sys;
  tr.steps = T > 0.0 ? std::max<int>(1, int(std::llround(T / dt))) : 0;
  tr.dt = tr.steps > 0 ? T / tr.steps : dt;
  const double h = tr.dt;
  const Grid& g = sys.grid;
  const std::size_t n = g.size();

  std::vector<int> keep_steps;
  for (double to : opt.output_times) keep_steps.push_back(int(std::llround(to / h)));
  auto keep = [&](int k) {
    return k == 0 || k == tr.steps || (opt.keep_every > 0 && k % opt.keep_every == 0) ||
           std::find(keep_steps.begin(), keep_steps.end(), k) != keep_steps.end();
  };

  Field f = initial.f;
  Field gen(n), scratch(n);
  apply_generator(sys, f, gen);
  tr.initial = {pi_norm2(sys, f), dirichlet_energy(sys.conductance, f), pi_norm2(sys, gen),
                dirichlet_energy(sys.conductance, gen)};

  auto record = [&](double t, std::span<const double> u, double dtn) {
    DiagnosticsRecord r;
    r.t = t;
    r.min_f = *std::min_element(u.begin(), u.end());
    r.max_f = *std::max_element(u.begin(), u.end());
    r.norm_pi = pi_norm2(sys, u);
    r.dirichlet = dirichlet_energy(sys.conductance, u);
    r.dt_norm = dtn;
    double m = 0.0;
    for (std::size_t c = 0; c < n; ++c) m += sys.pi[c] * u[c];
    r.mass = m * g.cell_volume();
    return r;
  };
  tr.diagnostics.push_back(record(0.0, f, tr.initial.C0));
  tr.times.push_back(initial.t);
  tr.f.push_back(f);

  const double f_lo0 = tr.diagnostics[0].min_f, f_hi0 = tr.diagnostics[0].max_f;
  const double slack = (g.dim == 1 ? 16.0 * std::numeric_limits<double>::epsilon() : 1e-12) * std::fabs(f_hi0);
  double lo = f_lo0, hi = f_hi0;

  double sum_dir = 0.0, sum_jump = 0.0, sum_h = 0.0, sum_dirjump = 0.0;
  double sum_hdir = 0.0, sum_hjump = 0.0, sum_hdot = 0.0, sum_hdirjump = 0.0;
  double h0_norm = 0.0, h0_dir = 0.0;
  Field h_prev, h_cur(n), diff(n);
  double energy = detail::kl_energy(sys, f);

  const Stepper stepper(sys, h);
  for (int k = 0; k < tr.steps; ++k) {
    Field next = stepper.advance(f);
    for (std::size_t c = 0; c < n; ++c) {
      if (!(next[c] > 0.0)) throw NumericalError("positivity lost at step " + std::to_string(k + 1));
      diff[c] = next[c] - f[c];
      h_cur[c] = diff[c] / h;
    }
    const auto d = record((k + 1) * h + initial.t, next, pi_norm2(sys, h_cur));
    if (d.min_f < lo - slack || d.max_f > hi + slack) tr.max_principle = false;
    lo = std::min(lo, d.min_f);
    hi = std::max(hi, d.max_f);
    tr.max_mass_drift = std::max(tr.max_mass_drift, std::fabs(d.mass - tr.diagnostics.back().mass) /
                                                        std::fabs(tr.diagnostics.back().mass));
    const double e_next = detail::kl_energy(sys, next);
    tr.free_energy_increase = std::max(tr.free_energy_increase, e_next - energy);
    energy = e_next;

    sum_dir += h * d.dirichlet;
    sum_jump += 0.5 * pi_norm2(sys, diff);
    sum_h += h * d.dt_norm;
    sum_dirjump += 0.5 * dirichlet_energy(sys.conductance, diff);
    if (k == 0) {
      h0_norm = d.dt_norm;
      h0_dir = dirichlet_energy(sys.conductance, h_cur);
    } else {
      Field hd(n);
      for (std::size_t c = 0; c < n; ++c) hd[c] = h_cur[c] - h_prev[c];
      sum_hdir += h * dirichlet_energy(sys.conductance, h_cur);
      sum_hjump += 0.5 * pi_norm2(sys, hd);
      sum_hdot += pi_norm2(sys, hd) / h;
      sum_hdirjump += 0.5 * dirichlet_energy(sys.conductance, hd);
    }
    if (opt.observer) opt.observer(k, (k + 1) * h + initial.t, f, next);
    h_prev = h_cur;
    f = std::move(next);
    tr.diagnostics.push_back(d);
    if (keep(k + 1)) {
      tr.times.push_back(d.t);
      tr.f.push_back(f);
    }
  }

  if (tr.steps > 0) {
    const auto& last = tr.diagnostics.back();
    tr.identities.l2 = detail::relative(0.5 * last.norm_pi + sum_dir + sum_jump, 0.5 * tr.initial.A0);
    tr.identities.l2_gap = sum_jump;
    tr.identities.h1 =
        tr.initial.B0 > 0.0 ? detail::relative(0.5 * last.dirichlet + sum_h + sum_dirjump, 0.5 * tr.initial.B0) : 0.0;
    if (tr.steps >= 2 && h0_norm > 0.0) {
      tr.identities.l2_timeder = detail::relative(0.5 * last.dt_norm + sum_hdir + sum_hjump, 0.5 * h0_norm);
      const double hT_dir = dirichlet_energy(sys.conductance, h_prev);
      tr.identities.h1_timeder = detail::relative(0.5 * hT_dir + sum_hdot + sum_hdirjump, 0.5 * h0_dir);
    }
  }
  return tr;
}

/// Per-snapshot records of h_k = (f_k+1 - f_k)/dt from a stored trajectory (needs every step kept).
struct TimeDerivativeRecord {
  double t = 0.0;
  double norm_pi = 0.0;
  double dirichlet = 0.0;
};

inline std::vector<TimeDerivativeRecord> time_derivative_diagnostics(const Trajectory& tr) {
  if (tr.f.size() < 3) throw ConfigError("time-derivative diagnostics need at least 3 snapshots");
  std::vector<TimeDerivativeRecord> out;
  for (std::size_t k = 0; k + 1 < tr.f.size(); ++k) {
    const double dt = tr.times[k + 1] - tr.times[k];
    Field h(tr.f[k].size());
    for (std::size_t c = 0; c < h.size(); ++c) h[c] = (tr.f[k + 1][c] - tr.f[k][c]) / dt;
    out.push_back({tr.times[k], pi_norm2(tr.system, h), dirichlet_energy(tr.system.conductance, h)});
  }
  return out;
}

/// Max over u, v of |<L u, v>_pi - <u, L v>_pi| / (|u|_pi |L v|_pi), for the given test fields.
inline double self_adjointness_defect(const DiffusionSystem& sys, std::span<const double> u, std::span<const double> v) {
  Field lu(u.size()), lv(v.size());
  apply_generator(sys, u, lu);
  apply_generator(sys, v, lv);
  const double a = pi_inner(sys, lu, v), b = pi_inner(sys, u, lv);
  const double scale = std::sqrt(pi_norm2(sys, lu) * pi_norm2(sys, v)) + std::sqrt(pi_norm2(sys, u) * pi_norm2(sys, lv));
  return std::fabs(a - b) / std::max(scale, std::numeric_limits<double>::min());
}

/// L2 distance sqrt(sum (a - b)^2 h^n) between cell fields on the same grid.
inline double l2_distance(const Grid& g, std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s * g.cell_volume());
}

}  // namespace wgfh

#endif  // WGFH_FP_SOLVER_HPP

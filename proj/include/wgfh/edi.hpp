#ifndef WGFH_EDI_HPP
#define WGFH_EDI_HPP

// Free energy, the dissipation potentials psi / psi*, Fenchel-Young gaps and the EDI
// bookkeeping along discrete trajectories.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wgfh/cell_problem.hpp"
#include "wgfh/error.hpp"
#include "wgfh/fp_solver.hpp"
#include "wgfh/grid.hpp"
#include "wgfh/linalg.hpp"

namespace wgfh {

/// E(rho) = sum rho log(rho / pi) h^n.
inline double free_energy(const DiffusionSystem& sys, std::span<const double> rho) {
  double s = 0.0;
  for (std::size_t c = 0; c < rho.size(); ++c) {
    if (!(rho[c] > 0.0) || !(sys.pi[c] > 0.0)) throw NumericalError("free energy needs positive rho and pi");
    s += rho[c] * std::log(rho[c] / sys.pi[c]);
  }
  return s * sys.grid.cell_volume();
}

/// Logarithmic mean (a - b) / (log a - log b), with its series near a = b.
inline double log_mean(double a, double b) noexcept {
  const double x = b / a - 1.0;
  if (std::fabs(x) < 1e-4) return a * (1.0 + x * (0.5 + x * (-1.0 / 12.0 + x / 24.0)));
  return (a - b) / (std::log(a) - std::log(b));
}

inline Field f_of(const DiffusionSystem& sys, std::span<const double> rho) {
  Field f(rho.size());
  for (std::size_t c = 0; c < rho.size(); ++c) {
    if (!(rho[c] > 0.0)) throw NumericalError("dissipation potentials need positive rho");
    f[c] = rho[c] / sys.pi[c];
  }
  return f;
}

/// Face mobility of the density: K_f times the logarithmic mean of f across the face.
/// With it, s = -A f has potential u = -log f exactly.
inline FaceField density_mobility(const DiffusionSystem& sys, std::span<const double> rho) {
  const Field f = f_of(sys, rho);
  const Grid& g = sys.grid;
  FaceField m = FaceField::zeros(g);
  for (int d = 0; d < g.dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c)
      m.k[d][c] = sys.conductance.k[d][c] * log_mean(f[c], f[g.neighbor(c, d, +1)]);
  return m;
}

/// d/dt rho generated by the scheme at the current state: -A f.
inline Field generator_velocity(const DiffusionSystem& sys, std::span<const double> rho) {
  const Field f = f_of(sys, rho);
  Field s(f.size());
  apply_stiffness(sys.conductance, f, s);
  for (double& v : s) v = -v;
  return s;
}

struct PsiResult {
  double value = 0.0;
  Field potential;  // u with -div(M grad u) = s, mean zero
};

/// psi(rho, s) = 1/2 sum M (grad u)^2 h^n where -div_h(M grad_h u) = s.
inline PsiResult psi_with_potential(const DiffusionSystem& sys, std::span<const double> rho, std::span<const double> s) {
  const Grid& g = sys.grid;
  const std::size_t n = g.size();
  double total = 0.0, scale = 0.0;
  for (double v : s) {
    total += v;
    scale += std::fabs(v);
  }
  if (std::fabs(total) > 1e-10 * std::max(scale, 1e-300) && std::fabs(total) > 1e-300)
    throw NumericalError("tangent vector has nonzero mean (" + detail::fmt_double(total * g.cell_volume()) + ")");
  const FaceField M = density_mobility(sys, rho);
  PsiResult r;
  if (g.dim == 1) {
    // face flux J_c = M_c (u_c - u_c+1)/h = J_ref + S_c with S_c = h sum_{j<=c} s_j; periodicity fixes J_ref
    const double h = g.h();
    Field S(n);
    double run = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      run += h * s[c];
      S[c] = run;
    }
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      num += S[c] / M.k[0][c];
      den += 1.0 / M.k[0][c];
    }
    const double jref = -num / den;
    double e = 0.0;
    r.potential.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      const double J = jref + S[c];
      e += J * J / M.k[0][c];
      if (c + 1 < n) r.potential[c + 1] = r.potential[c] - h * J / M.k[0][c];
    }
    remove_mean(r.potential);
    r.value = 0.5 * e * h;
    return r;
  }
  r.potential.assign(n, 0.0);
  Field rhs(s.begin(), s.end());
  remove_mean(rhs);
  const JacobiPrecond pre(stiffness_diagonal(M));
  CgOptions opt;
  opt.rtol = 1e-14;
  opt.project_mean = true;
  opt.max_iterations = std::max(20000, int(20 * n));
  conjugate_gradient([&](std::span<const double> u, std::span<double> out) { apply_stiffness(M, u, out); }, pre, rhs,
                     r.potential, opt);
  r.value = 0.5 * dirichlet_energy(M, r.potential);
  return r;
}

inline double psi(const DiffusionSystem& sys, std::span<const double> rho, std::span<const double> s) {
  return psi_with_potential(sys, rho, s).value;
}

/// psi*(rho, xi) = 1/2 sum M (grad xi)^2 h^n for a general force xi (exact dual of psi).
inline double psi_star_force(const DiffusionSystem& sys, std::span<const double> rho, std::span<const double> xi) {
  return 0.5 * dirichlet_energy(density_mobility(sys, rho), xi);
}

/// psi* at the gradient-flow force -dE/drho in Fisher form: 2 sum K (grad sqrt f)^2 h^n.
inline double psi_star(const DiffusionSystem& sys, std::span<const double> rho) {
  Field r = f_of(sys, rho);
  for (double& v : r) v = std::sqrt(v);
  return 2.0 * dirichlet_energy(sys.conductance, r);
}

/// psi(rho, s) + psi*(rho, xi) - <xi, s> >= 0.
inline double fenchel_young_gap(const DiffusionSystem& sys, std::span<const double> rho, std::span<const double> s,
                                std::span<const double> xi) {
  double pair = 0.0;
  for (std::size_t c = 0; c < s.size(); ++c) pair += xi[c] * s[c];
  pair *= sys.grid.cell_volume();
  return psi(sys, rho, s) + psi_star_force(sys, rho, xi) - pair;
}

/// Force -dE/drho = -(log f + 1).
inline Field energy_force(const DiffusionSystem& sys, std::span<const double> rho) {
  Field xi = f_of(sys, rho);
  for (double& v : xi) v = -(std::log(v) + 1.0);
  return xi;
}

struct EDIRecord {
  double t = 0.0;
  double energy = 0.0;
  double int_psi = 0.0;
  double int_psistar = 0.0;
  double residual = 0.0;  // E(rho_0) - E(rho_t) - int (psi + psi*)
  double fy_gap = 0.0;    // Fenchel-Young gap at (rho_t, d_t rho_t, -dE/drho)
  double psi = 0.0, psistar = 0.0;  // instantaneous values
};

/// Incremental EDI bookkeeping. Time integrals use the right-endpoint value on each step,
/// for which convexity of E gives E_k - E_k+1 >= dt (psi + psi*)_k+1 step by step.
class EdiAccumulator {
public:
  explicit EdiAccumulator(const DiffusionSystem& sys) : sys_(&sys) {}

  void start(double t, std::span<const double> f) {
    records_.clear();
    EDIRecord r = evaluate(t, f);
    e0_ = r.energy;
    r.residual = 0.0;
    records_.push_back(r);
  }

  void push(double t, std::span<const double> f) {
    const EDIRecord& prev = records_.back();
    EDIRecord r = evaluate(t, f);
    const double dt = t - prev.t;
    r.int_psi = prev.int_psi + dt * r.psi;
    r.int_psistar = prev.int_psistar + dt * r.psistar;
    r.residual = e0_ - r.energy - (r.int_psi + r.int_psistar);
    records_.push_back(r);
  }

  const std::vector<EDIRecord>& records() const noexcept { return records_; }

private:
  EDIRecord evaluate(double t, std::span<const double> f) const {
    const DiffusionSystem& sys = *sys_;
    Field rho(f.size());
    for (std::size_t c = 0; c < f.size(); ++c) rho[c] = sys.pi[c] * f[c];
    EDIRecord r;
    r.t = t;
    r.energy = free_energy(sys, rho);
    const Field s = generator_velocity(sys, rho);
    const auto p = psi_with_potential(sys, rho, s);
    r.psi = p.value;
    r.psistar = psi_star(sys, rho);
    const Field xi = energy_force(sys, rho);
    double pair = 0.0;
    for (std::size_t c = 0; c < s.size(); ++c) pair += xi[c] * s[c];
    r.fy_gap = p.value + psi_star_force(sys, rho, xi) - pair * sys.grid.cell_volume();
    return r;
  }

  const DiffusionSystem* sys_;
  double e0_ = 0.0;
  std::vector<EDIRecord> records_;
};

/// EDI records along a trajectory stored at every step.
inline std::vector<EDIRecord> edi_trace(const Trajectory& tr) {
  if (tr.f.size() != std::size_t(tr.steps) + 1)
    throw ConfigError("EDI trace needs every step of the trajectory stored");
  EdiAccumulator acc(tr.system);
  acc.start(tr.times[0], tr.f[0]);
  for (std::size_t k = 1; k < tr.f.size(); ++k) acc.push(tr.times[k], tr.f[k]);
  return acc.records();
}

}  // namespace wgfh

#endif  // WGFH_EDI_HPP

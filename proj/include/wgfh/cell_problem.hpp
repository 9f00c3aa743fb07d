#ifndef WGFH_CELL_PROBLEM_HPP
#define WGFH_CELL_PROBLEM_HPP

// Periodic cell problems -div_y(D grad_y w_k) = div_y(D e_k), D = pi B^{-1}, and the
// effective tensors D-bar, G-bar, B-bar, pi-bar built from their correctors.

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "wgfh/error.hpp"
#include "wgfh/grid.hpp"
#include "wgfh/linalg.hpp"
#include "wgfh/media.hpp"
#include "wgfh/parallel.hpp"

namespace wgfh {

inline constexpr int kMinCellResolution = 32;

/// Face conductances of D(x, .) = pi(x, .) B^{-1} on a y-torus grid with `ycells` cells per axis.
/// Smooth media are evaluated at face centres; piecewise media use harmonic means of cell values.
inline FaceField cell_conductance(const Medium& med, const Point& x, int ycells) {
  const int dim = med.dim();
  const Grid g(dim, ycells);
  if (dim == 2 && !med.mobility.diagonal_by_construction())
    throw ConfigError("off-diagonal mobility entries are not supported by the two-point flux discretisation");
  auto local = [&](const Point& y, int d) {
    const Mat2 b = med.mobility.at(y);
    if (dim == 2 && (b.a12 != 0.0 || b.a21 != 0.0))
      throw ConfigError("off-diagonal mobility entries are not supported by the two-point flux discretisation");
    return med.density.two_scale(x, y) / (d == 0 ? b.a11 : b.a22);
  };
  if (med.mobility.piecewise() || med.density.piecewise()) {
    std::array<Field, 2> cell;
    for (int d = 0; d < dim; ++d) {
      cell[d].resize(g.size());
      for (std::size_t c = 0; c < g.size(); ++c)
        cell[d][c] = local({g.center(c, 0), dim == 2 ? g.center(c, 1) : 0.0}, d);
    }
    return harmonic_faces(g, cell);
  }
  FaceField k = FaceField::zeros(g);
  for (int d = 0; d < dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      Point y{g.center(c, 0), dim == 2 ? g.center(c, 1) : 0.0};
      const double face = double(g.coord(c, d) + 1) / ycells;
      (d == 0 ? y.c1 : y.c2) = face;
      k.k[d][c] = local(y, d);
    }
  return k;
}

/// Right side of the discrete cell problem for direction p: r_c = sum_d p_d (K_{c,d} - K_{c-1,d}) / h.
inline Field cell_rhs(const FaceField& K, std::span<const double> p) {
  const Grid& g = K.grid;
  Field r(g.size(), 0.0);
  const double inv_h = 1.0 / g.h();
  for (int d = 0; d < g.dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double flux = p[d] * K.k[d][c] * inv_h;
      r[c] += flux;
      r[g.neighbor(c, d, +1)] -= flux;
    }
  return r;
}

/// Solves A v = r on the torus in the mean-zero subspace (CG, Jacobi preconditioner).
inline CgResult solve_periodic(const FaceField& K, std::span<const double> r, std::span<double> v,
                               double rtol = 1e-13) {
  const Grid& g = K.grid;
  const double mean = sum(r) / double(r.size());
  const double scale = std::max(1e-300, std::sqrt(dot(r, r) / double(r.size())));
  if (std::fabs(mean) > 1e-10 * std::max(1.0, scale))
    throw NumericalError("cell problem compatibility violated: right-side mean " + std::to_string(mean));
  const JacobiPrecond pre(stiffness_diagonal(K));
  CgOptions opt;
  opt.rtol = rtol;
  opt.project_mean = true;
  opt.max_iterations = std::max(20000, int(20 * g.size()));
  return conjugate_gradient([&](std::span<const double> u, std::span<double> out) { apply_stiffness(K, u, out); }, pre,
                            r, v, opt);
}

/// Correctors w_k(x, .) for k = 1..dim.
struct CellSolution {
  Point x;
  int ycells = 0;
  FaceField conductance;
  std::array<Field, 2> w;
  int iterations = 0;

  int dim() const noexcept { return conductance.grid.dim; }

  /// Face gradient (w_k(c + e_d) - w_k(c)) / h along axis d.
  double face_gradient(int k, int d, std::size_t c) const {
    const Grid& g = conductance.grid;
    return (w[k][g.neighbor(c, d, +1)] - w[k][c]) / g.h();
  }
};

inline CellSolution solve_cell(const Medium& med, const Point& x, int ycells) {
  if (ycells < kMinCellResolution)
    throw ConfigError("cell problem needs at least " + std::to_string(kMinCellResolution) + " cells per axis");
  CellSolution s;
  s.x = x;
  s.ycells = ycells;
  s.conductance = cell_conductance(med, x, ycells);
  for (int k = 0; k < med.dim(); ++k) {
    std::array<double, 2> e{0.0, 0.0};
    e[k] = 1.0;
    const Field r = cell_rhs(s.conductance, e);
    s.w[k].assign(r.size(), 0.0);
    s.iterations += solve_periodic(s.conductance, r, s.w[k]).iterations;
  }
  return s;
}

/// Effective tensors at one slow point.
struct EffectivePoint {
  Mat2 D_bar, G_bar, B_bar;
  double pi_bar = 1.0;
};

/// D-bar = flux average of D, G-bar = flux average of D grad w, B-bar = ((D-bar + G-bar) / pi-bar)^{-1}.
inline EffectivePoint effective_from_cell(const CellSolution& s, double pi_bar) {
  const Grid& g = s.conductance.grid;
  const int dim = g.dim;
  EffectivePoint e;
  e.pi_bar = pi_bar;
  for (int d = 0; d < dim; ++d) {
    double dsum = 0.0;
    std::array<double, 2> gsum{0.0, 0.0};
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double k = s.conductance.k[d][c];
      dsum += k;
      for (int j = 0; j < dim; ++j) gsum[j] += k * s.face_gradient(j, d, c);
    }
    e.D_bar(d, d) = dsum * g.cell_volume();
    for (int j = 0; j < dim; ++j) e.G_bar(d, j) = gsum[j] * g.cell_volume();
  }
  // the discrete tensor is symmetric at the exact minimiser; symmetrise the round-off
  if (dim == 2) {
    const double off = 0.5 * (e.G_bar.a12 + e.G_bar.a21);
    e.G_bar.a12 = e.G_bar.a21 = off;
  }
  e.B_bar = ((e.D_bar + e.G_bar) * (1.0 / pi_bar)).inverse(dim);
  return e;
}

/// inf over periodic v of sum_faces K (dv/h + p_d)^2 h^n, solved directly for this p.
inline double effective_tensor_variational(const Medium& med, const Point& x, std::span<const double> p, int ycells) {
  double norm = 0.0;
  for (int d = 0; d < med.dim(); ++d) norm += p[d] * p[d];
  if (!(norm > 0.0)) throw ConfigError("variational direction must be nonzero");
  if (ycells < kMinCellResolution)
    throw ConfigError("cell problem needs at least " + std::to_string(kMinCellResolution) + " cells per axis");
  const FaceField K = cell_conductance(med, x, ycells);
  const Grid& g = K.grid;
  const Field r = cell_rhs(K, p);
  Field v(r.size(), 0.0);
  solve_periodic(K, r, v);
  double energy = 0.0;
  for (int d = 0; d < g.dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double grad = (v[g.neighbor(c, d, +1)] - v[c]) / g.h() + p[d];
      energy += K.k[d][c] * grad * grad;
    }
  return energy * g.cell_volume();
}

/// Effective tensors on the cell centres of a slow grid.
struct EffectiveTensors {
  Grid slow;
  bool x_independent = false;
  std::vector<EffectivePoint> points;  // one per slow cell, or a single entry if x_independent

  const EffectivePoint& at(std::size_t c) const { return points[x_independent ? 0 : c]; }
  Mat2 total(std::size_t c) const { return at(c).D_bar + at(c).G_bar; }
};

/// Eigenvalues of D-bar + G-bar must lie in [m_pi / C2, M_pi / C1]; throws NumericalError otherwise.
inline void check_effective_bounds(const Medium& med, const EffectivePoint& e, double pi_min, double pi_max) {
  const int dim = med.dim();
  const auto ev = (e.D_bar + e.G_bar).sym_eigenvalues(dim);
  const double lo = pi_min / med.mobility.upper_bound(), hi = pi_max / med.mobility.lower_bound();
  const double tol = 1e-9 * hi;
  if (!(ev[0] > 0.0)) throw NumericalError("effective tensor is not positive definite (cell grid too coarse?)");
  if (ev[0] < lo - tol || ev[1] > hi + tol)
    throw NumericalError("effective tensor eigenvalues [" + detail::fmt_double(ev[0]) + ", " + detail::fmt_double(ev[1]) +
                         "] outside [" + detail::fmt_double(lo) + ", " + detail::fmt_double(hi) + "]");
}

namespace detail {

inline Point slow_center(const Grid& slow, std::size_t c) {
  return {slow.center(c, 0), slow.dim == 2 ? slow.center(c, 1) : 0.0};
}

inline std::pair<double, double> pi_range(const Medium& med, const Point& x, int ycells) {
  double lo = 1e300, hi = -1e300;
  const Grid g(med.dim(), ycells);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const double v = med.density.two_scale(x, {g.center(c, 0), med.dim() == 2 ? g.center(c, 1) : 0.0});
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

}  // namespace detail

inline EffectivePoint effective_at(const Medium& med, const Point& x, int ycells) {
  const CellSolution s = solve_cell(med, x, ycells);
  const EffectivePoint e = effective_from_cell(s, average_pi(med.density, x));
  const auto [lo, hi] = detail::pi_range(med, x, ycells);
  check_effective_bounds(med, e, lo, hi);
  return e;
}

/// Uniform case pi_eps = pi0 + eps pi1: D = pi0(x) B^{-1} factors, so B-bar is computed from the
/// pi-free problem and is independent of pi0 by construction.
inline EffectivePoint effective_uniform_at(const Medium& med, const Point& x, int ycells) {
  if (med.density.variant() != StationaryDensity::Variant::uniform)
    throw ConfigError("uniform-case effective tensors need a density of the uniform variant");
  const Medium unit{med.mobility, StationaryDensity::general(med.dim(), expr::Expr::constant(1.0))};
  const CellSolution s = solve_cell(unit, x, ycells);
  const EffectivePoint base = effective_from_cell(s, 1.0);
  check_effective_bounds(unit, base, 1.0, 1.0);
  const double pi0 = med.density.two_scale(x, {});
  EffectivePoint e;
  e.pi_bar = pi0;
  e.D_bar = base.D_bar * pi0;
  e.G_bar = base.G_bar * pi0;
  e.B_bar = base.B_bar;
  return e;
}

inline EffectiveTensors effective_tensors(const Medium& med, const Grid& slow, int ycells, int threads = 1) {
  if (slow.dim != med.dim()) throw ConfigError("slow grid dimension differs from medium dimension");
  const bool uniform = med.density.variant() == StationaryDensity::Variant::uniform;
  EffectiveTensors t;
  t.slow = slow;
  t.x_independent = !med.density.depends_on_slow();
  auto one = [&](const Point& x) { return uniform ? effective_uniform_at(med, x, ycells) : effective_at(med, x, ycells); };
  if (t.x_independent) {
    t.points.push_back(one(detail::slow_center(slow, 0)));
    return t;
  }
  t.points.resize(slow.size());
  parallel_for(slow.size(), threads, [&](std::size_t c) { t.points[c] = one(detail::slow_center(slow, c)); });
  return t;
}

/// 1D closed form B-bar = pi-bar * int B / pi dy; kept apart from the PDE path as an oracle.
inline double effective_mobility_1d_closed_form(const Medium& med, const Point& x) {
  if (med.dim() != 1) throw ConfigError("closed-form effective mobility is 1D only");
  const StationaryDensity& pi = med.density;
  if (pi.variant() == StationaryDensity::Variant::uniform) {
    // pi0 factors out: B-bar = int B dy
    if (med.mobility.family() == MobilityTensor::Family::layered) {
      const auto& br = med.mobility.layer_breaks();
      const auto& v = med.mobility.layer_values();
      double s = 0.0;
      for (std::size_t k = 0; k < br.size(); ++k) s += ((k + 1 < br.size() ? br[k + 1] : 1.0) - br[k]) * v[k];
      return s;
    }
    return quad::periodic_mean([&](double y) { return med.mobility.scalar(y); });
  }
  const double pi_bar = average_pi(pi, x);
  if (med.mobility.family() == MobilityTensor::Family::layered) {
    // exact on each layer when pi is constant there; otherwise Gauss panels per layer
    const auto& br = med.mobility.layer_breaks();
    const auto& v = med.mobility.layer_values();
    double s = 0.0;
    for (std::size_t k = 0; k < br.size(); ++k) {
      const double hi = k + 1 < br.size() ? br[k + 1] : 1.0;
      s += v[k] * quad::composite_gauss([&](double y) { return 1.0 / pi.two_scale(x, {y, 0.0}); }, br[k], hi, 64);
    }
    return pi_bar * s;
  }
  return pi_bar * quad::periodic_mean([&](double y) { return med.mobility.scalar(y) / pi.two_scale(x, {y, 0.0}); });
}

/// Homogenised diffusion system on the slow grid: pi-bar on cells, (D-bar + G-bar)_dd at faces
/// (harmonic mean of the adjacent slow cells). Off-diagonal effective entries are rejected.
inline DiffusionSystem homogenized_system(const EffectiveTensors& t) {
  const Grid& g = t.slow;
  DiffusionSystem sys;
  sys.grid = g;
  sys.label = "homogenized";
  sys.pi.resize(g.size());
  std::array<Field, 2> cell;
  for (int d = 0; d < g.dim; ++d) cell[d].resize(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) {
    const Mat2 m = t.total(c);
    if (g.dim == 2 && std::fabs(m.a12) > 1e-10 * std::max(m.a11, m.a22))
      throw ConfigError("homogenised tensor has an off-diagonal part; the two-point flux scheme needs it diagonal");
    sys.pi[c] = t.at(c).pi_bar;
    cell[0][c] = m.a11;
    if (g.dim == 2) cell[1][c] = m.a22;
  }
  sys.conductance = harmonic_faces(g, cell);
  return sys;
}

}  // namespace wgfh

#endif  // WGFH_CELL_PROBLEM_HPP

#ifndef WGFH_GAMMA_HPP
#define WGFH_GAMMA_HPP

// Oscillatory Dirichlet energies: discrete minimisers, the periodic-affine cell energy, and the
// corrector-based recovery sequence with boundary cut-off on a partition of the torus.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wgfh/cell_problem.hpp"
#include "wgfh/error.hpp"
#include "wgfh/grid.hpp"
#include "wgfh/linalg.hpp"
#include "wgfh/media.hpp"
#include "wgfh/parallel.hpp"

namespace wgfh {

/// Minimise sum_edges a_e (du/h)^2 h^n over node values on [0,1]^dim with u = g on the boundary.
/// Nodes i h, i = 0..n; a_e = A_dd at the edge midpoint; edges lying in the boundary of the
/// square carry weight 1/2 (trapezoid rule in the transverse direction).
struct DirichletProblem {
  int dim = 1;
  int n = 64;  // intervals per axis
  std::function<Mat2(const Point&)> weight;
  std::function<double(const Point&)> boundary;
};

struct DirichletSolution {
  Field u;  // node values, row-major (n+1)^dim
  double energy = 0.0;
  int iterations = 0;
};

namespace detail {

struct NodeGraph {
  int dim, n;
  std::size_t nodes() const { return dim == 1 ? std::size_t(n + 1) : std::size_t(n + 1) * std::size_t(n + 1); }
  std::size_t id(int i, int j) const { return std::size_t(j) * std::size_t(n + 1) + std::size_t(i); }
  bool on_boundary(int i, int j) const {
    return i == 0 || i == n || (dim == 2 && (j == 0 || j == n));
  }
};

/// Edge list with conductance / h^2 already folded in, per axis.
struct EdgeSet {
  std::vector<std::size_t> a, b;
  std::vector<double> w;  // weight a_e * transverse trapezoid factor / h^2
};

inline EdgeSet build_edges(const DirichletProblem& p) {
  const NodeGraph g{p.dim, p.n};
  const double h = 1.0 / p.n;
  EdgeSet e;
  const int jmax = p.dim == 1 ? 0 : p.n;
  for (int j = 0; j <= jmax; ++j)
    for (int i = 0; i <= p.n; ++i) {
      for (int d = 0; d < p.dim; ++d) {
        const int ni = d == 0 ? i + 1 : i, nj = d == 1 ? j + 1 : j;
        if (ni > p.n || nj > p.n) continue;
        const Point mid{(i + ni) * 0.5 * h, (j + nj) * 0.5 * h};
        const Mat2 A = p.weight(mid);
        double w = (d == 0 ? A.a11 : A.a22) / (h * h);
        if (p.dim == 2) {
          const int transverse = d == 0 ? j : i;
          if (transverse == 0 || transverse == p.n) w *= 0.5;
        }
        e.a.push_back(g.id(i, j));
        e.b.push_back(g.id(ni, nj));
        e.w.push_back(w);
      }
    }
  return e;
}

inline void apply_edges(const EdgeSet& e, std::span<const double> u, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < e.w.size(); ++k) {
    const double flux = e.w[k] * (u[e.a[k]] - u[e.b[k]]);
    out[e.a[k]] += flux;
    out[e.b[k]] -= flux;
  }
}

inline double edge_energy(const EdgeSet& e, std::span<const double> u, double cell_volume) {
  double s = 0.0;
  for (std::size_t k = 0; k < e.w.size(); ++k) {
    const double du = u[e.a[k]] - u[e.b[k]];
    s += e.w[k] * du * du;
  }
  return s * cell_volume;
}

}  // namespace detail

inline DirichletSolution minimize_dirichlet(const DirichletProblem& p) {
  if (p.dim != 1 && p.dim != 2) throw ConfigError("Dirichlet problem dimension must be 1 or 2");
  if (p.n < 2) throw ConfigError("Dirichlet problem needs at least 2 intervals");
  if (!p.weight || !p.boundary) throw ConfigError("Dirichlet problem needs weight and boundary data");
  const detail::NodeGraph g{p.dim, p.n};
  const double h = 1.0 / p.n;
  const detail::EdgeSet edges = detail::build_edges(p);
  const std::size_t N = g.nodes();
  for (double w : edges.w)
    if (!(w > 0.0)) throw ConfigError("Dirichlet weight must be positive on every edge");

  std::vector<char> fixed(N, 0);
  Field gb(N, 0.0);
  const int jmax = p.dim == 1 ? 0 : p.n;
  for (int j = 0; j <= jmax; ++j)
    for (int i = 0; i <= p.n; ++i)
      if (g.on_boundary(i, j)) {
        fixed[g.id(i, j)] = 1;
        gb[g.id(i, j)] = p.boundary({i * h, j * h});
      }

  Field lg(N), rhs(N), diag(N, 0.0);
  detail::apply_edges(edges, gb, lg);
  for (std::size_t v = 0; v < N; ++v) rhs[v] = fixed[v] ? 0.0 : -lg[v];
  for (std::size_t k = 0; k < edges.w.size(); ++k) {
    diag[edges.a[k]] += edges.w[k];
    diag[edges.b[k]] += edges.w[k];
  }
  for (std::size_t v = 0; v < N; ++v)
    if (fixed[v]) diag[v] = 1.0;

  Field x(N, 0.0), tmp(N);
  CgOptions opt;
  opt.rtol = 1e-13;
  opt.max_iterations = std::max(20000, int(20 * N));
  const auto res = conjugate_gradient(
      [&](std::span<const double> u, std::span<double> out) {
        for (std::size_t v = 0; v < N; ++v) tmp[v] = fixed[v] ? 0.0 : u[v];
        detail::apply_edges(edges, tmp, out);
        for (std::size_t v = 0; v < N; ++v)
          if (fixed[v]) out[v] = u[v];
      },
      JacobiPrecond(diag), rhs, x, opt);

  DirichletSolution s;
  s.u.resize(N);
  for (std::size_t v = 0; v < N; ++v) s.u[v] = fixed[v] ? gb[v] : x[v];
  s.energy = detail::edge_energy(edges, s.u, p.dim == 1 ? h : h * h);
  s.iterations = res.iterations;
  return s;
}

/// min over periodic v of sum_faces A_f (dv/h + p_d)^2 h^n on the unit torus: <A-bar p, p> of the
/// cell-centred two-point flux discretisation with A sampled at face centres.
inline double minimize_periodic_affine(const std::function<Mat2(const Point&)>& A, std::span<const double> p, int dim,
                                       int cells) {
  const Grid g(dim, cells);
  FaceField K = FaceField::zeros(g);
  for (int d = 0; d < dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      Point y{g.center(c, 0), dim == 2 ? g.center(c, 1) : 0.0};
      (d == 0 ? y.c1 : y.c2) = double(g.coord(c, d) + 1) / cells;
      const Mat2 a = A(y);
      K.k[d][c] = d == 0 ? a.a11 : a.a22;
    }
  // Euler-Lagrange: A v = -div(A p); assembled directly from the face flux of the affine part
  Field r(g.size(), 0.0);
  for (int d = 0; d < dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double flux = K.k[d][c] * p[d] / g.h();
      r[c] += flux;
      r[g.neighbor(c, d, +1)] -= flux;
    }
  Field v(g.size(), 0.0);
  CgOptions opt;
  opt.rtol = 1e-14;
  opt.project_mean = true;
  opt.max_iterations = std::max(20000, int(20 * g.size()));
  conjugate_gradient([&](std::span<const double> u, std::span<double> out) { apply_stiffness(K, u, out); },
                     JacobiPrecond(stiffness_diagonal(K)), r, v, opt);
  double e = 0.0;
  for (int d = 0; d < dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double grad = (v[g.neighbor(c, d, +1)] - v[c]) / g.h() + p[d];
      e += K.k[d][c] * grad * grad;
    }
  return e * g.cell_volume();
}

/// Continuous, periodic piecewise-affine function on the torus: `pieces` equal slabs along x1;
/// on slab j, xi = offset_j + <slope_j, x>.
struct PiecewiseAffine {
  int dim = 1;
  std::vector<double> breaks;  // slab starts along x1, ascending, breaks[0] = 0
  std::vector<std::array<double, 2>> slopes;
  std::vector<double> offsets;

  std::size_t pieces() const { return breaks.size(); }

  std::size_t piece_of(double x1) const {
    const double s = x1 - std::floor(x1);
    std::size_t k = breaks.size() - 1;
    while (k > 0 && s < breaks[k]) --k;
    return k;
  }
  double slab_end(std::size_t j) const { return j + 1 < breaks.size() ? breaks[j + 1] : 1.0; }

  double value(const Point& x) const {
    const std::size_t j = piece_of(x.c1);
    return offsets[j] + slopes[j][0] * x.c1 + (dim == 2 ? slopes[j][1] * x.c2 : 0.0);
  }

  /// Tent xi = s x1 on [0, 1/2), s (1 - x1) on [1/2, 1): continuous and periodic.
  static PiecewiseAffine tent(int dim, double s) {
    PiecewiseAffine t;
    t.dim = dim;
    t.breaks = {0.0, 0.5};
    t.slopes = {{s, 0.0}, {-s, 0.0}};
    t.offsets = {0.0, s};
    return t;
  }
};

/// Quintic smoothstep: 0 for t <= 0, 1 for t >= 1, C^2 in between.
inline double smoothstep5(double t) noexcept {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

struct RecoveryOptions {
  double d1 = 2.0, d2 = 4.0;
  int cells_per_period = 32;  // corrector grid; the x grid uses the same spacing eps / cells_per_period
  int threads = 1;
  std::function<double(const Point&)> weight;  // f; averaged per slab to f-bar_c (default 1)
};

struct RecoveryResult {
  double eps = 0.0;
  double energy_eps = 0.0;    // F_eps(xi_eps) = sum K_eps (grad xi_eps)^2 f-bar_c h^n
  double energy_limit = 0.0;  // F(xi) = sum_j f-bar_j int_Cj <A-bar p_j, p_j>
  double error = 0.0;
  double gradient_ratio = 0.0;  // max |grad_h xi_eps| / max |grad xi|
  double l2_distance = 0.0;     // || xi_eps - xi ||_L2
};

namespace detail {

struct CorrectorBank {
  // per slow block (or a single entry), unit correctors w_k on the y grid
  bool x_independent = true;
  int blocks = 1;  // per axis
  std::vector<CellSolution> cells;
  const CellSolution& at(int bi, int bj) const {
    return x_independent ? cells[0] : cells[std::size_t(bj) * std::size_t(blocks) + std::size_t(bi)];
  }
};

}  // namespace detail

/// Builds xi_eps = xi + eps eta_j |p_j| w-hat_j(x, x/eps) on the torus with cells of size eps / P,
/// then evaluates F_eps(xi_eps) and F(xi). For x-dependent media the corrector is frozen on each
/// eps-period block at the block centre.
inline RecoveryResult build_recovery(const PiecewiseAffine& xi, const Medium& med, double eps,
                                     const RecoveryOptions& opt = {}) {
  const int dim = med.dim();
  if (xi.dim != dim) throw ConfigError("affine data and medium dimensions differ");
  if (!(opt.d1 > 0.0) || !(opt.d2 > opt.d1)) throw ConfigError("cut-off needs 0 < d1 < d2");
  const int m = periods_for(eps);
  const int P = opt.cells_per_period;
  if (P < kMinCellResolution) throw ConfigError("recovery corrector grid needs at least 32 cells per period");
  double min_width = 1.0;
  for (std::size_t j = 0; j < xi.pieces(); ++j) min_width = std::min(min_width, xi.slab_end(j) - xi.breaks[j]);
  // slabs span the torus in x2, so their inradius is half the slab width
  if (!(opt.d2 * eps < 0.25 * min_width))
    throw ConfigError("partition too fine for eps: need d2 eps < half the inradius of every piece");
  for (double b : xi.breaks)
    if (std::fabs(b * m - std::round(b * m)) > 1e-9)
      throw ConfigError("partition breaks must lie on eps-period boundaries");

  const int N = m * P;
  const Grid g(dim, N);
  const double h = g.h();

  // correctors
  detail::CorrectorBank bank;
  bank.x_independent = !med.density.depends_on_slow();
  const bool uniform = med.density.variant() == StationaryDensity::Variant::uniform;
  const Medium cell_medium =
      uniform ? Medium{med.mobility, StationaryDensity::general(dim, expr::Expr::constant(1.0))} : med;
  if (bank.x_independent) {
    bank.cells.push_back(solve_cell(cell_medium, {0.5, 0.5}, P));
  } else {
    bank.blocks = m;
    const std::size_t count = dim == 1 ? std::size_t(m) : std::size_t(m) * std::size_t(m);
    bank.cells.resize(count);
    parallel_for(count, opt.threads, [&](std::size_t b) {
      const int bi = int(b % std::size_t(m)), bj = int(b / std::size_t(m));
      bank.cells[b] = solve_cell(cell_medium, {(bi + 0.5) * eps, dim == 2 ? (bj + 0.5) * eps : 0.0}, P);
    });
  }

  // slab weights f-bar_j
  std::vector<double> fbar(xi.pieces(), 1.0);
  if (opt.weight) {
    for (std::size_t j = 0; j < xi.pieces(); ++j) {
      const double a = xi.breaks[j], b = xi.slab_end(j);
      if (dim == 1) {
        fbar[j] = quad::composite_gauss([&](double s) { return opt.weight({s, 0.0}); }, a, b, 64) / (b - a);
      } else {
        fbar[j] = quad::composite_gauss(
                      [&](double s) {
                        return quad::composite_gauss([&](double t) { return opt.weight({s, t}); }, 0.0, 1.0, 32);
                      },
                      a, b, 64) /
                  (b - a);
      }
    }
  }

  // A-bar per slab: discrete cell energies <A-bar_h p_j, p_j> from the same y grid
  RecoveryResult r;
  r.eps = eps;
  {
    double limit = 0.0;
    for (std::size_t j = 0; j < xi.pieces(); ++j) {
      const double width = xi.slab_end(j) - xi.breaks[j];
      const auto& p = xi.slopes[j];
      if (bank.x_independent) {
        const EffectivePoint e = effective_from_cell(bank.cells[0], 1.0);
        Mat2 tot = e.D_bar + e.G_bar;
        if (uniform) tot = tot * med.density.two_scale({0.5, 0.5}, {});
        limit += fbar[j] * width * tot.quad(p, dim);
      } else {
        // slow quadrature of A-bar(x) on a fixed 32-point midpoint grid per axis within the slab
        const int q = 32;
        double acc = 0.0;
        const int qy = dim == 2 ? q : 1;
        for (int b = 0; b < qy; ++b)
          for (int a = 0; a < q; ++a) {
            const Point x{xi.breaks[j] + (a + 0.5) * width / q, dim == 2 ? (b + 0.5) / q : 0.0};
            const EffectivePoint e = effective_from_cell(solve_cell(cell_medium, x, P), 1.0);
            Mat2 tot = e.D_bar + e.G_bar;
            if (uniform) tot = tot * med.density.two_scale(x, {});
            acc += tot.quad(p, dim);
          }
        limit += fbar[j] * width * acc / (double(q) * qy);
      }
    }
    r.energy_limit = limit;
  }

  // xi_eps at a cell
  auto cutoff = [&](double x1, std::size_t j) {
    const double dist = std::min(x1 - xi.breaks[j], xi.slab_end(j) - x1);
    return smoothstep5((dist / eps - opt.d1) / (opt.d2 - opt.d1));
  };
  auto value = [&](int i, int jj) {
    const double x1 = (i + 0.5) * h, x2 = dim == 2 ? (jj + 0.5) * h : 0.0;
    const std::size_t piece = xi.piece_of(x1);
    const auto& p = xi.slopes[piece];
    double v = xi.offsets[piece] + p[0] * x1 + (dim == 2 ? p[1] * x2 : 0.0);
    const double eta = cutoff(x1, piece);
    if (eta > 0.0) {
      const CellSolution& cs = bank.at(i / P, dim == 2 ? jj / P : 0);
      const std::size_t yc = cs.conductance.grid.index(i % P, dim == 2 ? jj % P : 0);
      // |p| w-hat_j = sum_k p_k w_k by linearity of the cell problem
      double w = p[0] * cs.w[0][yc];
      if (dim == 2) w += p[1] * cs.w[1][yc];
      v += eps * eta * w;
    }
    return v;
  };

  // energy and gradient bound, face by face without storing the field
  double energy = 0.0, grad_max = 0.0, l2 = 0.0;
  double grad_xi_max = 0.0;
  for (std::size_t j = 0; j < xi.pieces(); ++j)
    grad_xi_max = std::max(grad_xi_max, std::hypot(xi.slopes[j][0], dim == 2 ? xi.slopes[j][1] : 0.0));
  const int rows = dim == 2 ? N : 1;
  for (int jj = 0; jj < rows; ++jj) {
    for (int i = 0; i < N; ++i) {
      const double here = value(i, jj);
      const double exact = xi.value({(i + 0.5) * h, dim == 2 ? (jj + 0.5) * h : 0.0});
      l2 += (here - exact) * (here - exact);
      double g2 = 0.0;
      for (int d = 0; d < dim; ++d) {
        const int ni = d == 0 ? (i + 1) % N : i, nj = d == 1 ? (jj + 1) % N : jj;
        const double there = value(ni, nj);
        const double grad = (there - here) / h;
        // A_eps at the face centre
        Point xf{(i + 0.5) * h, dim == 2 ? (jj + 0.5) * h : 0.0};
        Point yf{((i % P) + 0.5) / P, dim == 2 ? ((jj % P) + 0.5) / P : 0.0};
        if (d == 0) {
          xf.c1 = double(i + 1) * h;
          yf.c1 = double((i % P) + 1) / P;
        } else {
          xf.c2 = double(jj + 1) * h;
          yf.c2 = double((jj % P) + 1) / P;
        }
        const double k = face_conductance(med, xf, yf, eps, d);
        // f-bar_c at the face: mean of the adjacent cells' slab values
        const double wf = 0.5 * (fbar[xi.piece_of((i + 0.5) * h)] + fbar[xi.piece_of((ni + 0.5) * h)]);
        energy += k * grad * grad * wf;
        g2 += grad * grad;
      }
      grad_max = std::max(grad_max, std::sqrt(g2));
    }
  }
  r.energy_eps = energy * g.cell_volume();
  r.error = std::fabs(r.energy_eps - r.energy_limit);
  r.gradient_ratio = grad_xi_max > 0.0 ? grad_max / grad_xi_max : 0.0;
  r.l2_distance = std::sqrt(l2 * g.cell_volume());
  return r;
}

/// F_eps(v) = sum_faces K_eps (grad v)^2 h^n for a fixed smooth v sampled on the resonant grid.
inline double oscillatory_energy(const std::function<double(const Point&)>& v, const Medium& med, double eps, int cells) {
  const SampledMedium s = sample_medium(med, eps, cells);
  Field u(s.grid.size());
  for (std::size_t c = 0; c < u.size(); ++c) u[c] = v({s.grid.center(c, 0), s.grid.dim == 2 ? s.grid.center(c, 1) : 0.0});
  return dirichlet_energy(s.conductance, u);
}

/// Liminf evidence: F_eps(v_eps) >= F(v) - delta(eps), delta(eps) = max(0, F(v) - F_eps) nonincreasing.
struct LiminfReport {
  std::vector<double> eps, energy, delta;
  double limit = 0.0;
  bool lower_bound_holds = true;  // delta nonincreasing along the list
};

inline LiminfReport gamma_liminf_check(const std::vector<double>& eps, const std::vector<double>& energies, double limit,
                                       double tol = 1e-12) {
  if (eps.size() != energies.size()) throw ConfigError("liminf check needs one energy per eps");
  LiminfReport r;
  r.eps = eps;
  r.energy = energies;
  r.limit = limit;
  for (double e : energies) r.delta.push_back(std::max(0.0, limit - e));
  for (std::size_t k = 1; k < r.delta.size(); ++k)
    if (r.delta[k] > r.delta[k - 1] + tol * std::max(1.0, std::fabs(limit))) r.lower_bound_holds = false;
  return r;
}

}  // namespace wgfh

#endif  // WGFH_GAMMA_HPP

#ifndef WGFH_METRIC_HPP
#define WGFH_METRIC_HPP

// Metrics induced by the oscillatory medium: d_eps, its pointwise limit d_GH, the flow metric
// d-bar, 1D Wasserstein distances through isometries, and lattice geodesics on the checkerboard.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <queue>
#include <span>
#include <vector>

#include "wgfh/cell_problem.hpp"
#include "wgfh/error.hpp"
#include "wgfh/linalg.hpp"
#include "wgfh/media.hpp"
#include "wgfh/quadrature.hpp"

namespace wgfh {

/// One-period antiderivative Psi(s) = int_0^s sqrt(B(z)) dz of a 1D mobility, s in [0,1].
class SqrtAntiderivative {
public:
  explicit SqrtAntiderivative(const MobilityTensor& b, int nodes = 4096) : b_(b) {
    if (b.dim() != 1) throw ConfigError("antiderivative of sqrt(B) is defined for 1D media");
    if (b.family() == MobilityTensor::Family::layered) {
      const auto& br = b.layer_breaks();
      const auto& v = b.layer_values();
      nodes_ = br;
      nodes_.push_back(1.0);
      table_.assign(nodes_.size(), 0.0);
      for (std::size_t k = 0; k < br.size(); ++k) table_[k + 1] = table_[k] + (nodes_[k + 1] - nodes_[k]) * std::sqrt(v[k]);
      return;
    }
    nodes_.resize(nodes + 1);
    table_.assign(nodes + 1, 0.0);
    for (int k = 0; k <= nodes; ++k) nodes_[k] = double(k) / nodes;
    for (int k = 0; k < nodes; ++k) table_[k + 1] = table_[k] + piece(nodes_[k], nodes_[k + 1]);
  }

  /// int_0^1 sqrt(B).
  double total() const noexcept { return table_.back(); }

  double operator()(double s) const {
    if (s <= 0.0) return 0.0;
    if (s >= 1.0) return total();
    const std::size_t k = std::size_t(std::upper_bound(nodes_.begin(), nodes_.end(), s) - nodes_.begin()) - 1;
    if (b_.family() == MobilityTensor::Family::layered)
      return table_[k] + (s - nodes_[k]) * std::sqrt(b_.layer_values()[k]);
    return table_[k] + piece(nodes_[k], s);
  }

private:
  double piece(double a, double b) const {
    return quad::gauss_legendre([&](double z) { return std::sqrt(b_.scalar(z)); }, a, b);
  }

  MobilityTensor b_;
  std::vector<double> nodes_, table_;
};

/// C-bar = (int sqrt(B) dy)^2.
inline double d_gh_coefficient(const MobilityTensor& b) {
  const SqrtAntiderivative psi(b);
  return psi.total() * psi.total();
}

/// Phi_eps(x) = int_0^x sqrt(B(z / eps)) dz on the real line.
class EpsIsometry {
public:
  EpsIsometry(const MobilityTensor& b, double eps) : psi_(std::make_shared<SqrtAntiderivative>(b)), eps_(eps) {
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  }
  double operator()(double x) const {
    const double u = x / eps_;
    const double k = std::floor(u);
    return eps_ * (k * psi_->total() + (*psi_)(u - k));
  }
  double eps() const noexcept { return eps_; }

private:
  std::shared_ptr<SqrtAntiderivative> psi_;
  double eps_;
};

/// d_eps(x, y) = |int_x^y sqrt(B_eps)|; on the torus the shorter of the two arcs (eps = 1/m required).
inline double d_eps_1d(const MobilityTensor& b, double eps, double x, double y, bool torus = false) {
  const EpsIsometry phi(b, eps);
  const double direct = std::fabs(phi(y) - phi(x));
  if (!torus) return direct;
  periods_for(eps);
  const double loop = phi(1.0);
  return std::min(direct, loop - direct);
}

inline double d_gh_1d(double c_bar, double x, double y) { return std::sqrt(c_bar) * std::fabs(y - x); }

/// d-bar(x, y) = sqrt(<B-bar (y - x), y - x>).
inline double d_bar(const Mat2& b_bar, int dim, const Point& x, const Point& y) {
  const double v[2] = {y.c1 - x.c1, y.c2 - x.c2};
  return std::sqrt(b_bar.quad(v, dim));
}

/// Cost of a 1D transport problem, given by an increasing isometry Phi onto a Euclidean line.
struct TransportCost {
  std::function<double(double)> phi;
  double resolution = 1.0;  // length scale over which phi must be resolved by quadrature

  static TransportCost euclidean() { return {[](double x) { return x; }, 1.0}; }
  static TransportCost scaled(double factor) { return {[factor](double x) { return factor * x; }, 1.0}; }
  static TransportCost d_gh(double c_bar) { return scaled(std::sqrt(c_bar)); }
  static TransportCost d_bar(double b_bar) { return scaled(std::sqrt(b_bar)); }
  static TransportCost d_eps(const MobilityTensor& b, double eps) { return {EpsIsometry(b, eps), eps / 16.0}; }
};

namespace detail {

/// Cumulative masses at cell edges of a cell-average density on [0,1] (normalised to 1).
inline std::vector<double> edge_cdf(std::span<const double> rho) {
  const std::size_t n = rho.size();
  const double h = 1.0 / double(n);
  std::vector<double> F(n + 1, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    if (rho[c] < 0.0) throw ConfigError("transport densities must be nonnegative");
    F[c + 1] = F[c] + rho[c] * h;
  }
  const double total = F[n];
  if (std::fabs(total - 1.0) > 1e-10) throw ConfigError("transport densities must have unit mass");
  for (double& v : F) v /= total;
  F[n] = 1.0;
  return F;
}

/// Left-continuous inverse of the piecewise-linear CDF through (edge, F).
inline double quantile(const std::vector<double>& F, double u) {
  const std::size_t n = F.size() - 1;
  auto it = std::lower_bound(F.begin() + 1, F.end(), u);
  std::size_t k = std::size_t(it - F.begin()) - 1;
  if (k >= n) k = n - 1;
  const double dF = F[k + 1] - F[k];
  const double lo = double(k) / double(n);
  if (dF <= 0.0) return lo;
  return lo + (u - F[k]) / dF / double(n);
}

/// End values on [a, b] of the linear branch of the quantile containing (a + b) / 2.
inline std::pair<double, double> quantile_piece(const std::vector<double>& F, double a, double b) {
  const std::size_t n = F.size() - 1;
  const double mid = 0.5 * (a + b);
  auto it = std::lower_bound(F.begin() + 1, F.end(), mid);
  std::size_t k = std::min<std::size_t>(std::size_t(it - F.begin()) - 1, n - 1);
  const double dF = F[k + 1] - F[k];
  const double lo = double(k) / double(n);
  if (dF <= 0.0) return {lo, lo};
  return {lo + (a - F[k]) / dF / double(n), lo + (b - F[k]) / dF / double(n)};
}

}  // namespace detail

/// W between two cell-average densities on the line [0,1] under the cost induced by `cost`:
/// W^2 = int_0^1 (Phi(Q0(u)) - Phi(Q1(u)))^2 du with piecewise-linear quantiles Q0, Q1.
inline double wasserstein_1d(std::span<const double> rho0, std::span<const double> rho1, const TransportCost& cost) {
  const auto F0 = detail::edge_cdf(rho0);
  const auto F1 = detail::edge_cdf(rho1);
  std::vector<double> u(F0.begin(), F0.end());
  u.insert(u.end(), F1.begin(), F1.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < u.size(); ++k) {
    const double a = u[k], b = u[k + 1];
    if (b <= a) continue;
    // both quantiles are linear on [a, b]; subdivide so Phi is resolved along each
    const auto [q0a, q0b] = detail::quantile_piece(F0, a, b);
    const auto [q1a, q1b] = detail::quantile_piece(F1, a, b);
    const double span = std::max(std::fabs(q0b - q0a), std::fabs(q1b - q1a));
    const int pieces = std::clamp(int(std::ceil(span / cost.resolution)), 1, 1 << 16);
    s += quad::composite_gauss(
        [&](double v) {
          const double w = (v - a) / (b - a);
          const double d = cost.phi(q0a + w * (q0b - q0a)) - cost.phi(q1a + w * (q1b - q1a));
          return d * d;
        },
        a, b, pieces);
  }
  return std::sqrt(std::max(0.0, s));
}

/// 1D gap between the flow metric and the pointwise limit.
struct MetricReport1D {
  double c_bar = 0.0;  // (int sqrt B)^2
  double b_bar = 0.0;  // effective mobility
  double gap = 0.0;    // b_bar - c_bar
  bool equality = false;  // pi = c sqrt(B)
};

/// True when pi / sqrt(B) is constant in y (relative sup deviation < 1e-10) at slow point x.
inline bool sqrt_relation_holds(const Medium& med, const Point& x, int points = 4096) {
  std::vector<double> r(points);
  double mean = 0.0;
  for (int k = 0; k < points; ++k) {
    const double y = (k + 0.5) / points;
    r[k] = med.density.two_scale(x, {y, 0.0}) / std::sqrt(med.mobility.scalar(y));
    mean += r[k];
  }
  mean /= points;
  double dev = 0.0;
  for (double v : r) dev = std::max(dev, std::fabs(v - mean));
  return dev / mean < 1e-10;
}

inline MetricReport1D gap_report(const Medium& med, const Point& x = {0.5, 0.0}, int ycells = 256) {
  if (med.dim() != 1) throw ConfigError("gap report is defined for 1D media");
  MetricReport1D r;
  r.c_bar = d_gh_coefficient(med.mobility);
  const auto e = med.density.variant() == StationaryDensity::Variant::uniform ? effective_uniform_at(med, x, ycells)
                                                                             : effective_at(med, x, ycells);
  r.b_bar = e.B_bar.a11;
  r.gap = r.b_bar - r.c_bar;
  r.equality = sqrt_relation_holds(med, x);
  return r;
}

/// Lattice over [0,1]^2 with `per_period` nodes per eps-period; edges on the skeleton lines
/// (coordinates in eps Z) cost sqrt(alpha) per unit length, all others sqrt(beta).
struct GeodesicGrid2D {
  double eps = 1.0;
  int per_period = 8;
  double alpha = 1.0, beta = 1.0;

  int side() const { return periods_for(eps) * per_period; }  // intervals per axis
  double spacing() const { return 1.0 / side(); }
};

/// Dijkstra distance from `source` to `target` (both snapped to the nearest node).
inline double checkerboard_geodesic(const GeodesicGrid2D& grid, const Point& source, const Point& target) {
  if (!(grid.alpha > 0.0) || !(grid.beta > 0.0)) throw ConfigError("checkerboard weights must be positive");
  if (grid.per_period < 1) throw ConfigError("checkerboard lattice needs at least one node per period");
  const int n = grid.side();
  const int nodes = n + 1;
  const double s = grid.spacing();
  const double wa = std::sqrt(grid.alpha) * s, wb = std::sqrt(grid.beta) * s;
  auto snap = [&](double v) { return std::clamp(int(std::lround(v * n)), 0, n); };
  const std::size_t src = std::size_t(snap(source.c2)) * nodes + snap(source.c1);
  const std::size_t dst = std::size_t(snap(target.c2)) * nodes + snap(target.c1);

  std::vector<double> dist(std::size_t(nodes) * nodes, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[src] = 0.0;
  heap.push({0.0, src});
  while (!heap.empty()) {
    const auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    if (v == dst) return d;
    const int i = int(v % nodes), j = int(v / nodes);
    auto relax = [&](int ni, int nj, double w) {
      if (ni < 0 || nj < 0 || ni > n || nj > n) return;
      const std::size_t u = std::size_t(nj) * nodes + ni;
      if (d + w < dist[u]) {
        dist[u] = d + w;
        heap.push({dist[u], u});
      }
    };
    // horizontal edges lie on the line y = j s, vertical ones on x = i s
    const double wh = j % grid.per_period == 0 ? wa : wb;
    const double wv = i % grid.per_period == 0 ? wa : wb;
    relax(i + 1, j, wh);
    relax(i - 1, j, wh);
    relax(i, j + 1, wv);
    relax(i, j - 1, wv);
  }
  throw NumericalError("checkerboard lattice is disconnected");
}

}  // namespace wgfh

#endif  // WGFH_METRIC_HPP

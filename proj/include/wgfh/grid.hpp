#ifndef WGFH_GRID_HPP
#define WGFH_GRID_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "wgfh/error.hpp"

namespace wgfh {

using Field = std::vector<double>;

/// Uniform cell-centred grid on the unit torus [0,1)^dim, dim in {1,2}.
struct Grid {
  int dim = 1;
  int n = 0;  // cells per axis

  Grid() = default;
  Grid(int dimension, int cells) : dim(dimension), n(cells) {
    if (dim != 1 && dim != 2) throw ConfigError("grid dimension must be 1 or 2");
    if (n < 3) throw ConfigError("grid needs at least 3 cells per axis");
  }

  double h() const noexcept { return 1.0 / n; }
  std::size_t size() const noexcept { return dim == 1 ? std::size_t(n) : std::size_t(n) * std::size_t(n); }
  double cell_volume() const noexcept { return dim == 1 ? h() : h() * h(); }

  std::size_t index(int i, int j = 0) const noexcept { return std::size_t(j) * std::size_t(n) + std::size_t(i); }
  int coord(std::size_t c, int d) const noexcept { return d == 0 ? int(c % std::size_t(n)) : int(c / std::size_t(n)); }

  /// Periodic neighbour of cell `c` one step along axis `d` (step = +1 or -1).
  std::size_t neighbor(std::size_t c, int d, int step) const noexcept {
    const int i = coord(c, 0);
    if (d == 0) {
      const int ni = (i + step + n) % n;
      return c - std::size_t(i) + std::size_t(ni);
    }
    const int j = coord(c, 1);
    const int nj = (j + step + n) % n;
    return index(i, nj);
  }

  double center(std::size_t c, int d) const noexcept { return (coord(c, d) + 0.5) * h(); }

  bool operator==(const Grid&) const = default;
};

inline double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Integral over the torus of a cell field (midpoint rule).
inline double integrate(const Grid& g, std::span<const double> v) { return sum(v) * g.cell_volume(); }

/// Face field: k[d][c] lives on the face between cell c and its +1 neighbour along axis d.
struct FaceField {
  Grid grid;
  std::array<Field, 2> k;

  static FaceField zeros(const Grid& g) {
    FaceField f{g, {}};
    for (int d = 0; d < g.dim; ++d) f.k[d].assign(g.size(), 0.0);
    return f;
  }
};

inline double harmonic_mean(double a, double b) noexcept { return (a + b) > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

/// Face values as harmonic means of adjacent cell values, axis by axis.
inline FaceField harmonic_faces(const Grid& g, const std::array<Field, 2>& cell_values) {
  FaceField f = FaceField::zeros(g);
  for (int d = 0; d < g.dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c)
      f.k[d][c] = harmonic_mean(cell_values[d][c], cell_values[d][g.neighbor(c, d, +1)]);
  return f;
}

/// out = A u with A the two-point-flux stiffness: <A u, v> h^n = sum_faces k du dv / h^2 * h^n.
inline void apply_stiffness(const FaceField& K, std::span<const double> u, std::span<double> out) {
  const Grid& g = K.grid;
  const double inv_h2 = 1.0 / (g.h() * g.h());
  for (std::size_t c = 0; c < g.size(); ++c) out[c] = 0.0;
  for (int d = 0; d < g.dim; ++d) {
    const Field& k = K.k[d];
    for (std::size_t c = 0; c < g.size(); ++c) {
      const std::size_t nb = g.neighbor(c, d, +1);
      const double flux = k[c] * (u[c] - u[nb]) * inv_h2;
      out[c] += flux;
      out[nb] -= flux;
    }
  }
}

/// Diagonal of the stiffness matrix.
inline Field stiffness_diagonal(const FaceField& K) {
  const Grid& g = K.grid;
  const double inv_h2 = 1.0 / (g.h() * g.h());
  Field diag(g.size(), 0.0);
  for (int d = 0; d < g.dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      diag[c] += K.k[d][c] * inv_h2;
      diag[g.neighbor(c, d, +1)] += K.k[d][c] * inv_h2;
    }
  return diag;
}

/// Discrete Dirichlet energy sum_faces k (du/h)^2 h^n.
inline double dirichlet_energy(const FaceField& K, std::span<const double> u) {
  const Grid& g = K.grid;
  const double inv_h = 1.0 / g.h();
  double s = 0.0;
  for (int d = 0; d < g.dim; ++d)
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double du = (u[g.neighbor(c, d, +1)] - u[c]) * inv_h;
      s += K.k[d][c] * du * du;
    }
  return s * g.cell_volume();
}

}  // namespace wgfh

#endif  // WGFH_GRID_HPP

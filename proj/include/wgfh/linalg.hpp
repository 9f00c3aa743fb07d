#ifndef WGFH_LINALG_HPP
#define WGFH_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wgfh/error.hpp"
#include "wgfh/grid.hpp"

namespace wgfh {

/// Small 2x2 matrix; 1D problems use only a11.
struct Mat2 {
  double a11 = 0.0, a12 = 0.0, a21 = 0.0, a22 = 0.0;

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 diag(double d1, double d2) { return {d1, 0.0, 0.0, d2}; }
  static Mat2 scalar(double s) { return diag(s, s); }

  double operator()(int i, int j) const noexcept {
    return i == 0 ? (j == 0 ? a11 : a12) : (j == 0 ? a21 : a22);
  }
  double& operator()(int i, int j) noexcept { return i == 0 ? (j == 0 ? a11 : a12) : (j == 0 ? a21 : a22); }

  Mat2 operator+(const Mat2& o) const { return {a11 + o.a11, a12 + o.a12, a21 + o.a21, a22 + o.a22}; }
  Mat2 operator-(const Mat2& o) const { return {a11 - o.a11, a12 - o.a12, a21 - o.a21, a22 - o.a22}; }
  Mat2 operator*(double s) const { return {a11 * s, a12 * s, a21 * s, a22 * s}; }

  double det(int dim) const noexcept { return dim == 1 ? a11 : a11 * a22 - a12 * a21; }

  Mat2 inverse(int dim) const {
    const double d = det(dim);
    if (d == 0.0 || !std::isfinite(d)) throw NumericalError("singular 2x2 matrix");
    if (dim == 1) return {1.0 / a11, 0.0, 0.0, 0.0};
    return {a22 / d, -a12 / d, -a21 / d, a11 / d};
  }

  double quad(std::span<const double> p, int dim) const noexcept {
    if (dim == 1) return a11 * p[0] * p[0];
    return a11 * p[0] * p[0] + (a12 + a21) * p[0] * p[1] + a22 * p[1] * p[1];
  }

  /// Eigenvalues of the symmetric part, ascending.
  std::array<double, 2> sym_eigenvalues(int dim) const noexcept {
    if (dim == 1) return {a11, a11};
    const double off = 0.5 * (a12 + a21);
    const double mean = 0.5 * (a11 + a22);
    const double rad = std::hypot(0.5 * (a11 - a22), off);
    return {mean - rad, mean + rad};
  }
};

struct CgOptions {
  double rtol = 1e-13;
  double atol = 1e-300;
  int max_iterations = 20000;
  bool project_mean = false;  // singular torus operator: work in the mean-zero subspace
};

struct CgResult {
  int iterations = 0;
  double residual = 0.0;
};

inline void remove_mean(std::span<double> v) {
  const double m = sum(v) / double(v.size());
  for (double& x : v) x -= m;
}

/// Preconditioned conjugate gradients for a symmetric positive (semi)definite operator.
/// `apply(x, y)` writes y = A x; `precond(r, z)` writes z = M^{-1} r.
template <typename Apply, typename Precond>
CgResult conjugate_gradient(Apply&& apply, Precond&& precond, std::span<const double> b, std::span<double> x,
                            const CgOptions& opt = {}) {
  const std::size_t n = b.size();
  std::vector<double> r(b.begin(), b.end()), z(n), p(n), q(n);
  if (opt.project_mean) {
    remove_mean(r);
    remove_mean(x);
  }
  const double bnorm = std::sqrt(dot(r, r));
  apply(std::span<const double>(x.data(), n), std::span<double>(q));
  for (std::size_t i = 0; i < n; ++i) r[i] -= q[i];
  if (opt.project_mean) remove_mean(r);

  const double target = std::max(opt.rtol * bnorm, opt.atol);
  double rnorm = std::sqrt(dot(r, r));
  if (rnorm <= target) return {0, rnorm};

  precond(std::span<const double>(r), std::span<double>(z));
  if (opt.project_mean) remove_mean(z);
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    apply(std::span<const double>(p), std::span<double>(q));
    const double pq = dot(p, q);
    if (!(pq > 0.0)) throw NumericalError("conjugate gradients broke down (non-positive curvature)");
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    if (opt.project_mean) remove_mean(r);
    rnorm = std::sqrt(dot(r, r));
    if (rnorm <= target) {
      if (opt.project_mean) remove_mean(x);
      return {it, rnorm};
    }
    precond(std::span<const double>(r), std::span<double>(z));
    if (opt.project_mean) remove_mean(z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw NumericalError("conjugate gradients did not converge in " + std::to_string(opt.max_iterations) +
                       " iterations (residual " + std::to_string(rnorm) + ", target " + std::to_string(target) + ")");
}

/// Jacobi preconditioner functor.
struct JacobiPrecond {
  std::vector<double> inv_diag;
  explicit JacobiPrecond(std::span<const double> diag) : inv_diag(diag.size()) {
    for (std::size_t i = 0; i < diag.size(); ++i) inv_diag[i] = diag[i] > 0.0 ? 1.0 / diag[i] : 1.0;
  }
  void operator()(std::span<const double> r, std::span<double> z) const {
    for (std::size_t i = 0; i < r.size(); ++i) z[i] = inv_diag[i] * r[i];
  }
};

struct IdentityPrecond {
  void operator()(std::span<const double> r, std::span<double> z) const { std::copy(r.begin(), r.end(), z.begin()); }
};

/// Thomas algorithm for a non-periodic tridiagonal system; `lower[0]` and `upper[n-1]` are ignored.
inline std::vector<double> solve_tridiagonal(std::span<const double> lower, std::span<const double> diag,
                                             std::span<const double> upper, std::span<const double> rhs) {
  const std::size_t n = diag.size();
  std::vector<double> c(n), d(n), x(n);
  double denom = diag[0];
  if (denom == 0.0) throw NumericalError("tridiagonal solve: zero pivot");
  c[0] = n > 1 ? upper[0] / denom : 0.0;
  d[0] = rhs[0] / denom;
  for (std::size_t i = 1; i < n; ++i) {
    denom = diag[i] - lower[i] * c[i - 1];
    if (denom == 0.0) throw NumericalError("tridiagonal solve: zero pivot");
    c[i] = i + 1 < n ? upper[i] / denom : 0.0;
    d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
  }
  x[n - 1] = d[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
  return x;
}

/// Cyclic tridiagonal solve: lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i], indices mod n.
/// Sherman-Morrison correction of the Thomas algorithm; the matrix must be nonsingular.
inline std::vector<double> solve_cyclic_tridiagonal(std::span<const double> lower, std::span<const double> diag,
                                                    std::span<const double> upper, std::span<const double> rhs) {
  const std::size_t n = diag.size();
  if (n < 3) throw NumericalError("cyclic tridiagonal solve needs n >= 3");
  const double alpha = upper[n - 1];  // couples row n-1 to x[0]
  const double beta = lower[0];       // couples row 0 to x[n-1]
  const double gamma = -diag[0];
  std::vector<double> bb(diag.begin(), diag.end());
  bb[0] = diag[0] - gamma;
  bb[n - 1] = diag[n - 1] - alpha * beta / gamma;
  std::vector<double> x = solve_tridiagonal(lower, bb, upper, rhs);
  std::vector<double> u(n, 0.0);
  u[0] = gamma;
  u[n - 1] = alpha;
  std::vector<double> z = solve_tridiagonal(lower, bb, upper, u);
  const double fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
  for (std::size_t i = 0; i < n; ++i) x[i] -= fact * z[i];
  return x;
}

}  // namespace wgfh

#endif  // WGFH_LINALG_HPP

#ifndef WGFH_QUADRATURE_HPP
#define WGFH_QUADRATURE_HPP

#include <array>
#include <cmath>
#include <functional>
#include <string>

#include "wgfh/error.hpp"

namespace wgfh::quad {

struct PeriodicOptions {
  int initial_points = 1024;
  int max_points = 1 << 22;
  double rtol = 1e-12;
};

/// Mean of a 1-periodic function over [0,1) by the composite trapezoid rule,
/// doubling the point count until successive values agree to `rtol`.
/// Spectrally accurate for smooth periodic integrands.
template <typename F>
double periodic_mean(F&& f, const PeriodicOptions& opt = {}) {
  int m = opt.initial_points;
  double s = 0.0;
  for (int k = 0; k < m; ++k) s += f(double(k) / m);
  double prev = s / m;
  while (m < opt.max_points) {
    double odd = 0.0;
    for (int k = 0; k < m; ++k) odd += f((k + 0.5) / m);
    s += odd;
    m *= 2;
    const double cur = s / m;
    if (std::fabs(cur - prev) <= opt.rtol * std::max(1.0, std::fabs(cur))) return cur;
    prev = cur;
  }
  throw NumericalError("periodic quadrature did not converge with " + std::to_string(m) + " points");
}

/// Mean over the unit square torus; tensor trapezoid with doubling.
template <typename F>
double periodic_mean_2d(F&& f, const PeriodicOptions& opt = {}) {
  int m = std::max(64, opt.initial_points / 8);
  auto eval = [&](int pts) {
    double s = 0.0;
    for (int j = 0; j < pts; ++j)
      for (int i = 0; i < pts; ++i) s += f(double(i) / pts, double(j) / pts);
    return s / (double(pts) * pts);
  };
  double prev = eval(m);
  while (m < 4096) {
    m *= 2;
    const double cur = eval(m);
    if (std::fabs(cur - prev) <= opt.rtol * std::max(1.0, std::fabs(cur))) return cur;
    prev = cur;
  }
  throw NumericalError("2D periodic quadrature did not converge");
}

/// 8-point Gauss-Legendre nodes/weights on [-1,1].
inline constexpr std::array<double, 8> kGL8Nodes = {
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
inline constexpr std::array<double, 8> kGL8Weights = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
    0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

template <typename F>
double gauss_legendre(F&& f, double a, double b) {
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (std::size_t i = 0; i < kGL8Nodes.size(); ++i) s += kGL8Weights[i] * f(mid + half * kGL8Nodes[i]);
  return s * half;
}

/// Integral over [a,b] split into `pieces` Gauss-Legendre panels.
template <typename F>
double composite_gauss(F&& f, double a, double b, int pieces) {
  double s = 0.0;
  const double w = (b - a) / pieces;
  for (int k = 0; k < pieces; ++k) s += gauss_legendre(f, a + k * w, a + (k + 1) * w);
  return s;
}

}  // namespace wgfh::quad

#endif  // WGFH_QUADRATURE_HPP

#ifndef WGFH_MEDIA_HPP
#define WGFH_MEDIA_HPP

// Oscillatory media: the mobility tensor B(y), the two-scale stationary density
// pi(x, y), their sampling onto resonant grids, and the standing positivity checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wgfh/error.hpp"
#include "wgfh/expr.hpp"
#include "wgfh/grid.hpp"
#include "wgfh/linalg.hpp"
#include "wgfh/quadrature.hpp"

namespace wgfh {

namespace detail {

inline double frac(double v) noexcept { return v - std::floor(v); }

inline expr::Bindings bind_slow_fast(int dim, double x1, double x2, double y1, double y2) {
  expr::Bindings b;
  if (dim == 1) {
    b.set(expr::Var::x, x1).set(expr::Var::x1, x1).set(expr::Var::y, y1).set(expr::Var::y1, y1);
  } else {
    b.set(expr::Var::x1, x1).set(expr::Var::x2, x2).set(expr::Var::y1, y1).set(expr::Var::y2, y2);
  }
  return b;
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// A point on the slow or fast torus; the second component is ignored in 1D.
struct Point {
  double c1 = 0.0;
  double c2 = 0.0;
};

/// Periodic, uniformly positive definite mobility tensor B(y).
class MobilityTensor {
public:
  enum class Family { constant, expression, sinusoidal, layered, checkerboard };

  static MobilityTensor constant(int dim, const Mat2& value) {
    MobilityTensor b(dim, Family::constant);
    b.constant_ = value;
    const auto ev = value.sym_eigenvalues(dim);
    b.c1_ = ev[0];
    b.c2_ = ev[1];
    return b;
  }

  /// Entries as expressions of the fast variable; `b12` is optional (zero), `b21` defaults to `b12`.
  static MobilityTensor expression(int dim, expr::Expr b11, std::optional<expr::Expr> b22 = std::nullopt,
                                   std::optional<expr::Expr> b12 = std::nullopt,
                                   std::optional<expr::Expr> b21 = std::nullopt) {
    MobilityTensor b(dim, Family::expression);
    b.e11_ = std::move(b11);
    if (dim == 2) {
      if (!b22) throw ConfigError("2D expression mobility needs B22");
      b.e22_ = std::move(*b22);
      b.e12_ = std::move(b12);
      b.e21_ = b21 ? std::move(b21) : b.e12_;
    }
    for (const expr::Expr* e : {&*b.e11_, b.e22_ ? &*b.e22_ : nullptr, b.e12_ ? &*b.e12_ : nullptr}) {
      if (!e) continue;
      const auto fv = e->free_variables();
      const auto slow = (1u << int(expr::Var::x)) | (1u << int(expr::Var::x1)) | (1u << int(expr::Var::x2)) |
                        (1u << int(expr::Var::t));
      if (fv & slow) throw ConfigError("mobility B may depend on the fast variable y only");
    }
    return b;
  }

  /// mean + amplitude * sin(2 pi y_axis), isotropic.
  static MobilityTensor sinusoidal(int dim, double mean, double amplitude, int axis = 0) {
    MobilityTensor b(dim, Family::sinusoidal);
    b.mean_ = mean;
    b.amplitude_ = amplitude;
    b.axis_ = axis;
    b.c1_ = mean - std::fabs(amplitude);
    b.c2_ = mean + std::fabs(amplitude);
    return b;
  }

  /// Isotropic layers in y1: value[k] on [breaks[k], breaks[k+1]) with breaks[0] = 0.
  static MobilityTensor layered(int dim, std::vector<double> breaks, std::vector<double> values) {
    if (breaks.empty() || breaks.size() != values.size())
      throw ConfigError("layered mobility: breaks and values must have equal, nonzero length");
    if (breaks.front() != 0.0) throw ConfigError("layered mobility: first break must be 0");
    for (std::size_t k = 1; k < breaks.size(); ++k)
      if (!(breaks[k] > breaks[k - 1]) || breaks[k] >= 1.0)
        throw ConfigError("layered mobility: breaks must increase strictly inside [0,1)");
    MobilityTensor b(dim, Family::layered);
    b.breaks_ = std::move(breaks);
    b.values_ = std::move(values);
    b.c1_ = *std::min_element(b.values_.begin(), b.values_.end());
    b.c2_ = *std::max_element(b.values_.begin(), b.values_.end());
    return b;
  }

  /// beta in the open cell, alpha on the skeleton {y_i integer}.
  static MobilityTensor checkerboard(int dim, double alpha, double beta) {
    MobilityTensor b(dim, Family::checkerboard);
    b.alpha_ = alpha;
    b.beta_ = beta;
    b.c1_ = std::min(alpha, beta);
    b.c2_ = std::max(alpha, beta);
    return b;
  }

  int dim() const noexcept { return dim_; }
  Family family() const noexcept { return family_; }
  bool piecewise() const noexcept { return family_ == Family::layered || family_ == Family::checkerboard; }

  /// Declared bounds C1 I <= B(y) <= C2 I.
  double lower_bound() const noexcept { return c1_; }
  double upper_bound() const noexcept { return c2_; }
  MobilityTensor& declare_bounds(double c1, double c2) {
    if (!(c1 > 0.0) || !(c2 >= c1)) throw ConfigError("mobility bounds must satisfy 0 < C1 <= C2");
    c1_ = c1;
    c2_ = c2;
    return *this;
  }

  const std::vector<double>& layer_breaks() const noexcept { return breaks_; }
  const std::vector<double>& layer_values() const noexcept { return values_; }
  double skeleton_value() const noexcept { return alpha_; }
  double interior_value() const noexcept { return beta_; }

  Mat2 at(const Point& y) const {
    switch (family_) {
      case Family::constant:
        return constant_;
      case Family::sinusoidal: {
        const double v = mean_ + amplitude_ * std::sin(2.0 * std::numbers::pi * (axis_ == 0 ? y.c1 : y.c2));
        return iso(v);
      }
      case Family::layered: {
        const double s = detail::frac(y.c1);
        std::size_t k = breaks_.size() - 1;
        while (k > 0 && s < breaks_[k]) --k;
        return iso(values_[k]);
      }
      case Family::checkerboard: {
        const bool skeleton = detail::frac(y.c1) == 0.0 || (dim_ == 2 && detail::frac(y.c2) == 0.0);
        return iso(skeleton ? alpha_ : beta_);
      }
      case Family::expression: {
        const auto b = detail::bind_slow_fast(dim_, 0.0, 0.0, y.c1, y.c2);
        Mat2 m{e11_->evaluate(b), 0.0, 0.0, 0.0};
        if (dim_ == 2) {
          m.a22 = e22_->evaluate(b);
          if (e12_) m.a12 = e12_->evaluate(b);
          if (e21_) m.a21 = e21_->evaluate(b);
        }
        return m;
      }
    }
    return {};
  }

  /// Scalar B for 1D media.
  double scalar(double y) const { return at({y, 0.0}).a11; }

  /// True when the off-diagonal part is identically zero by construction.
  bool diagonal_by_construction() const noexcept {
    if (family_ == Family::constant) return constant_.a12 == 0.0 && constant_.a21 == 0.0;
    if (family_ == Family::expression) return !e12_ && !e21_;
    return true;
  }

private:
  MobilityTensor(int dim, Family f) : dim_(dim), family_(f) {
    if (dim != 1 && dim != 2) throw ConfigError("medium dimension must be 1 or 2");
  }
  Mat2 iso(double v) const { return dim_ == 1 ? Mat2{v, 0.0, 0.0, 0.0} : Mat2::scalar(v); }

  int dim_;
  Family family_;
  double c1_ = 0.0, c2_ = 0.0;
  Mat2 constant_{};
  std::optional<expr::Expr> e11_, e22_, e12_, e21_;
  double mean_ = 0.0, amplitude_ = 0.0;
  int axis_ = 0;
  std::vector<double> breaks_, values_;
  double alpha_ = 0.0, beta_ = 0.0;
};

/// Two-scale stationary density pi(x, y) and its epsilon-realisation pi_eps.
class StationaryDensity {
public:
  enum class Variant { general, oscillatory, uniform };

  static StationaryDensity general(int dim, expr::Expr pi) {
    StationaryDensity s(dim, Variant::general);
    s.pi0_ = std::move(pi);
    return s;
  }

  /// pi_eps(x) = pi0(x) + pi1(x, x/eps).
  static StationaryDensity oscillatory(int dim, expr::Expr pi0, expr::Expr pi1) {
    StationaryDensity s(dim, Variant::oscillatory);
    s.pi0_ = std::move(pi0);
    s.pi1_ = std::move(pi1);
    return s;
  }

  /// pi_eps(x) = pi0(x) + eps * pi1(x, x/eps); converges uniformly to pi0.
  static StationaryDensity uniform(int dim, expr::Expr pi0, expr::Expr pi1) {
    StationaryDensity s(dim, Variant::uniform);
    s.pi0_ = std::move(pi0);
    s.pi1_ = std::move(pi1);
    return s;
  }

  /// pi(y) = c * sqrt(B(y)) for a scalar 1D mobility (the metric-equality case).
  static StationaryDensity sqrt_mobility(const MobilityTensor& b, double c) {
    if (b.dim() != 1) throw ConfigError("pi = c sqrt(B) is defined for 1D media only");
    if (!(c > 0.0)) throw ConfigError("pi = c sqrt(B) needs c > 0");
    StationaryDensity s(1, Variant::general);
    s.sqrt_of_ = std::make_shared<const MobilityTensor>(b);
    s.scale_ = c;
    return s;
  }

  int dim() const noexcept { return dim_; }
  Variant variant() const noexcept { return variant_; }
  bool piecewise() const noexcept { return sqrt_of_ && sqrt_of_->piecewise(); }

  bool depends_on_slow() const noexcept {
    if (sqrt_of_) return false;
    const auto mask = (1u << int(expr::Var::x)) | (1u << int(expr::Var::x1)) | (1u << int(expr::Var::x2));
    std::uint8_t fv = pi0_->free_variables();
    if (pi1_) fv |= pi1_->free_variables();
    return (fv & mask) != 0;
  }

  bool depends_on_fast() const noexcept {
    if (sqrt_of_) return sqrt_of_->family() != MobilityTensor::Family::constant;
    const auto mask = (1u << int(expr::Var::y)) | (1u << int(expr::Var::y1)) | (1u << int(expr::Var::y2));
    std::uint8_t fv = pi0_->free_variables();
    if (pi1_) fv |= pi1_->free_variables();
    return (fv & mask) != 0;
  }

  /// pi_eps at slow point x with fast coordinate y.
  double value(const Point& x, const Point& y, double eps) const {
    if (sqrt_of_) return scale_ * std::sqrt(sqrt_of_->scalar(y.c1));
    const auto b = detail::bind_slow_fast(dim_, x.c1, x.c2, y.c1, y.c2);
    switch (variant_) {
      case Variant::general: return pi0_->evaluate(b);
      case Variant::oscillatory: return pi0_->evaluate(b) + pi1_->evaluate(b);
      case Variant::uniform: return pi0_->evaluate(b) + eps * pi1_->evaluate(b);
    }
    return 0.0;
  }

  /// The two-scale profile pi(x, y) entering the cell problem (pi0(x) in the uniform case).
  double two_scale(const Point& x, const Point& y) const { return value(x, y, 0.0); }

  /// U = -log pi.
  double potential(const Point& x, const Point& y, double eps) const { return -std::log(value(x, y, eps)); }

  std::optional<std::pair<double, double>> declared_bounds() const { return bounds_; }
  StationaryDensity& declare_bounds(double m, double M) {
    if (!(m > 0.0) || !(M >= m)) throw ConfigError("density bounds must satisfy 0 < m <= M");
    bounds_ = std::make_pair(m, M);
    return *this;
  }

  const MobilityTensor* sqrt_source() const noexcept { return sqrt_of_.get(); }
  double sqrt_scale() const noexcept { return scale_; }

private:
  StationaryDensity(int dim, Variant v) : dim_(dim), variant_(v) {
    if (dim != 1 && dim != 2) throw ConfigError("medium dimension must be 1 or 2");
  }

  int dim_;
  Variant variant_;
  std::optional<expr::Expr> pi0_, pi1_;
  std::shared_ptr<const MobilityTensor> sqrt_of_;
  double scale_ = 1.0;
  std::optional<std::pair<double, double>> bounds_;
};

/// B and pi together.
struct Medium {
  MobilityTensor mobility;
  StationaryDensity density;

  int dim() const noexcept { return mobility.dim(); }

  /// D(x, y) = pi(x, y) B(y)^{-1}.
  Mat2 conductance(const Point& x, const Point& y) const {
    return mobility.at(y).inverse(dim()) * density.two_scale(x, y);
  }
};

/// pi-bar(x): average of pi(x, .) over the fast torus.
inline double average_pi(const StationaryDensity& pi, const Point& x) {
  if (pi.variant() == StationaryDensity::Variant::uniform) return pi.two_scale(x, {});
  if (const MobilityTensor* b = pi.sqrt_source(); b && b->family() == MobilityTensor::Family::layered) {
    const auto& br = b->layer_breaks();
    const auto& v = b->layer_values();
    double s = 0.0;
    for (std::size_t k = 0; k < br.size(); ++k) {
      const double hi = k + 1 < br.size() ? br[k + 1] : 1.0;
      s += (hi - br[k]) * std::sqrt(v[k]);
    }
    return pi.sqrt_scale() * s;
  }
  if (!pi.depends_on_fast()) return pi.two_scale(x, {});
  if (pi.dim() == 1) return quad::periodic_mean([&](double y) { return pi.two_scale(x, {y, 0.0}); });
  return quad::periodic_mean_2d([&](double y1, double y2) { return pi.two_scale(x, {y1, y2}); });
}

/// Diffusion system in f-form: pi on cells and the face conductance pi B^{-1}.
/// Both the oscillatory and the homogenised problems are instances.
struct DiffusionSystem {
  Grid grid;
  Field pi;
  FaceField conductance;
  std::string label;
};

/// Medium sampled on a resonant grid: eps = 1/m, cells divisible by m, >= 16 cells per period.
struct SampledMedium {
  Grid grid;
  double eps = 1.0;
  int periods = 1;           // m = 1/eps
  int cells_per_period = 0;  // cells / m
  Field pi;                  // pi_eps at cell centres
  std::vector<Mat2> mobility;  // B_eps at cell centres
  FaceField conductance;     // pi_eps / B_eps at faces (point values if smooth, harmonic means if piecewise)

  DiffusionSystem system() const {
    char buf[48];
    std::snprintf(buf, sizeof buf, "eps=%.17g", eps);
    return {grid, pi, conductance, buf};
  }
};

inline constexpr int kMinCellsPerPeriod = 16;

/// m with eps = 1/m, or ConfigError.
inline int periods_for(double eps) {
  if (!(eps > 0.0) || eps > 1.0) throw ConfigError("eps must lie in (0, 1]");
  const double inv = 1.0 / eps;
  const double m = std::round(inv);
  if (std::fabs(m * eps - 1.0) > 1e-12) throw ConfigError("eps = " + detail::fmt_double(eps) + " is not 1/m for an integer m");
  return int(m);
}

struct BoundScan {
  double min_eig = 0.0, max_eig = 0.0;
  double min_pi = 0.0, max_pi = 0.0;
};

/// Extreme eigenvalues of B and values of pi over a uniform fast-variable scan with `points` samples
/// (per axis in 1D, total in 2D). pi is scanned at the slow point x.
inline BoundScan scan_bounds(const Medium& med, int points = 4096, Point x = {0.5, 0.5}) {
  BoundScan s{1e300, -1e300, 1e300, -1e300};
  auto visit = [&](Point y) {
    const auto ev = med.mobility.at(y).sym_eigenvalues(med.dim());
    s.min_eig = std::min(s.min_eig, ev[0]);
    s.max_eig = std::max(s.max_eig, ev[1]);
    const double p = med.density.two_scale(x, y);
    s.min_pi = std::min(s.min_pi, p);
    s.max_pi = std::max(s.max_pi, p);
  };
  if (med.dim() == 1) {
    for (int k = 0; k < points; ++k) visit({double(k) / points, 0.0});
  } else {
    const int side = std::max(2, int(std::lround(std::sqrt(double(points)))));
    for (int j = 0; j < side; ++j)
      for (int i = 0; i < side; ++i) visit({double(i) / side, double(j) / side});
  }
  return s;
}

namespace detail {

inline void check_mobility_sample(const MobilityTensor& b, const Mat2& m, const Point& y) {
  const int dim = b.dim();
  const double tol = 1e-12 * std::max(1.0, b.upper_bound());
  if (dim == 2 && std::fabs(m.a12 - m.a21) > tol)
    throw ConfigError("mobility is not symmetric at y = (" + fmt_double(y.c1) + ", " + fmt_double(y.c2) + ")");
  const auto ev = m.sym_eigenvalues(dim);
  if (!(ev[0] >= b.lower_bound() - tol) || !(ev[1] <= b.upper_bound() + tol))
    throw ConfigError("mobility bound violation at y = (" + fmt_double(y.c1) + ", " + fmt_double(y.c2) +
                      "): eigenvalues [" + fmt_double(ev[0]) + ", " + fmt_double(ev[1]) + "] outside [" +
                      fmt_double(b.lower_bound()) + ", " + fmt_double(b.upper_bound()) + "]");
}

inline void check_density_sample(const StationaryDensity& pi, double v, const Point& x) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw ConfigError("stationary density not positive at x = (" + fmt_double(x.c1) + ", " + fmt_double(x.c2) + ")");
  if (auto bd = pi.declared_bounds()) {
    const double tol = 1e-12 * bd->second;
    if (v < bd->first - tol || v > bd->second + tol)
      throw ConfigError("stationary density " + fmt_double(v) + " outside declared bounds [" + fmt_double(bd->first) +
                        ", " + fmt_double(bd->second) + "]");
  }
}

}  // namespace detail

/// Validates standing assumptions on a scan: symmetry, C1 <= B <= C2, positivity of pi,
/// and 1-periodicity of expression media at wrap points.
inline void validate_medium(const Medium& med, int points = 1024) {
  const int dim = med.dim();
  if (med.density.dim() != dim) throw ConfigError("mobility and density dimensions differ");
  const int side = dim == 1 ? points : std::max(2, int(std::sqrt(double(points))));
  for (int j = 0; j < (dim == 1 ? 1 : side); ++j)
    for (int i = 0; i < side; ++i) {
      const Point y{double(i) / side, double(j) / side};
      detail::check_mobility_sample(med.mobility, med.mobility.at(y), y);
      const Point x{0.5, 0.5};
      detail::check_density_sample(med.density, med.density.two_scale(x, y), y);
    }
  // periodicity at wrap points
  for (int i = 0; i <= 16; ++i) {
    const double s = double(i) / 16.0;
    const Point lo = dim == 1 ? Point{0.0, 0.0} : Point{0.0, s};
    const Point hi = dim == 1 ? Point{1.0, 0.0} : Point{1.0, s};
    const Point lo2{s, 0.0}, hi2{s, 1.0};
    auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-9 * std::max(1.0, std::fabs(a)); };
    if (med.mobility.family() == MobilityTensor::Family::expression) {
      const Mat2 a = med.mobility.at(lo), b = med.mobility.at(hi);
      if (!close(a.a11, b.a11) || !close(a.a22, b.a22) || !close(a.a12, b.a12))
        throw ConfigError("mobility is not 1-periodic in y1");
      if (dim == 2) {
        const Mat2 c = med.mobility.at(lo2), d = med.mobility.at(hi2);
        if (!close(c.a11, d.a11) || !close(c.a22, d.a22) || !close(c.a12, d.a12))
          throw ConfigError("mobility is not 1-periodic in y2");
      }
    }
    const Point x{0.37, 0.61};
    if (!close(med.density.two_scale(x, lo), med.density.two_scale(x, hi)) ||
        (dim == 2 && !close(med.density.two_scale(x, lo2), med.density.two_scale(x, hi2))))
      throw ConfigError("stationary density is not 1-periodic in the fast variable");
  }
}

/// pi_eps / B_dd evaluated at a point (used at face centres of smooth media).
inline double face_conductance(const Medium& med, const Point& x, const Point& y, double eps, int d) {
  const Mat2 b = med.mobility.at(y);
  return med.density.value(x, y, eps) / (d == 0 ? b.a11 : b.a22);
}

/// Samples B_eps and pi_eps on a resonant grid with `cells` cells per axis.
inline SampledMedium sample_medium(const Medium& med, double eps, int cells) {
  const int dim = med.dim();
  const int m = periods_for(eps);
  if (cells % m != 0)
    throw ConfigError("resonance rule: " + std::to_string(cells) + " cells not divisible by 1/eps = " + std::to_string(m));
  const int per = cells / m;
  if (per < kMinCellsPerPeriod)
    throw ConfigError("resonance rule: " + std::to_string(per) + " cells per period < " +
                      std::to_string(kMinCellsPerPeriod));

  SampledMedium s;
  s.grid = Grid(dim, cells);
  s.eps = eps;
  s.periods = m;
  s.cells_per_period = per;
  s.pi.resize(s.grid.size());
  s.mobility.resize(s.grid.size());
  std::array<Field, 2> cell_k;
  for (int d = 0; d < dim; ++d) cell_k[d].resize(s.grid.size());

  for (std::size_t c = 0; c < s.grid.size(); ++c) {
    const int i = s.grid.coord(c, 0);
    const int j = dim == 2 ? s.grid.coord(c, 1) : 0;
    const Point x{(i + 0.5) / cells, dim == 2 ? (j + 0.5) / cells : 0.0};
    const Point y{((i % per) + 0.5) / per, dim == 2 ? ((j % per) + 0.5) / per : 0.0};
    const Mat2 b = med.mobility.at(y);
    detail::check_mobility_sample(med.mobility, b, y);
    if (dim == 2 && (b.a12 != 0.0 || b.a21 != 0.0))
      throw ConfigError("off-diagonal mobility entries are not supported by the two-point flux discretisation");
    const double p = med.density.value(x, y, eps);
    detail::check_density_sample(med.density, p, x);
    s.pi[c] = p;
    s.mobility[c] = b;
    cell_k[0][c] = p / b.a11;
    if (dim == 2) cell_k[1][c] = p / b.a22;
  }
  if (med.mobility.piecewise() || med.density.piecewise()) {
    s.conductance = harmonic_faces(s.grid, cell_k);
  } else {
    s.conductance = FaceField::zeros(s.grid);
    for (int d = 0; d < dim; ++d)
      for (std::size_t c = 0; c < s.grid.size(); ++c) {
        int ix = s.grid.coord(c, 0), jx = dim == 2 ? s.grid.coord(c, 1) : 0;
        // face sits at integer index +1 along axis d, at the cell centre across
        const auto pos = [&](int idx, int axis) {
          const bool on_face = axis == d;
          const double slow = on_face ? double(idx + 1) / cells : (idx + 0.5) / cells;
          const double fast = on_face ? double((idx % per) + 1) / per : ((idx % per) + 0.5) / per;
          return std::make_pair(slow, fast);
        };
        const auto [x1, y1] = pos(ix, 0);
        const auto [x2, y2] = dim == 2 ? pos(jx, 1) : std::make_pair(0.0, 0.0);
        s.conductance.k[d][c] = face_conductance(med, {x1, x2}, {y1, y2}, eps, d);
      }
  }
  return s;
}

}  // namespace wgfh

#endif  // WGFH_MEDIA_HPP

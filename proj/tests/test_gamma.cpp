#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "wgfh/gamma.hpp"

using namespace wgfh;

namespace {

constexpr double kPi = std::numbers::pi;

Medium smooth_1d() {
  MobilityTensor b = MobilityTensor::expression(1, expr::parse("2 + sin(2*pi*y)"));
  b.declare_bounds(1.0, 3.0);
  return {b, StationaryDensity::general(1, expr::Expr::constant(1.0))};
}

// min of int a(x/eps) u'^2 with u(0) = 0, u(1) = 1 for a = 1/(2 + sin(2 pi y)): 1 / int (2 + sin(2 pi x/eps))
double dirichlet_exact(double eps) { return 1.0 / (2.0 + eps * (1.0 - std::cos(2 * kPi / eps)) / (2 * kPi)); }

}  // namespace

TEST(Gamma, PeriodicAffineWithConstantTensor) {
  const Mat2 a{2.0, 0.0, 0.0, 3.0};
  const std::array<double, 2> p{0.6, -0.8};
  EXPECT_NEAR(minimize_periodic_affine([&](const Point&) { return a; }, p, 2, 32), a.quad(p, 2), 1e-13);
  const std::array<double, 2> q{1.5, 0.0};
  EXPECT_NEAR(minimize_periodic_affine([&](const Point&) { return a; }, q, 1, 32), 2.0 * 2.25, 1e-13);
}

TEST(Gamma, PeriodicAffineOneDimensionalIsHarmonic) {
  auto a = [](const Point& y) { return Mat2::scalar(1.0 / (2.0 + std::sin(2 * kPi * y.c1))); };
  const std::array<double, 2> p{1.0, 0.0};
  // harmonic mean of 1/(2 + sin) is 1/2; face sums of a periodic trigonometric polynomial are exact
  EXPECT_NEAR(minimize_periodic_affine(a, p, 1, 64), 0.5, 1e-14);
}

TEST(Gamma, DirichletConstantTensorAffineBoundary) {
  DirichletProblem prob;
  prob.dim = 2;
  prob.n = 16;
  prob.weight = [](const Point&) { return Mat2{2.0, 0.0, 0.0, 5.0}; };
  prob.boundary = [](const Point& x) { return 0.3 * x.c1 - 0.7 * x.c2; };
  const DirichletSolution s = minimize_dirichlet(prob);
  EXPECT_NEAR(s.energy, 2.0 * 0.09 + 5.0 * 0.49, 1e-12);
  for (int j = 0; j <= 16; ++j)
    for (int i = 0; i <= 16; ++i) EXPECT_NEAR(s.u[std::size_t(j) * 17 + i], 0.3 * i / 16.0 - 0.7 * j / 16.0, 1e-12);
}

TEST(Gamma, DirichletOneDimensionalTendsToHarmonicLimit) {
  std::vector<double> err;
  for (double eps : {0.3, 0.15, 0.075, 0.0375, 0.01875}) {
    DirichletProblem prob;
    prob.dim = 1;
    prob.n = 4096;
    prob.weight = [eps](const Point& x) { return Mat2::scalar(1.0 / (2.0 + std::sin(2 * kPi * x.c1 / eps))); };
    prob.boundary = [](const Point& x) { return x.c1; };
    const double e = minimize_dirichlet(prob).energy;
    EXPECT_NEAR(e, dirichlet_exact(eps), 1e-6) << eps;
    err.push_back(std::fabs(e - 0.5));
  }
  for (std::size_t k = 1; k < err.size(); ++k) EXPECT_LT(err[k], err[k - 1]);
  EXPECT_LT(err.back(), 2e-3);
}

TEST(Gamma, DirichletRejectsBadInput) {
  DirichletProblem prob;
  prob.dim = 3;
  EXPECT_THROW(minimize_dirichlet(prob), ConfigError);
  prob.dim = 1;
  EXPECT_THROW(minimize_dirichlet(prob), ConfigError);  // no weight
  prob.weight = [](const Point&) { return Mat2::scalar(-1.0); };
  prob.boundary = [](const Point&) { return 0.0; };
  EXPECT_THROW(minimize_dirichlet(prob), ConfigError);
}

TEST(Gamma, ConstantMediumRecoveryIsExact) {
  const Medium med{MobilityTensor::constant(1, Mat2::scalar(2.0)), StationaryDensity::general(1, expr::Expr::constant(1.0))};
  const RecoveryResult r = build_recovery(PiecewiseAffine::tent(1, 1.0), med, 1.0 / 64);
  // conductance 1/2, |grad xi| = 1 everywhere
  EXPECT_NEAR(r.energy_limit, 0.5, 1e-14);
  // sampled at cell centres the tent is flat across the two faces at its kinks
  const int n = 64 * 32;
  EXPECT_NEAR(r.energy_eps, 0.5 * (1.0 - 2.0 / n), 1e-12);
  EXPECT_NEAR(r.gradient_ratio, 1.0, 1e-12);
  EXPECT_LT(r.l2_distance, 1e-14);
}

TEST(Gamma, SmoothMediumRecoveryConverges) {
  const Medium med = smooth_1d();
  RecoveryOptions opt;
  std::vector<double> err;
  for (double eps : {1.0 / 64, 1.0 / 128, 1.0 / 256}) {
    const RecoveryResult r = build_recovery(PiecewiseAffine::tent(1, 1.0), med, eps, opt);
    // limit: harmonic mean 1/2 of the conductance times |grad xi|^2 = 1
    EXPECT_NEAR(r.energy_limit, 0.5, 1e-10);
    err.push_back(r.error);
    EXPECT_LT(r.l2_distance, 2.0 * eps);
  }
  EXPECT_GT(err[0] / err[1], 1.5);
  EXPECT_GT(err[1] / err[2], 1.5);
}

TEST(Gamma, RecoveryRejectsOversizedCutoff) {
  const Medium med = smooth_1d();
  RecoveryOptions opt;
  opt.d1 = 4.0;
  opt.d2 = 2.0;
  EXPECT_THROW(build_recovery(PiecewiseAffine::tent(1, 1.0), med, 1.0 / 64, opt), ConfigError);
  EXPECT_THROW(build_recovery(PiecewiseAffine::tent(2, 1.0), med, 1.0 / 64), ConfigError);
  // d2 eps = 1/8 is not below a quarter of the slab width 1/2
  EXPECT_THROW(build_recovery(PiecewiseAffine::tent(1, 1.0), med, 1.0 / 32), ConfigError);
}

TEST(Gamma, FixedFunctionEnergyStaysAboveLimit) {
  // F_eps(v) for a fixed v tends to the arithmetic mean of the conductance, above the harmonic limit
  const Medium med = smooth_1d();
  auto v = [](const Point& x) { return std::sin(2 * kPi * x.c1); };
  const double limit = 0.5 * 2 * kPi * kPi;  // (1/2) int (v')^2
  std::vector<double> eps, energy;
  for (int m : {8, 16, 32}) {
    eps.push_back(1.0 / m);
    energy.push_back(oscillatory_energy(v, med, 1.0 / m, 64 * m));
  }
  const LiminfReport rep = gamma_liminf_check(eps, energy, limit);
  EXPECT_TRUE(rep.lower_bound_holds);
  for (double e : energy) EXPECT_GT(e, limit);
  for (double d : rep.delta) EXPECT_EQ(d, 0.0);
}

TEST(Gamma, LiminfCheckFlagsGrowingDeficit) {
  const LiminfReport ok = gamma_liminf_check({0.5, 0.25, 0.125}, {0.8, 0.9, 0.95}, 1.0);
  EXPECT_TRUE(ok.lower_bound_holds);
  EXPECT_NEAR(ok.delta[0], 0.2, 1e-15);
  const LiminfReport bad = gamma_liminf_check({0.5, 0.25, 0.125}, {0.9, 0.8, 0.95}, 1.0);
  EXPECT_FALSE(bad.lower_bound_holds);
  EXPECT_THROW(gamma_liminf_check({0.5}, {}, 1.0), ConfigError);
}

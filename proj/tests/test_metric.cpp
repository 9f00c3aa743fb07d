#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "wgfh/cell_problem.hpp"
#include "wgfh/metric.hpp"

using namespace wgfh;

namespace {

constexpr double kPi = std::numbers::pi;

const MobilityTensor kLayers = MobilityTensor::layered(1, {0.0, 0.5}, {1.0, 4.0});

Field plateau(int n, double a, double b) {
  Field r(n, 0.0);
  const int lo = int(std::lround(a * n)), hi = int(std::lround(b * n));
  for (int c = lo; c < hi; ++c) r[c] = 1.0 / (b - a);
  return r;
}

}  // namespace

TEST(Metric, LayeredEpsDistanceByHand) {
  // one period of sqrt(B) integrates to 0.5 * 1 + 0.5 * 2 = 1.5
  EXPECT_NEAR(d_eps_1d(kLayers, 1.0 / 8, 0.0, 1.0), 1.5, 1e-15);
  // 0 -> 1/3 at eps = 1/8: two full periods, then half a period at 1 and 1/6 of a period at 2
  const double by_hand = (2 * 1.5 + 0.5 + (2.0 / 3 - 0.5) * 2.0) / 8.0;
  EXPECT_NEAR(d_eps_1d(kLayers, 1.0 / 8, 0.0, 1.0 / 3), by_hand, 1e-15);
  EXPECT_NEAR(d_eps_1d(kLayers, 1.0 / 8, 1.0 / 3, 0.0), by_hand, 1e-15);
  EXPECT_EQ(d_eps_1d(kLayers, 1.0 / 8, 0.3, 0.3), 0.0);
}

TEST(Metric, EpsDistanceConvergesToLimit) {
  const double limit = d_gh_1d(d_gh_coefficient(kLayers), 0.0, 1.0 / 3);
  EXPECT_NEAR(limit, 0.5, 1e-15);
  double prev = 1.0;
  for (int m : {8, 16, 32, 64, 128}) {
    const double err = std::fabs(d_eps_1d(kLayers, 1.0 / m, 0.0, 1.0 / 3) - limit);
    EXPECT_LE(err, 0.5 / m);
    EXPECT_LT(err, prev);
    prev = err;
  }
}

TEST(Metric, TorusTakesShorterArc) {
  const auto b = MobilityTensor::constant(1, Mat2::scalar(4.0));
  EXPECT_NEAR(d_eps_1d(b, 0.25, 0.1, 0.9, true), 2.0 * 0.2, 1e-15);
  EXPECT_NEAR(d_eps_1d(b, 0.25, 0.1, 0.9, false), 2.0 * 0.8, 1e-15);
  EXPECT_THROW(d_eps_1d(b, 0.3, 0.1, 0.9, true), ConfigError);
}

TEST(Metric, SmoothCoefficientMatchesQuadrature) {
  MobilityTensor b = MobilityTensor::expression(1, expr::parse("2 + sin(2*pi*y)"));
  b.declare_bounds(1.0, 3.0);
  double root = 0.0;
  for (int k = 0; k < 8192; ++k) root += std::sqrt(2.0 + std::sin(2 * kPi * k / 8192.0));
  root /= 8192;
  EXPECT_NEAR(d_gh_coefficient(b), root * root, 1e-13);
  EXPECT_NEAR(d_eps_1d(b, 1.0 / 16, 0.0, 0.5), 0.5 * root, 1e-13);
}

TEST(Metric, GapReportForLayersAndEqualityCase) {
  const Medium layered{kLayers, StationaryDensity::general(1, expr::Expr::constant(1.0))};
  const MetricReport1D r = gap_report(layered, {0.0, 0.0}, 64);
  EXPECT_NEAR(r.c_bar, 2.25, 1e-15);
  EXPECT_NEAR(r.b_bar, 2.5, 1e-13);
  EXPECT_NEAR(r.gap, 0.25, 1e-13);
  EXPECT_FALSE(r.equality);

  const Medium eq{kLayers, StationaryDensity::sqrt_mobility(kLayers, 1.0)};
  const MetricReport1D q = gap_report(eq, {0.0, 0.0}, 64);
  EXPECT_TRUE(q.equality);
  EXPECT_NEAR(q.gap, 0.0, 1e-12);
}

TEST(Wasserstein, ShiftOfAPlateauCostsTheShift) {
  const int n = 1024;
  const Field a = plateau(n, 0.25, 0.5), b = plateau(n, 0.5, 0.75);
  EXPECT_NEAR(wasserstein_1d(a, b, TransportCost::euclidean()), 0.25, 1e-13);
  EXPECT_NEAR(wasserstein_1d(a, a, TransportCost::euclidean()), 0.0, 1e-15);
}

TEST(Wasserstein, LinearDensityAgainstUniform) {
  // Q0(u) = u, Q1(u) = sqrt(u): W^2 = int (u - sqrt u)^2 = 1/30
  const int n = 2048;
  Field lin(n);
  for (int c = 0; c < n; ++c) lin[c] = 2.0 * (c + 0.5) / n;
  EXPECT_NEAR(wasserstein_1d(Field(n, 1.0), lin, TransportCost::euclidean()), std::sqrt(1.0 / 30), 1e-6);
}

TEST(Wasserstein, ConstantMobilityScalesEuclidean) {
  const int n = 512;
  Field a(n), b(n);
  for (int c = 0; c < n; ++c) {
    const double x = (c + 0.5) / n;
    a[c] = 1.0 + 0.5 * std::cos(2 * kPi * x);
    b[c] = 1.0 + 0.5 * std::sin(2 * kPi * x);
  }
  const double w2 = wasserstein_1d(a, b, TransportCost::euclidean());
  const auto m = MobilityTensor::constant(1, Mat2::scalar(3.0));
  EXPECT_NEAR(wasserstein_1d(a, b, TransportCost::d_eps(m, 1.0 / 8)), std::sqrt(3.0) * w2, 1e-12);
  EXPECT_NEAR(wasserstein_1d(a, b, TransportCost::d_bar(3.0)), std::sqrt(3.0) * w2, 1e-12);
  EXPECT_THROW(wasserstein_1d(Field(n, 2.0), b, TransportCost::euclidean()), ConfigError);
  Field neg(a);
  neg[0] = -1.0;
  EXPECT_THROW(wasserstein_1d(neg, b, TransportCost::euclidean()), ConfigError);
}

TEST(Wasserstein, TriangleInequalityUnderOscillatingCost) {
  const int n = 256;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  auto random_density = [&] {
    Field r(n);
    double s = 0.0;
    for (auto& v : r) s += (v = u(rng));
    for (auto& v : r) v *= n / s;
    return r;
  };
  const TransportCost cost = TransportCost::d_eps(kLayers, 1.0 / 16);
  for (int trial = 0; trial < 10; ++trial) {
    const Field a = random_density(), b = random_density(), c = random_density();
    const double ab = wasserstein_1d(a, b, cost), bc = wasserstein_1d(b, c, cost), ac = wasserstein_1d(a, c, cost);
    EXPECT_LE(ac, ab + bc + 1e-12);
    EXPECT_NEAR(ab, wasserstein_1d(b, a, cost), 1e-12);
  }
}

TEST(Checkerboard, UniformWeightsGiveLatticeL1Distance) {
  for (int per : {4, 8}) {
    const GeodesicGrid2D g{1.0 / 8, per, 1.0, 1.0};
    EXPECT_NEAR(checkerboard_geodesic(g, {0.0, 0.0}, {1.0, 1.0}), 2.0, 1e-12);
    EXPECT_NEAR(checkerboard_geodesic(g, {0.0, 0.0}, {0.5, 0.0}), 0.5, 1e-12);
  }
}

TEST(Checkerboard, CheapSkeletonIsFollowed) {
  for (double eps : {1.0 / 16, 1.0 / 32}) {
    for (int per : {8, 16}) {
      const GeodesicGrid2D g{eps, per, 0.25, 1.0};
      // corner to corner along skeleton lines: length 2 at speed sqrt(alpha) = 1/2
      EXPECT_NEAR(checkerboard_geodesic(g, {0.0, 0.0}, {1.0, 1.0}), 1.0, 1e-12);
    }
  }
  const Mat2 averaged = Mat2::scalar(1.0);
  EXPECT_NEAR(d_bar(averaged, 2, {0.0, 0.0}, {1.0, 1.0}), std::sqrt(2.0), 1e-15);
  EXPECT_THROW(checkerboard_geodesic({0.25, 4, 0.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}), ConfigError);
}

TEST(Checkerboard, ExpensiveSkeletonIsAvoidedUpToOneCell) {
  const GeodesicGrid2D g{1.0 / 8, 8, 4.0, 1.0};
  const double d = checkerboard_geodesic(g, {0.0, 0.0}, {1.0, 1.0});
  // interior lattice paths cost 2; leaving and entering the corner nodes costs at most two skeleton edges
  EXPECT_GE(d, 2.0 - 1e-12);
  EXPECT_LE(d, 2.0 + 2 * (std::sqrt(4.0) - 1.0) * g.spacing() + 1e-12);
}

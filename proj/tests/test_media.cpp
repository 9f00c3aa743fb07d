#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "wgfh/experiments.hpp"
#include "wgfh/media.hpp"

using namespace wgfh;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

Medium smooth_1d(const std::string& b, const std::string& pi = "1") {
  MobilityTensor m = MobilityTensor::expression(1, expr::parse(b));
  m.declare_bounds(1.0, 3.0);
  return {m, StationaryDensity::general(1, expr::parse(pi))};
}

}  // namespace

TEST(AveragePi, ClosedForms) {
  const auto sine = StationaryDensity::general(1, expr::parse("2 + sin(2*pi*y)"));
  EXPECT_NEAR(average_pi(sine, {0.3, 0.0}), 2.0, 1e-14);

  // mean of exp(sin(2 pi y)) is the modified Bessel value I0(1)
  const auto ex = StationaryDensity::general(1, expr::parse("exp(sin(2*pi*y))"));
  EXPECT_NEAR(average_pi(ex, {0.0, 0.0}), std::cyl_bessel_i(0.0, 1.0), 1e-13);

  const auto osc = StationaryDensity::oscillatory(1, expr::parse("1 + 0.3*cos(2*pi*x)"), expr::parse("0.4*sin(2*pi*y)"));
  for (double x : {0.0, 0.1, 0.45})
    EXPECT_NEAR(average_pi(osc, {x, 0.0}), 1.0 + 0.3 * std::cos(2 * kPi * x), 1e-14);

  const auto uni = StationaryDensity::uniform(1, expr::parse("2 + x"), expr::parse("sin(2*pi*y)"));
  EXPECT_EQ(average_pi(uni, {0.25, 0.0}), 2.25);

  const auto layered = StationaryDensity::sqrt_mobility(MobilityTensor::layered(1, {0.0, 0.5}, {1.0, 4.0}), 2.0);
  EXPECT_DOUBLE_EQ(average_pi(layered, {}), 2.0 * (0.5 * 1.0 + 0.5 * 2.0));

  // 2D product: mean of (1 + a sin)(1 + b cos) is 1
  const auto two = StationaryDensity::general(2, expr::parse("(1 + 0.5*sin(2*pi*y1))*(1 + 0.25*cos(2*pi*y2))"));
  EXPECT_NEAR(average_pi(two, {0.5, 0.5}), 1.0, 1e-13);
}

TEST(AveragePi, AgreesWithRichardsonTrapezoid) {
  // pi(y) = 1 / (2 + cos(2 pi y)) has mean 1/sqrt(3); trapezoid with Richardson steps as an independent check
  const auto pi = StationaryDensity::general(1, expr::parse("1/(2 + cos(2*pi*y))"));
  auto trap = [](int n) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += 1.0 / (2.0 + std::cos(2 * kPi * k / n));
    return s / n;
  };
  const double r = (4.0 * trap(64) - trap(32)) / 3.0;
  EXPECT_NEAR(r, 1.0 / std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(average_pi(pi, {}), r, 1e-13);
}

TEST(Resonance, RejectsUnderResolvedAndNonIntegerPeriods) {
  const Medium med = smooth_1d("2 + sin(2*pi*y)");
  EXPECT_THROW(sample_medium(med, 1.0 / 8, 64), ConfigError);   // 8 cells per period
  EXPECT_THROW(sample_medium(med, 1.0 / 3, 64), ConfigError);   // 64 not divisible by 3
  EXPECT_THROW(sample_medium(med, 0.3, 300), ConfigError);      // not 1/m
  EXPECT_THROW(sample_medium(med, 0.0, 64), ConfigError);
  EXPECT_NO_THROW(sample_medium(med, 1.0 / 4, 64));
  EXPECT_EQ(periods_for(1.0 / 64), 64);
}

TEST(Bounds, ViolationIsReported) {
  MobilityTensor b = MobilityTensor::expression(1, expr::parse("2.5 + 1.5*sin(2*pi*y)"));
  b.declare_bounds(1.0, 3.0);
  const Medium med{b, StationaryDensity::general(1, expr::Expr::constant(1.0))};
  try {
    validate_medium(med);
    FAIL() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bound violation"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sample_medium(med, 0.25, 64), ConfigError);

  MobilityTensor layers = MobilityTensor::layered(1, {0.0, 0.5}, {1.0, 4.0});
  layers.declare_bounds(1.0, 3.0);
  EXPECT_THROW(validate_medium({layers, StationaryDensity::general(1, expr::Expr::constant(1.0))}), ConfigError);
}

TEST(Bounds, DensityBoundsAndPositivity) {
  auto pi = StationaryDensity::general(1, expr::parse("1 + 0.5*sin(2*pi*y)"));
  pi.declare_bounds(0.6, 1.5);
  MobilityTensor b = MobilityTensor::constant(1, Mat2::scalar(1.0));
  EXPECT_THROW(validate_medium({b, pi}), ConfigError);
  EXPECT_THROW(validate_medium({b, StationaryDensity::general(1, expr::parse("sin(2*pi*y)"))}), ConfigError);
}

TEST(Periodicity, NonPeriodicExpressionsRejected) {
  EXPECT_THROW(validate_medium(smooth_1d("2 + sin(y)")), ConfigError);
  EXPECT_THROW(validate_medium(smooth_1d("2", "2 + sin(3*y)")), ConfigError);
  EXPECT_NO_THROW(validate_medium(smooth_1d("2 + sin(2*pi*y)", "2 + cos(4*pi*y)")));
}

TEST(Periodicity, SampledMediumRepeatsEveryPeriod) {
  const Medium med = smooth_1d("2 + sin(2*pi*y)", "1 + 0.5*cos(2*pi*y)");
  const SampledMedium s = sample_medium(med, 0.25, 128);
  ASSERT_EQ(s.cells_per_period, 32);
  for (std::size_t c = 0; c + 32 < s.grid.size(); ++c) {
    EXPECT_EQ(s.mobility[c].a11, s.mobility[c + 32].a11);
    EXPECT_EQ(s.pi[c], s.pi[c + 32]);
    EXPECT_EQ(s.conductance.k[0][c], s.conductance.k[0][c + 32]);
  }
  // halving eps with twice the cells reproduces the same cell profile
  const SampledMedium half = sample_medium(med, 0.125, 256);
  for (int c = 0; c < 32; ++c) EXPECT_EQ(half.pi[c], s.pi[c]);
}

TEST(FaceConductance, PointValuesForSmoothMedia) {
  const Medium med = smooth_1d("2 + sin(2*pi*y)", "1 + 0.5*cos(2*pi*y)");
  const int per = 16;
  const SampledMedium s = sample_medium(med, 0.5, 2 * per);
  for (int i = 0; i < 2 * per; ++i) {
    const double y = double((i % per) + 1) / per;
    const double expected = (1.0 + 0.5 * std::cos(2 * kPi * y)) / (2.0 + std::sin(2 * kPi * y));
    EXPECT_NEAR(s.conductance.k[0][i], expected, 1e-15);
  }
}

TEST(FaceConductance, HarmonicMeansAcrossLayers) {
  const Medium med{MobilityTensor::layered(1, {0.0, 0.5}, {1.0, 4.0}),
                   StationaryDensity::general(1, expr::Expr::constant(1.0))};
  const SampledMedium s = sample_medium(med, 1.0, 16);
  // cells 0..7 have B = 1, cells 8..15 have B = 4
  EXPECT_DOUBLE_EQ(s.conductance.k[0][0], 1.0);
  EXPECT_DOUBLE_EQ(s.conductance.k[0][7], 2.0 * 1.0 * 0.25 / 1.25);
  EXPECT_DOUBLE_EQ(s.conductance.k[0][10], 0.25);
  EXPECT_DOUBLE_EQ(s.conductance.k[0][15], 2.0 * 1.0 * 0.25 / 1.25);
}

TEST(Mobility, TwoDimensionalFamilies) {
  const auto cb = MobilityTensor::checkerboard(2, 0.25, 1.0);
  EXPECT_EQ(cb.at({0.0, 0.3}).a11, 0.25);
  EXPECT_EQ(cb.at({0.4, 0.3}).a22, 1.0);
  EXPECT_EQ(cb.lower_bound(), 0.25);
  const auto sin2 = MobilityTensor::sinusoidal(2, 2.0, 0.5, 1);
  EXPECT_DOUBLE_EQ(sin2.at({0.9, 0.25}).a11, 2.5);
  EXPECT_THROW(MobilityTensor::expression(1, expr::parse("2 + x")), ConfigError);
  EXPECT_THROW(MobilityTensor::expression(2, expr::parse("2")), ConfigError);

  // off-diagonal entries are validated but rejected by the two-point flux sampler
  MobilityTensor aniso = MobilityTensor::expression(2, expr::parse("2"), expr::parse("2"), expr::parse("0.5"));
  aniso.declare_bounds(1.5, 2.5);
  const Medium med{aniso, StationaryDensity::general(2, expr::Expr::constant(1.0))};
  EXPECT_NO_THROW(validate_medium(med));
  EXPECT_THROW(sample_medium(med, 0.5, 32), ConfigError);
}

TEST(Bounds, ShippedMediaAttainDeclaredBoundsWithinOnePercent) {
  int checked = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(WGFH_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json" || entry.path().filename() == "schema.json") continue;
    const auto c = experiments::load_config_file(entry.path());
    std::vector<Medium> media;
    if (c.medium) media.push_back(*c.medium);
    if (c.dirichlet && c.dirichlet->medium) media.push_back(*c.dirichlet->medium);
    for (const Medium& med : media) {
      const BoundScan s = scan_bounds(med, 4096);
      const double c1 = med.mobility.lower_bound(), c2 = med.mobility.upper_bound();
      EXPECT_LE(std::fabs(s.min_eig - c1), 0.01 * c1) << entry.path();
      EXPECT_LE(std::fabs(s.max_eig - c2), 0.01 * c2) << entry.path();
      if (auto pb = med.density.declared_bounds()) {
        EXPECT_LE(std::fabs(s.min_pi - pb->first), 0.01 * pb->first) << entry.path();
        EXPECT_LE(std::fabs(s.max_pi - pb->second), 0.01 * pb->second) << entry.path();
      }
      ++checked;
    }
  }
  EXPECT_GE(checked, 8);
}

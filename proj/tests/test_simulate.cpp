#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "unrollct/simulate.hpp"

using namespace unrollct;

namespace {

// Ellipse membership via complex rotation, written independently of the library.
bool inside(const Ellipse& e, double x, double y) {
  const std::complex<double> p(x - e.x0, y - e.y0);
  const std::complex<double> r = p * std::polar(1.0, -e.phi_deg * std::numbers::pi / 180.0);
  return std::pow(r.real() / e.a, 2) + std::pow(r.imag() / e.b, 2) <= 1.0;
}

Image disc_image(std::size_t n, double radius, double value) {
  Image x(n, n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const double u = static_cast<double>(k) - c, v = static_cast<double>(r) - c;
      x(r, k) = u * u + v * v <= radius * radius ? value : 0.0;
    }
  return x;
}

}  // namespace

TEST(Phantom, SheppLoganCenterPixel) {
  const Image sl = shepp_logan(64);
  const double x = 0.5 / 32.0, y = -0.5 / 32.0;  // pixel (32, 32)
  double want = 0.0;
  for (const auto& e : shepp_logan_ellipses())
    if (inside(e, x, y)) want += e.value;
  EXPECT_NEAR(sl(32, 32), want, 1e-15);
  EXPECT_NEAR(sl(32, 32), 0.2, 1e-12);  // frozen regression value
}

TEST(Phantom, SheppLoganRangeAndSymmetry) {
  const std::size_t n = 128;
  const Image sl = shepp_logan(n);
  for (double v : sl.values) {
    EXPECT_GE(v, -1e-12);
    EXPECT_LE(v, 1.02);
  }
  // mirror symmetric wherever neither the pixel nor its mirror touches an
  // ellipse without a mirrored partner in the table
  const auto& t = shepp_logan_ellipses();
  const std::vector<std::size_t> lone{2, 3, 7, 9};
  std::size_t mismatches = 0, compared = 0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double y = ((static_cast<double>(n) - 1.0) / 2.0 - static_cast<double>(r)) * 2.0 / static_cast<double>(n);
      const double x = (static_cast<double>(c) - (static_cast<double>(n) - 1.0) / 2.0) * 2.0 / static_cast<double>(n);
      bool skip = false;
      for (std::size_t e : lone) skip = skip || inside(t[e], x, y) || inside(t[e], -x, y);
      if (skip) continue;
      ++compared;
      if (sl(r, c) != sl(r, n - 1 - c)) ++mismatches;
    }
  EXPECT_GT(compared, n * n / 2);
  EXPECT_EQ(mismatches, 0u);
  EXPECT_THROW(shepp_logan(8), ConfigError);
}

TEST(Phantom, RandomPhantomsAreSeededAndBounded) {
  SplitMix64 a(4), b(4), c(5);
  const Image pa = random_phantom(32, a), pb = random_phantom(32, b), pc = random_phantom(32, c);
  EXPECT_EQ(pa.values, pb.values);
  EXPECT_NE(pa.values, pc.values);
  for (double v : pa.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Measurements, NoiselessIsExactForward) {
  const Projector p = build_projector(Geometry{16, 23, 1.0}, 16, 16, 0.1);
  const Image x = shepp_logan(16, 0.1);
  const Measurement m = simulate_measurements(x, p, {7e4, NoiseMode::None, 0});
  EXPECT_EQ(m.b.values, p.forward(x).values);
}

TEST(Measurements, PoissonMoments) {
  const std::size_t n = 10000;
  const DenseOperator zero(Vec(n, 0.0), n, 1);
  for (double mean : {7e4, 100.0, 10.0}) {
    const Measurement m = simulate_measurements(Image(1, 1), zero, {mean, NoiseMode::Poisson, 9});
    double s = 0.0, s2 = 0.0;
    for (double c : m.counts.values) s += c;
    const double mu = s / static_cast<double>(n);
    for (double c : m.counts.values) s2 += (c - mu) * (c - mu);
    const double var = s2 / static_cast<double>(n - 1);
    EXPECT_LE(std::abs(mu - mean), 3.0 * std::sqrt(mean / static_cast<double>(n))) << mean;
    if (mean <= 100.0) {
      EXPECT_NEAR(var / mean, 1.0, 0.05) << mean;
    }
    for (double c : m.counts.values) EXPECT_EQ(c, std::floor(c));
  }
}

TEST(Measurements, SeededAndClamped) {
  const Projector p = build_projector(Geometry{8, 11, 1.0}, 8, 8, 1.0);
  const Image x = shepp_logan(16);
  Image x8(8, 8, 1.0, 0.5);
  const Measurement a = simulate_measurements(x8, p, {1e3, NoiseMode::Poisson, 1});
  const Measurement b = simulate_measurements(x8, p, {1e3, NoiseMode::Poisson, 1});
  const Measurement c = simulate_measurements(x8, p, {1e3, NoiseMode::Poisson, 2});
  EXPECT_EQ(a.b.values, b.b.values);
  EXPECT_NE(a.b.values, c.b.values);
  // very attenuating object: zero counts are clamped to one before the log
  Image dense(8, 8, 1.0, 50.0);
  const Measurement d = simulate_measurements(dense, p, {10.0, NoiseMode::Poisson, 3});
  for (double v : d.b.values) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_LE(v, std::log(10.0) + 1e-12);
  }
  EXPECT_THROW(simulate_measurements(x8, p, {0.0, NoiseMode::Poisson, 0}), ConfigError);
  (void)x;
}

TEST(Fbp, ZeroDataGivesZeroImage) {
  const Projector p = build_projector(Geometry{16, 23, 1.0}, 16, 16, 1.0);
  for (double v : fbp(Sinogram(p.geometry()), p).values) EXPECT_EQ(v, 0.0);
}

TEST(Fbp, RecoversDisc) {
  const std::size_t n = 128;
  const Projector p = build_projector(Geometry{180, 183, 1.0}, n, n, 1.0);
  const Image disc = disc_image(n, 40.0, 1.0);
  const Image rec = fbp(p.forward(disc), p);
  EXPECT_LE(dist2(rec.values, disc.values), 0.1 * norm2(disc.values));
}

TEST(Fbp, InvariantUnderCommonLengthScale) {
  const std::size_t n = 64;
  const Projector unit = build_projector(Geometry{96, 92, 1.0}, n, n, 1.0);
  const Projector fine = build_projector(Geometry{96, 92, 0.25}, n, n, 0.25);
  const Image disc = disc_image(n, 20.0, 0.7);
  const Image a = fbp(unit.forward(disc), unit), b = fbp(fine.forward(disc), fine);
  EXPECT_LE(dist2(a.values, b.values), 1e-10 * norm2(a.values));
}

TEST(Fbp, LinearAndAdjointPair) {
  SplitMix64 rng(7);
  const Projector p = build_projector(Geometry{16, 23, 0.8}, 16, 16, 1.0);
  Sinogram s1(p.geometry()), s2(p.geometry());
  for (double& v : s1.values) v = rng.normal();
  for (double& v : s2.values) v = rng.normal();
  const double a = 0.3, b = -1.7;
  Sinogram comb(p.geometry());
  for (std::size_t q = 0; q < comb.values.size(); ++q) comb.values[q] = a * s1.values[q] + b * s2.values[q];
  const Image lhs = fbp(comb, p), f1 = fbp(s1, p), f2 = fbp(s2, p);
  for (std::size_t j = 0; j < lhs.size(); ++j)
    EXPECT_NEAR(lhs.values[j], a * f1.values[j] + b * f2.values[j], 1e-10 * (1.0 + std::abs(lhs.values[j])));
  Image g(16, 16);
  for (double& v : g.values) v = rng.normal();
  EXPECT_NEAR(dot(fbp(s1, p).values, g.values), dot(s1.values, fbp_adjoint(g, p).values),
              1e-10 * norm2(g.values) * norm2(s1.values));
}

TEST(Fbp, RamLakTaps) {
  EXPECT_EQ(ramlak_tap(0, 1.0), 0.25);
  EXPECT_EQ(ramlak_tap(2, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(ramlak_tap(1, 1.0), -1.0 / (std::numbers::pi * std::numbers::pi));
  EXPECT_DOUBLE_EQ(ramlak_tap(-3, 2.0), -1.0 / (std::numbers::pi * std::numbers::pi * 9.0 * 4.0));
}

TEST(Metrics, PsnrClosedForms) {
  Image ref(16, 16);
  for (std::size_t j = 0; j < ref.size(); ++j) ref.values[j] = static_cast<double>(j % 7) / 6.0;
  EXPECT_TRUE(std::isinf(psnr(ref, ref)));
  Image off = ref;
  for (double& v : off.values) v += 0.1;
  EXPECT_NEAR(psnr(off, ref, 1.0), 20.0, 1e-12);
  EXPECT_THROW(psnr(Image(4, 4), ref), DimensionError);
}

TEST(Metrics, PsnrDecreasesWithNoise) {
  const Image ref = shepp_logan(32);
  SplitMix64 rng(8);
  Vec noise(ref.size());
  for (double& v : noise) v = rng.normal();
  double prev = INFINITY;
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    Image x = ref;
    axpy(amp, noise, x.values);
    const double v = psnr(x, ref);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Metrics, Ssim) {
  const Image ref = shepp_logan(32);
  EXPECT_NEAR(ssim(ref, ref), 1.0, 1e-12);
  Image z(16, 16);
  SplitMix64 rng(9);
  for (double& v : z.values) v = rng.normal();
  double mean = 0.0;
  for (double v : z.values) mean += v;
  mean /= static_cast<double>(z.size());
  for (double& v : z.values) v -= mean;
  Image neg = z;
  for (double& v : neg.values) v = -v;
  EXPECT_LT(ssim(neg, z), 0.0);
  Image noisy = ref;
  for (double& v : noisy.values) v += 0.1 * rng.normal();
  const double s = ssim(noisy, ref);
  EXPECT_GT(s, 0.0);
  EXPECT_LT(s, 1.0);
  EXPECT_THROW(ssim(Image(8, 8), Image(8, 8, 1.0, 1.0)), DimensionError);
}

#include <gtest/gtest.h>

#include "unrollct/nnet.hpp"

using namespace unrollct;

namespace {

Planes random_planes(std::size_t c, std::size_t h, std::size_t w, SplitMix64& rng) {
  Planes p(c, h, w);
  for (double& v : p.data) v = rng.normal();
  return p;
}

// Direct evaluation of one zero-padded correlation layer from the accessors.
Planes naive_layer(const ConvSubnet& net, std::size_t l, const Planes& a) {
  const auto& s = net.layers()[l];
  const long p = static_cast<long>(s.k / 2);
  Planes z(s.out_ch, a.height, a.width);
  for (std::size_t o = 0; o < s.out_ch; ++o)
    for (long y = 0; y < static_cast<long>(a.height); ++y)
      for (long x = 0; x < static_cast<long>(a.width); ++x) {
        double acc = net.bias(l, o);
        for (std::size_t i = 0; i < s.in_ch; ++i)
          for (long ky = 0; ky < static_cast<long>(s.k); ++ky)
            for (long kx = 0; kx < static_cast<long>(s.k); ++kx) {
              const long yy = y + ky - p, xx = x + kx - p;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(a.height) || xx >= static_cast<long>(a.width)) continue;
              acc += net.kernel(l, o, i, static_cast<std::size_t>(ky), static_cast<std::size_t>(kx)) *
                     a.data[i * a.plane_size() + static_cast<std::size_t>(yy) * a.width + static_cast<std::size_t>(xx)];
            }
        z.data[o * z.plane_size() + static_cast<std::size_t>(y) * a.width + static_cast<std::size_t>(x)] = acc;
      }
  return z;
}

Planes naive_forward(const ConvSubnet& net, const Planes& in) {
  Planes a = in;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    a = naive_layer(net, l, a);
    if (l + 1 < net.layers().size())
      for (double& v : a.data) v = v > 0.0 ? v : kLeakySlope * v;
  }
  if (net.skip())
    for (std::size_t q = 0; q < a.plane_size(); ++q) a.data[q] += in.data[q];
  return a;
}

ConvSubnet random_net(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t k, bool skip,
                      SplitMix64& rng) {
  ConvSubnet n = ConvSubnet::make(in, hidden, depth, k, skip);
  for (double& v : n.params()) v = 0.5 * rng.normal();
  return n;
}

}  // namespace

TEST(Subnet, ShapesAndParamCount) {
  const ConvSubnet n = ConvSubnet::make(3, 8, 3, 3, true);
  ASSERT_EQ(n.layers().size(), 3u);
  EXPECT_EQ(n.param_count(), (8 * 3 * 9 + 8) + (8 * 8 * 9 + 8) + (1 * 8 * 9 + 1));
  EXPECT_EQ(n.in_channels(), 3u);
  EXPECT_THROW(ConvSubnet::make(2, 4, 2, 4, false), ConfigError);
}

TEST(Subnet, InitIsBoundedAndDeterministic) {
  ConvSubnet a = ConvSubnet::make(2, 4, 2, 3, true), b = ConvSubnet::make(2, 4, 2, 3, true);
  SplitMix64 r1(5), r2(5);
  a.init_uniform(r1);
  b.init_uniform(r2);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    const auto& s = a.layers()[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in_ch * s.k * s.k));
    for (std::size_t o = 0; o < s.out_ch; ++o) {
      EXPECT_EQ(a.bias(l, o), 0.0);
      for (std::size_t i = 0; i < s.in_ch; ++i)
        for (std::size_t y = 0; y < s.k; ++y)
          for (std::size_t x = 0; x < s.k; ++x) EXPECT_LE(std::abs(a.kernel(l, o, i, y, x)), bound);
    }
  }
}

TEST(Subnet, ForwardMatchesNaiveOracle) {
  SplitMix64 rng(6);
  for (std::size_t k : {1u, 3u, 5u})
    for (bool skip : {false, true}) {
      const ConvSubnet n = random_net(3, 4, 3, k, skip, rng);
      const Planes in = random_planes(3, 7, 5, rng);
      const Planes got = n.forward(in), want = naive_forward(n, in);
      ASSERT_EQ(got.data.size(), want.data.size());
      for (std::size_t q = 0; q < got.data.size(); ++q) EXPECT_NEAR(got.data[q], want.data[q], 1e-12);
    }
}

TEST(Subnet, ZeroNetWithSkipIsIdentityOnChannelZero) {
  const ConvSubnet n = ConvSubnet::make(2, 4, 2, 3, true);
  SplitMix64 rng(7);
  const Planes in = random_planes(2, 4, 4, rng);
  const Planes out = n.forward(in);
  for (std::size_t q = 0; q < 16; ++q) EXPECT_EQ(out.data[q], in.data[q]);
}

TEST(Subnet, GradientsMatchFiniteDifferences) {
  SplitMix64 rng(8);
  ConvSubnet n = random_net(2, 3, 3, 3, true, rng);
  const Planes in = random_planes(2, 5, 6, rng);
  const Planes cot = random_planes(1, 5, 6, rng);
  Tape tape;
  (void)n.forward(in, &tape);
  Vec pg(n.param_count(), 0.0);
  const Planes ig = n.backward(tape, cot, pg);

  auto loss = [&](const ConvSubnet& net, const Planes& x) { return dot(net.forward(x).data, cot.data); };
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t q = 0; q < n.param_count(); ++q) {
    ConvSubnet np = n, nm = n;
    np.params()[q] += h;
    nm.params()[q] -= h;
    const double fd = (loss(np, in) - loss(nm, in)) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - pg[q]) / std::max(1.0, std::abs(fd)));
  }
  for (std::size_t q = 0; q < in.data.size(); ++q) {
    Planes ip = in, im = in;
    ip.data[q] += h;
    im.data[q] -= h;
    const double fd = (loss(n, ip) - loss(n, im)) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - ig.data[q]) / std::max(1.0, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Subnet, BackwardAccumulates) {
  SplitMix64 rng(9);
  const ConvSubnet n = random_net(1, 2, 2, 3, false, rng);
  const Planes in = random_planes(1, 4, 4, rng), cot = random_planes(1, 4, 4, rng);
  Tape tape;
  (void)n.forward(in, &tape);
  Vec once(n.param_count(), 0.0), twice(n.param_count(), 0.0);
  (void)n.backward(tape, cot, once);
  (void)n.backward(tape, cot, twice);
  (void)n.backward(tape, cot, twice);
  for (std::size_t q = 0; q < once.size(); ++q) EXPECT_NEAR(twice[q], 2.0 * once[q], 1e-12);
}

TEST(Subnet, RejectsWrongShapes) {
  const ConvSubnet n = ConvSubnet::make(2, 4, 2, 3, false);
  EXPECT_THROW((void)n.forward(Planes(3, 4, 4)), DimensionError);
  Tape tape;
  (void)n.forward(Planes(2, 4, 4), &tape);
  Vec pg(n.param_count());
  EXPECT_THROW((void)n.backward(tape, Planes(1, 3, 3), pg), DimensionError);
  Vec bad(1);
  EXPECT_THROW((void)n.backward(tape, Planes(1, 4, 4), bad), DimensionError);
}

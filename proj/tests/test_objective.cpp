#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "tunein/objective.hpp"

using namespace tunein;
using tunein::testing::gradcheck;
using TD = Tensor<double>;

namespace {

Signal noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Signal s(n);
  for (auto& v : s) v = g(rng);
  return s;
}

Signal centred(Signal x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  for (auto& v : x) v -= m;
  return x;
}

double dotp(const Signal& a, const Signal& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

}  // namespace

TEST(SiSnr, ScaledCopyHitsCeilingForAnyScale) {
  std::mt19937_64 rng(1);
  const auto s = noise(400, rng);
  Signal a(s), b(s);
  for (auto& v : a) v *= 0.3;
  for (auto& v : b) v *= 7.0;
  EXPECT_GE(si_snr(s, a), 80.0);
  EXPECT_GE(si_snr(s, b), 80.0);
}

TEST(SiSnr, OrthogonalNoiseAtTenDb) {
  std::mt19937_64 rng(2);
  const auto s = centred(noise(1000, rng));
  auto n = centred(noise(1000, rng));
  const double k = dotp(n, s) / dotp(s, s);
  for (std::size_t i = 0; i < n.size(); ++i) n[i] -= k * s[i];
  const double g = std::sqrt(dotp(s, s) / 10 / dotp(n, n));
  Signal e(s);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] += g * n[i];
  EXPECT_NEAR(si_snr(s, e), 10.0, 0.01);
}

TEST(SiSnr, OrthogonalEstimateAndOffsets) {
  const Signal s{1, -1, 1, -1};
  const Signal e{1, 1, -1, -1};
  const double v = si_snr(s, e);
  EXPECT_LT(v, -60.0);
  EXPECT_DOUBLE_EQ(v, si_snr(s, Signal{-1, -1, 1, 1}));
  std::mt19937_64 rng(3);
  const auto t = noise(200, rng);
  auto est = noise(200, rng);
  const double base = si_snr(t, est);
  for (auto& x : est) x += 5.0;
  EXPECT_NEAR(si_snr(t, est), base, 1e-9);
  EXPECT_THROW(si_snr(Signal(4, 1.0), e), std::invalid_argument);
  EXPECT_THROW(si_snr(s, Signal{1, 2}), std::invalid_argument);
}

TEST(SiSnr, ScaleInvarianceOverRandomTriples) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> sc(0.1, 10.0);
  std::uniform_real_distribution<double> mixw(0.1, 3.0);
  for (int t = 0; t < 100; ++t) {
    const auto s = noise(256, rng);
    auto e = noise(256, rng);
    const double w = mixw(rng);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = s[i] + w * e[i];
    Signal e2(e);
    const double a = sc(rng);
    for (auto& v : e2) v *= a;
    EXPECT_NEAR(si_snr(s, e), si_snr(s, e2), 1e-6);
  }
}

TEST(SiSnr, TensorMatchesScalarAndGradient) {
  std::mt19937_64 rng(5);
  const auto s = noise(50, rng);
  const auto e = noise(50, rng);
  const auto ts = TD::from_vector({50}, s);
  auto te = TD::from_vector({50}, e, true);
  EXPECT_NEAR(si_snr_tensor(ts, te).item(), si_snr(s, e), 1e-10);
  EXPECT_LT(gradcheck([&] { return si_snr_tensor(ts, te); }, {te}), 1e-6);
}

TEST(Improvements, MixtureAndPerfectEstimates) {
  std::mt19937_64 rng(6);
  const auto a = noise(300, rng);
  const auto b = noise(300, rng);
  Signal mix(300);
  for (std::size_t i = 0; i < 300; ++i) mix[i] = a[i] + b[i];
  const auto zero = improvements(mix, {a, b}, {mix, mix});
  EXPECT_NEAR(zero.si_snri, 0.0, 1e-12);
  EXPECT_NEAR(zero.sdri, 0.0, 1e-12);
  const auto perfect = improvements(mix, {a, b}, {a, b});
  const double expect = -(si_snr(a, mix) + si_snr(b, mix)) / 2 + (si_snr(a, a) + si_snr(b, b)) / 2;
  EXPECT_NEAR(perfect.si_snri, expect, 1e-9);
  EXPECT_GT(perfect.si_snri, 70.0);
}

TEST(Sdr, ProjectionSnrDirectFormula) {
  std::mt19937_64 rng(7);
  const auto s = noise(100, rng);
  const auto e = noise(100, rng);
  const double a = dotp(e, s) / dotp(s, s);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    num += a * s[i] * a * s[i];
    den += (e[i] - a * s[i]) * (e[i] - a * s[i]);
  }
  EXPECT_NEAR(sdr(s, e), 10 * std::log10((num + 1e-8) / (den + 1e-8)), 1e-10);
}

TEST(Upit, SwapIdentityAndBruteForce) {
  std::mt19937_64 rng(8);
  const auto a = noise(200, rng);
  const auto b = noise(200, rng);
  EXPECT_EQ(upit_assign({a, b}, {b, a}).mapping, (std::vector<std::size_t>{1, 0}));
  EXPECT_DOUBLE_EQ(upit_assign({a, b}, {b, a}).cost, upit_assign({a, b}, {a, b}).cost);
  EXPECT_EQ(upit_assign({a}, {b}).mapping, (std::vector<std::size_t>{0}));
  for (int t = 0; t < 10; ++t) {
    std::vector<Signal> tg{noise(64, rng), noise(64, rng), noise(64, rng)};
    std::vector<Signal> es;
    for (const auto& x : tg) {
      Signal y(x);
      const auto n = noise(64, rng);
      for (std::size_t i = 0; i < 64; ++i) y[i] += 1.5 * n[i];
      es.push_back(y);
    }
    std::shuffle(es.begin(), es.end(), rng);
    const auto got = upit_assign(tg, es);
    std::vector<std::size_t> p{0, 1, 2}, best;
    double best_v = -1e300;
    do {
      double v = 0;
      for (std::size_t j = 0; j < 3; ++j) v += si_snr(tg[p[j]], es[j]) / 3;
      if (v > best_v) best_v = v, best = p;
    } while (std::next_permutation(p.begin(), p.end()));
    EXPECT_EQ(got.mapping, best);
    EXPECT_NEAR(got.cost, -best_v, 1e-12);
  }
  EXPECT_THROW(upit_assign({a, b}, {a}), std::invalid_argument);
}

TEST(Upit, TieBreaksLexicographically) {
  const auto a = best_permutation({{1, 1}, {1, 1}}, AssignMethod::upit_sisnr);
  EXPECT_EQ(a.mapping, (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(best_permutation(std::vector<std::vector<double>>(5, std::vector<double>(5)), AssignMethod::upit_sisnr),
               std::invalid_argument);
}

TEST(PitLoss, ExactlyInvariantUnderReferencePermutations) {
  std::mt19937_64 rng(9);
  for (const std::size_t c : {2u, 3u}) {
    std::vector<TD> tg, es;
    for (std::size_t j = 0; j < c; ++j) {
      tg.push_back(TD::from_vector({128}, noise(128, rng)));
      es.push_back(TD::from_vector({128}, noise(128, rng), true));
    }
    const double ref = pit_loss(tg, es).item();
    std::vector<std::size_t> p(c);
    std::iota(p.begin(), p.end(), 0);
    do {
      std::vector<TD> perm;
      for (const auto k : p) perm.push_back(tg[k]);
      EXPECT_EQ(pit_loss(perm, es).item(), ref);
    } while (std::next_permutation(p.begin(), p.end()));
  }
}

TEST(PitLoss, FixedPairingAndGradient) {
  std::mt19937_64 rng(10);
  const auto a = TD::from_vector({40}, noise(40, rng));
  const auto b = TD::from_vector({40}, noise(40, rng));
  auto e0 = TD::from_vector({40}, noise(40, rng), true);
  auto e1 = TD::from_vector({40}, noise(40, rng), true);
  const std::vector<std::size_t> swap{1, 0};
  PermutationAssignment chosen;
  const double v = pit_loss<double>({a, b}, {e0, e1}, &chosen, &swap).item();
  EXPECT_EQ(chosen.method, AssignMethod::upit_speaker);
  EXPECT_NEAR(v, -(si_snr_tensor(b, e0).item() + si_snr_tensor(a, e1).item()) / 2, 1e-12);
  EXPECT_LT(gradcheck([&] { return pit_loss<double>({a, b}, {e0, e1}); }, {e0, e1}), 1e-6);
}

TEST(SpeakerAssign, RecoversGeneratingPermutation) {
  const std::vector<Signal> table{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  const std::vector<int> ids{3, 1, 2};
  const std::vector<Signal> z{table[2], table[3], table[1]};
  const auto a = speaker_assign(z, ids, table, 2.0);
  EXPECT_EQ(a.mapping, (std::vector<std::size_t>{2, 0, 1}));
  EXPECT_DOUBLE_EQ(a.cost, 0.0);
  EXPECT_EQ(a.method, AssignMethod::upit_speaker);
  const auto two = speaker_assign({{0.9, 0.1}, {0.1, 0.2}}, {0, 1}, table, 1.0);
  EXPECT_EQ(two.mapping, (std::vector<std::size_t>{1, 0}));
}

TEST(JointLoss, Arithmetic) {
  const auto sep = TD::scalar(-3.0);
  const auto spk = TD::scalar(0.5);
  EXPECT_DOUBLE_EQ(joint_loss(sep, spk, 10.0).item(), 2.0);
  EXPECT_DOUBLE_EQ(joint_loss(sep, spk, 0.0).item(), -3.0);
  EXPECT_DOUBLE_EQ(joint_loss(TD(), spk, 10.0).item(), 5.0);
  EXPECT_DOUBLE_EQ(joint_loss(sep, TD(), 10.0).item(), -3.0);
  EXPECT_THROW(joint_loss(TD(), TD(), 1.0), std::invalid_argument);
}

TEST(MetricsCsv, Layout) {
  MixtureMetrics m{"mix_000", 5.5, 4.25, 4.5, {1, 0}, AssignMethod::upit_sisnr};
  EXPECT_EQ(metrics_csv({m}), "id,si_snr,si_snri,sdri,permutation,method\nmix_000,5.5,4.25,4.5,1-0,upit_sisnr\n");
}

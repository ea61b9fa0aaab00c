#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "tunein/speaker.hpp"

using namespace tunein;
using tunein::testing::gradcheck;
using tunein::testing::random_tensor;
using TD = Tensor<double>;

namespace {

TD alpha_of(double a) { return TD::from_vector({1}, {a}); }

}  // namespace

TEST(TuneInce, SingleSpeakerIsExactlyZero) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto E = random_tensor({1, 5}, rng, -3, 3, false);
    const auto z = random_tensor({5}, rng, -3, 3, false);
    EXPECT_EQ(tune_ince_loss<double>({z}, {0}, E, alpha_of(2.5)).item(), 0.0);
  }
}

TEST(TuneInce, TinyAlphaGivesLogN) {
  std::mt19937_64 rng(2);
  for (const std::size_t n : {2u, 7u, 20u}) {
    const auto E = random_tensor({n, 4}, rng, -1, 1, false);
    const auto z = random_tensor({4}, rng, -1, 1, false);
    EXPECT_NEAR(tune_ince_loss<double>({z}, {1}, E, alpha_of(1e-12)).item(), std::log(static_cast<double>(n)), 1e-6);
  }
}

TEST(TuneInce, TwoSpeakerClosedForm) {
  for (const double d : {0.1, 0.7, 1.5, 3.0}) {
    const auto E = TD::from_vector({2, 2}, {0.0, 0.0, d * 0.6, d * 0.8});
    const auto z = TD::from_vector({2}, {0.0, 0.0});
    EXPECT_NEAR(tune_ince_loss<double>({z}, {0}, E, alpha_of(1.0)).item(), std::log1p(std::exp(-d * d)), 1e-9);
  }
}

TEST(TuneInce, GradientsAndDetachedTable) {
  std::mt19937_64 rng(3);
  auto E = random_tensor({4, 3}, rng);
  auto z0 = random_tensor({3}, rng);
  auto z1 = random_tensor({3}, rng);
  auto alpha = TD::from_vector({1}, {0.8}, true);
  EXPECT_LT(gradcheck([&] { return tune_ince_loss<double>({z0, z1}, {2, 0}, E, alpha); }, {z0, z1, alpha}), 1e-6);
  E.zero_grad();
  tune_ince_loss<double>({z0}, {2}, E, alpha).backward();
  EXPECT_FALSE(E.has_grad());
  EXPECT_LT(gradcheck([&] { return token_id_loss<double>({z0, z1}, {2, 0}, E, alpha); }, {E, z0, alpha}), 1e-6);
  EXPECT_THROW(tune_ince_loss<double>({z0}, {4}, E, alpha), std::out_of_range);
  EXPECT_THROW(tune_ince_loss<double>({z0, z1}, {0}, E, alpha), std::invalid_argument);
}

TEST(Identities, HoldOverRandomInstances) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> ua(0.05, 2.0);
  double e2 = 0, e3 = 0, e4 = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 6, d = 1 + rng() % 6, c = 1 + rng() % 3;
    std::vector<std::vector<double>> E(n, std::vector<double>(d)), z(c, std::vector<double>(d));
    for (auto& r : E) for (auto& v : r) v = u(rng);
    for (auto& r : z) for (auto& v : r) v = u(rng);
    std::vector<int> ids;
    for (std::size_t j = 0; j < c; ++j) ids.push_back(static_cast<int>(rng() % n));
    const auto rep = ince_identity_checks(E, z, ids, ua(rng));
    e2 = std::max(e2, rep.claim2_max_error);
    e3 = std::max(e3, rep.claim3_max_error);
    e4 = std::max(e4, rep.claim4_max_error);
  }
  EXPECT_LT(e2, 1e-9);
  EXPECT_LT(e3, 1e-9);
  EXPECT_LT(e4, 1e-9);
}

TEST(RegLoss, NearestOtherRowAndValue) {
  const auto E = TD::from_vector({3, 2}, {0, 0, 1, 0, 5, 5}, true);
  EXPECT_EQ(nearest_other_row(E, 0), 1u);
  EXPECT_EQ(nearest_other_row(E, 2), 1u);
  const auto l = reg_loss(E, {0, 2}, 3.0);
  EXPECT_NEAR(l.item(), -(std::log(1.0) + std::log(9.0)) / 6.0, 1e-12);
  auto E2 = E;
  EXPECT_LT(gradcheck([&] { return reg_loss(E2, {0, 2}, 3.0); }, {E2}), 1e-6);
  // Coincident rows hit the floor instead of producing -inf.
  const auto same = TD::from_vector({2, 2}, {1, 1, 1, 1});
  EXPECT_NEAR(reg_loss(same, {0}, 1.0).item(), -std::log(1e-8), 1e-9);
  EXPECT_THROW(reg_loss(TD::zeros({1, 2}), {0}), std::invalid_argument);
}

TEST(Ema, ConvergesOnMatchedRowOnly) {
  Rng rng(9);
  ParameterSet<double> ps;
  auto table = make_speaker_table(ps, 4, 3, rng, 0.05);
  const auto before = table.E.values();
  std::normal_distribution<double> n(0.0, 0.2);
  const std::vector<double> centre{1.0, -2.0, 0.5};
  for (int s = 0; s < 2000; ++s) {
    std::vector<double> v(3);
    for (std::size_t c = 0; c < 3; ++c) v[c] = centre[c] + n(rng);
    ema_update(table, TD::from_vector({3}, v), 2);
  }
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double now = table.E.values()[r * 3 + c];
      if (r == 2) {
        EXPECT_NEAR(now, centre[c], 0.1);
      } else {
        EXPECT_EQ(now, before[r * 3 + c]);
      }
    }
  }
  EXPECT_THROW(ema_update(table, TD::zeros({3}), 4), std::out_of_range);
  EXPECT_EQ(nearest_row(table.E, TD::from_vector({3}, centre)), 2u);
  EXPECT_DOUBLE_EQ(table.alpha(), 1.0);
}

TEST(Roc, PerfectTiedAndHandCases) {
  const auto perfect = roc_metrics({{0.9, true}, {0.8, true}, {0.3, false}, {0.1, false}});
  EXPECT_DOUBLE_EQ(perfect.auc, 1.0);
  EXPECT_DOUBLE_EQ(perfect.eer, 0.0);
  const auto tied = roc_metrics({{0.5, true}, {0.5, false}, {0.5, true}, {0.5, false}});
  EXPECT_DOUBLE_EQ(tied.auc, 0.5);
  EXPECT_DOUBLE_EQ(tied.eer, 0.5);
  const auto inverted = roc_metrics({{0.1, true}, {0.9, false}});
  EXPECT_DOUBLE_EQ(inverted.auc, 0.0);
  EXPECT_DOUBLE_EQ(inverted.eer, 1.0);
  // One swap among 2+2: AUC 3/4.
  const auto mixed = roc_metrics({{0.9, true}, {0.7, false}, {0.6, true}, {0.2, false}});
  EXPECT_DOUBLE_EQ(mixed.auc, 0.75);
  EXPECT_DOUBLE_EQ(mixed.eer, 0.5);
  EXPECT_THROW(roc_metrics({{0.1, true}}), std::invalid_argument);
  EXPECT_EQ(roc_csv(perfect).substr(0, 20), "threshold,fpr,tpr\nin");
}

TEST(SvScore, KernelValues) {
  EXPECT_DOUBLE_EQ(sv_score({1, 2}, {1, 2}, 3.0), 1.0);
  EXPECT_NEAR(sv_score({0, 0}, {1, 1}, 0.5), std::exp(-1.0), 1e-15);
  EXPECT_THROW(sv_score({0}, {0, 1}, 1.0), std::invalid_argument);
}

TEST(Embedder, SplitsIntoSources) {
  Rng rng(10);
  ParameterSet<double> ps;
  const auto p = make_projection(ps, "embedder", 2 * 4, 4, rng);
  std::mt19937_64 r2(1);
  auto x = random_tensor({3, 5, 4}, r2);
  const auto y = embed_speakers(x, p, 2);
  ASSERT_EQ(y.size(), 2u);
  EXPECT_EQ(y[1].shape(), (Shape{3, 4}));
  const auto full = mean(p(x), 1);
  EXPECT_DOUBLE_EQ(y[1].at({2, 3}), full.at({2, 7}));
  EXPECT_THROW(embed_speakers(x, p, 3), ShapeError);
}

TEST(EmbeddingsCsv, RoundTripSortedByLabel) {
  const std::vector<std::pair<int, std::vector<double>>> rows{{3, {0.1, -2.5}}, {1, {1.0 / 3.0, 7.0}}};
  const auto csv = embeddings_csv(rows);
  EXPECT_EQ(csv.substr(0, 11), "label,d0,d1");
  const auto back = parse_embeddings_csv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, 1);
  EXPECT_EQ(back[0].second, rows[1].second);
  EXPECT_EQ(back[1].second, rows[0].second);
}

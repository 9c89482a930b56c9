#include <cmath>
#include <numbers>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "milo/discriminators.hpp"
#include "test_util.hpp"

namespace milo {
namespace {

/// Projected gradient ascent on w^T delta over ||w||^2 <= r^2 from a random start.
double numeric_mmd(const Vec& delta, double radius_sq, Rng& rng) {
  const double r = std::sqrt(radius_sq);
  std::normal_distribution<double> g(0.0, 1.0);
  Vec w(delta.size());
  for (int i = 0; i < w.size(); ++i) w(i) = g(rng);
  w *= 0.01;
  for (int it = 0; it < 5000; ++it) {
    w += 0.05 * delta;
    if (w.norm() > r) w *= r / w.norm();
  }
  return w.dot(delta);
}

TEST(MMD, ClosedFormMatchesNumericMaximizer) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 7;
    const Mat pts = testing::random_table(2, d, rng, -1.0, 1.0);
    const Vec mu_model = pts.row(0).transpose(), mu_expert = pts.row(1).transpose();
    const double radius_sq = 0.25 + trial * 0.1;
    const MMDBestResponse br = mmd_best_response(mu_model, mu_expert, radius_sq);
    EXPECT_NEAR(br.ipm_value, numeric_mmd(mu_model - mu_expert, radius_sq, rng), 1e-4);
    EXPECT_NEAR(br.discriminator(mu_model) - br.discriminator(mu_expert), br.ipm_value, 1e-12);
    EXPECT_LE(br.discriminator.w.squaredNorm(), radius_sq + 1e-12);
  }
}

TEST(MMD, NoFeasibleWitnessBeatsClosedForm) {
  Rng rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  const Vec delta = Vec::LinSpaced(4, -0.5, 1.0);
  const double best = mmd_best_response(delta, Vec::Zero(4)).ipm_value;
  for (int k = 0; k < 2000; ++k) {
    Vec w(4);
    for (int i = 0; i < 4; ++i) w(i) = g(rng);
    w /= std::max(1.0, w.norm());
    EXPECT_LE(w.dot(delta), best + 1e-12);
  }
}

TEST(MMD, IdenticalMeansGiveZeroWitness) {
  const MMDBestResponse br = mmd_best_response(Vec::Ones(3), Vec::Ones(3));
  EXPECT_EQ(br.ipm_value, 0.0);
  EXPECT_EQ(br.discriminator.w, Vec::Zero(3));
  EXPECT_THROW(mmd_best_response(Vec::Ones(3), Vec::Ones(2)), ConfigError);
  EXPECT_THROW(mmd_best_response(Vec::Ones(3), Vec::Ones(3), 0.0), ConfigError);
}

TEST(FiniteClass, BestResponseMatchesExhaustiveSearch) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Mat> members;
    for (int k = 0; k < 6; ++k) members.push_back(testing::random_table(4, 3, rng, 0.0, 1.0));
    const FiniteClass cls(members);
    const Mat dm = testing::random_table(4, 3, rng, 0.0, 1.0).normalized();
    const Mat de = testing::random_table(4, 3, rng, 0.0, 1.0).normalized();
    double best = -1e300;
    for (const Mat& f : members) {
      double gap = 0.0;
      for (int s = 0; s < 4; ++s) {
        for (int a = 0; a < 3; ++a) gap += f(s, a) * (dm(s, a) - de(s, a));
      }
      best = std::max(best, gap);
    }
    EXPECT_NEAR(best_response_finite(cls, dm, de).ipm_value, best, 1e-14);
  }
}

TEST(FiniteClass, TiesGoToLowestIndex) {
  const Mat f = Mat::Constant(2, 2, 0.5);
  const FiniteClass cls({Mat::Zero(2, 2), f, f});
  Mat dm = Mat::Zero(2, 2), de = Mat::Zero(2, 2);
  dm(0, 0) = 1.0;
  de(1, 1) = 1.0;
  // Every member has gap 0 here: index 0 wins.
  EXPECT_EQ(best_response_finite(cls, dm, de).index, 0);
  Mat g = f;
  g(0, 0) = 1.0;
  const FiniteClass cls2({f, g, g});
  EXPECT_EQ(best_response_finite(cls2, dm, de).index, 1);
}

TEST(FiniteClass, ValidatesMembers) {
  EXPECT_THROW(FiniteClass({}), ConfigError);
  EXPECT_THROW(FiniteClass({Mat::Zero(2, 2), Mat::Zero(3, 2)}), ConfigError);
  EXPECT_THROW(FiniteClass({Mat::Constant(2, 2, 1.5)}), ConfigError);
  const FiniteClass ok({Mat::Zero(2, 2)});
  EXPECT_THROW(best_response_finite(ok, Mat::Zero(3, 2), Mat::Zero(3, 2)), ConfigError);
}

TEST(RFF, InnerProductApproximatesRbfKernel) {
  const double h = 0.8;
  const RFFMap map = make_rff(3, 20000, h, 7);
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const Mat pts = testing::random_table(2, 3, rng, -1.0, 1.0);
    const Vec x = pts.row(0).transpose(), y = pts.row(1).transpose();
    const double exact = std::exp(-(x - y).squaredNorm() / (2 * h * h));
    EXPECT_NEAR(map.featurize(x).dot(map.featurize(y)), exact, 0.03);
  }
}

TEST(RFF, FeatureNormIsBounded) {
  const RFFMap map = make_rff(2, 64, 1.0, 1);
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    const Vec x = testing::random_table(2, 1, rng, -5.0, 5.0);
    EXPECT_LE(map.featurize(x).norm(), std::sqrt(2.0) + 1e-12);
  }
}

TEST(RFF, NormalizationAndStateActionConcat) {
  RFFMap map = make_rff(3, 16, 1.0, 2);
  Vec s(2), a(1), x(3);
  s << 0.1, 0.2;
  a << -0.3;
  x << 0.1, 0.2, -0.3;
  EXPECT_EQ(map.featurize(s, a), map.featurize(x));
  map.set_normalization(Vec::Ones(3), Vec::Constant(3, 2.0));
  RFFMap plain = make_rff(3, 16, 1.0, 2);
  EXPECT_TRUE(map.featurize(x).isApprox(plain.featurize((x - Vec::Ones(3)) / 2.0), 1e-14));
  EXPECT_THROW(map.set_normalization(Vec::Zero(3), Vec::Zero(3)), ConfigError);
}

TEST(RFF, SeededAndRoundTrips) {
  const RFFMap a = make_rff(2, 10, 0.5, 42);
  const RFFMap b = make_rff(2, 10, 0.5, 42);
  EXPECT_EQ(a.frequencies(), b.frequencies());
  EXPECT_EQ(a.phases(), b.phases());
  RFFMap c = a;
  c.set_normalization(Vec::Constant(2, 0.25), Vec::Constant(2, 3.0));
  const RFFMap back = RFFMap::from_json(c.to_json());
  const Vec q = Vec::Constant(2, 0.7);
  EXPECT_EQ(back.featurize(q), c.featurize(q));
  EXPECT_EQ(back.seed(), 42u);
  nlohmann::json bad = c.to_json();
  bad["phases"] = std::vector<double>{1.0};
  EXPECT_THROW(RFFMap::from_json(bad), ConfigError);
}

TEST(Standardization, MeanAndPopulationStd) {
  const std::vector<Vec> pts = {Vec::Constant(2, 1.0), Vec::Constant(2, 3.0)};
  const auto [mean, scale] = standardization(pts);
  EXPECT_EQ(mean, Vec::Constant(2, 2.0));
  EXPECT_EQ(scale, Vec::Constant(2, 1.0));
  const auto [m2, s2] = standardization({Vec::Zero(1)});
  EXPECT_EQ(s2(0), 1e-8);
}

TEST(OneHot, LayoutIsRowMajor) {
  const Vec v = one_hot(1, 2, 3, 4);
  EXPECT_EQ(v.size(), 12);
  EXPECT_EQ(v(6), 1.0);
  EXPECT_EQ(v.sum(), 1.0);
  EXPECT_THROW(one_hot(3, 0, 3, 4), ConfigError);
}

}  // namespace
}  // namespace milo

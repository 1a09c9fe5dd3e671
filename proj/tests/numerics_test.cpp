#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "test_support.hpp"
#include "treemaml/numerics.hpp"

using namespace treemaml;

TEST(Cosine, KnownValue) {
  EXPECT_NEAR(cosine_similarity({1, 2, 3}, {4, 5, 6}), 0.974631846197076, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_similarity({1, 0}, {0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity({2}, {-2}), -1.0);
}

TEST(Cosine, ZeroVectorRejected) {
  EXPECT_THROW(cosine_similarity({0, 0}, {1, 2}), ZeroVectorError);
  EXPECT_THROW(cosine_similarity({1, 2}, {0, 0}), ZeroVectorError);
}

TEST(Cosine, DimensionMismatch) { EXPECT_THROW(cosine_similarity({1, 2}, {1, 2, 3}), DimensionMismatchError); }

TEST(Cosine, Properties) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 1 + trial % 16;
    const auto a = fixtures::random_vector(d, rng);
    const auto b = fixtures::random_vector(d, rng);
    const double c = cosine_similarity(a, b);
    EXPECT_EQ(c, cosine_similarity(b, a));
    EXPECT_LE(std::abs(c), 1.0 + 1e-12);
    const double s = scale(rng);
    EXPECT_NEAR(cosine_similarity(a, s * a), 1.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(a, -s * a), -1.0, 1e-12);
    // bit-identical on repeat
    EXPECT_EQ(c, cosine_similarity(a, b));
  }
}

TEST(SetSimilarity, KnownValue) {
  const double r = 1.0 / std::sqrt(2.0);
  const std::vector<ParamVector> v{{1, 0}, {0, 1}, {r, r}};
  const auto s = set_similarity(v);
  EXPECT_NEAR(s.mean_pairwise, 0.4714045207910317, 1e-15);
  EXPECT_NEAR(s.std_pairwise, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(s.count_pairs, 3u);
}

TEST(SetSimilarity, IdenticalVectors) {
  const std::vector<ParamVector> v(5, ParamVector{0.3, -1.2, 4.0});
  const auto s = set_similarity(v);
  EXPECT_NEAR(s.mean_pairwise, 1.0, 1e-15);
  EXPECT_NEAR(s.std_pairwise, 0.0, 1e-7);
  EXPECT_EQ(s.count_pairs, 10u);
}

TEST(SetSimilarity, SmallSets) {
  const std::vector<ParamVector> one{{1, 2}};
  const auto s = set_similarity(one);
  EXPECT_EQ(s.mean_pairwise, 1.0);
  EXPECT_EQ(s.std_pairwise, 0.0);
  EXPECT_EQ(s.count_pairs, 0u);
  const std::vector<ParamVector> with_zero{{1, 2}, {0, 0}};
  EXPECT_THROW(set_similarity(with_zero), ZeroVectorError);
}

TEST(Statistics, ConfidenceHalfwidth) {
  const std::vector<double> xs{0.0, 1.0};
  EXPECT_NEAR(confidence_halfwidth_95(xs), 0.98, 1e-15);
  EXPECT_NEAR(mean(xs), 0.5, 0.0);
  EXPECT_NEAR(sample_stddev(xs), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Statistics, TooFewSamples) {
  const std::vector<double> empty;
  const std::vector<double> one{3.0};
  EXPECT_THROW(mean(empty), InsufficientSamplesError);
  EXPECT_THROW(sample_stddev(one), InsufficientSamplesError);
  EXPECT_THROW(confidence_halfwidth_95(one), InsufficientSamplesError);
}

TEST(FiniteDifference, Quadratic) {
  // f(x) = x0^2 + 3 x0 x1 - x1^3, grad = (2 x0 + 3 x1, 3 x0 - 3 x1^2)
  auto f = [](const ParamVector& x) { return x[0] * x[0] + 3 * x[0] * x[1] - x[1] * x[1] * x[1]; };
  const ParamVector x{1.5, -0.5};
  const auto g = finite_difference_gradient(f, x);
  EXPECT_LT(relative_error(g, ParamVector{1.5, 3.75}), 1e-9);
  EXPECT_THROW(finite_difference_gradient(f, x, 0.0), ConfigError);
}

TEST(ParamVector, Invariants) {
  EXPECT_THROW(ParamVector(std::vector<double>{}), ConfigError);
  EXPECT_THROW((ParamVector{1.0, std::nan("")}), NumericalError);
  EXPECT_THROW(ParamVector::zeros(0), ConfigError);
  ParamVector big{1e308};
  EXPECT_THROW(big *= 10.0, NumericalError);
  ParamVector a{1, 2};
  EXPECT_THROW((a += ParamVector{1, 2, 3}), DimensionMismatchError);
  EXPECT_EQ((a + ParamVector{1, 1}), (ParamVector{2, 3}));
  EXPECT_EQ(2.0 * a, (ParamVector{2, 4}));
  EXPECT_EQ(a.perturbed(1, 0.5), (ParamVector{1, 2.5}));
}

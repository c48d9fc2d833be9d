#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cytocon/error.hpp"
#include "cytocon/objective.hpp"
#include "cytocon/rng.hpp"

using namespace cytocon;

namespace {

TensorD random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  TensorD z({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      z.at(i, k) = rng.normal();
      norm += z.at(i, k) * z.at(i, k);
    }
    for (std::size_t k = 0; k < d; ++k) z.at(i, k) /= std::sqrt(norm);
  }
  return z;
}

std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

// Direct transcription of the per-anchor definition, without any stabilising
// shift; averages over anchors that have positives.
double naive_loss(const TensorD& z, const std::vector<int>& y, double tau) {
  const std::size_t n = z.dim(0), d = z.dim(1);
  auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += z.at(a, k) * z.at(b, k);
    return s;
  };
  double total = 0.0;
  int active = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) denom += std::exp(dot(i, k) / tau);
    }
    double li = 0.0;
    int positives = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || y[j] != y[i]) continue;
      li -= std::log(std::exp(dot(i, j) / tau) / denom);
      ++positives;
    }
    if (positives > 0) {
      total += li / positives;
      ++active;
    }
  }
  return active ? total / active : 0.0;
}

}  // namespace

TEST(Contrastive, IdenticalPairIsZero) {
  const TensorD z({2, 3}, {1, 0, 0, 1, 0, 0});
  const std::vector<int> y{4, 4};
  EXPECT_NEAR(supervised_contrastive_loss(z, y, 1.0).value, 0.0, 1e-12);
}

TEST(Contrastive, NoPositivesIsZero) {
  const TensorD z({2, 2}, {1, 0, 0, 1});
  const std::vector<int> y{0, 1};
  const auto r = supervised_contrastive_loss(z, y, 1.0);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.active_anchors, 0u);
}

TEST(Contrastive, TwoOrthogonalPairs) {
  const TensorD z({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  const std::vector<int> y{0, 0, 1, 1};
  const double e = std::exp(1.0);
  const double expected = std::log((e + 2.0) / e);
  const auto r = supervised_contrastive_loss(z, y, 1.0);
  EXPECT_NEAR(r.value, expected, 1e-12);
  EXPECT_NEAR(r.value, 0.551445, 1e-6);
  for (const double li : r.per_anchor) EXPECT_NEAR(li, expected, 1e-12);
}

TEST(Contrastive, MatchesNaiveDefinition) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(14);
    const auto z = random_unit_rows(n, 6, rng);
    const auto y = random_labels(n, 3, rng);
    const double tau = rng.uniform(0.2, 1.5);
    EXPECT_NEAR(supervised_contrastive_loss(z, y, tau).value, naive_loss(z, y, tau), 1e-10);
  }
}

TEST(Contrastive, NonNegativeAndPermutationInvariant) {
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(30);
    const auto z = random_unit_rows(n, 8, rng);
    const auto y = random_labels(n, 4, rng);
    const double base = supervised_contrastive_loss(z, y, 0.07).value;
    EXPECT_GE(base, 0.0);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    TensorD zp({n, 8});
    std::vector<int> yp(n);
    for (std::size_t i = 0; i < n; ++i) {
      yp[i] = y[perm[i]];
      for (std::size_t k = 0; k < 8; ++k) zp.at(i, k) = z.at(perm[i], k);
    }
    EXPECT_NEAR(supervised_contrastive_loss(zp, yp, 0.07).value, base, 1e-6);
  }
}

TEST(Contrastive, RotationInvariant) {
  Rng rng(13);
  const std::size_t d = 6;
  for (int t = 0; t < 100; ++t) {
    // Random orthonormal matrix by Gram-Schmidt on Gaussian columns.
    std::vector<std::vector<double>> q(d, std::vector<double>(d));
    for (std::size_t c = 0; c < d; ++c) {
      for (auto& v : q[c]) v = rng.normal();
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += q[c][k] * q[p][k];
        for (std::size_t k = 0; k < d; ++k) q[c][k] -= dot * q[p][k];
      }
      double norm = 0.0;
      for (const double v : q[c]) norm += v * v;
      for (auto& v : q[c]) v /= std::sqrt(norm);
    }
    const std::size_t n = 4 + rng.below(12);
    const auto z = random_unit_rows(n, d, rng);
    const auto y = random_labels(n, 3, rng);
    TensorD zr({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += q[c][k] * z.at(i, k);
        zr.at(i, c) = s;
      }
    }
    EXPECT_NEAR(supervised_contrastive_loss(zr, y, 0.1).value,
                supervised_contrastive_loss(z, y, 0.1).value, 1e-5);
  }
}

TEST(Contrastive, StableAtSmallTemperature) {
  Rng rng(14);
  const auto z = random_unit_rows(64, 16, rng);
  const auto y = random_labels(64, 5, rng);
  const auto r = supervised_contrastive_loss(z, y, 0.01);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(Contrastive, SeparatedClassesImproveAsTemperatureFalls) {
  const TensorD z({6, 3}, {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1});
  const std::vector<int> y{0, 0, 1, 1, 2, 2};
  const double a = supervised_contrastive_loss(z, y, 1.0).value;
  const double b = supervised_contrastive_loss(z, y, 0.5).value;
  const double c = supervised_contrastive_loss(z, y, 0.07).value;
  EXPECT_GT(a, b);
  EXPECT_GT(b, c);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng.below(15);
    auto z = random_unit_rows(n, 5, rng);
    const auto y = random_labels(n, 3, rng);
    const double tau = rng.uniform(0.2, 1.0);
    const auto r = supervised_contrastive_loss(z, y, tau);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double keep = z[i];
      z[i] = keep + 1e-5;
      const double up = supervised_contrastive_loss(z, y, tau, false).value;
      z[i] = keep - 1e-5;
      const double down = supervised_contrastive_loss(z, y, tau, false).value;
      z[i] = keep;
      const double numeric = (up - down) / 2e-5;
      diff += (numeric - r.grad[i]) * (numeric - r.grad[i]);
      scale = std::max(scale, numeric * numeric);
    }
    EXPECT_LT(std::sqrt(diff), 1e-4 * std::max(1.0, std::sqrt(scale)));
  }
}

TEST(Contrastive, RejectsBadInputs) {
  const TensorD z({2, 2}, {1, 0, 0, 1});
  const std::vector<int> y{0, 0};
  EXPECT_THROW(supervised_contrastive_loss(z, y, 0.0), ParameterError);
  const TensorD off({2, 2}, {2, 0, 0, 1});
  EXPECT_THROW(supervised_contrastive_loss(off, y, 1.0), ParameterError);
  const TensorD one({1, 2}, {1, 0});
  EXPECT_THROW(supervised_contrastive_loss(one, std::vector<int>{0}, 1.0), ShapeError);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const TensorD logits({3, 7}, 0.25);
  const std::vector<int> y{0, 3, 6};
  EXPECT_NEAR(softmax_cross_entropy(logits, y).value, std::log(7.0), 1e-12);
}

TEST(CrossEntropy, LargeMarginTendsToZero) {
  double previous = 1e9;
  for (const double margin : {1.0, 5.0, 10.0, 20.0}) {
    const TensorD logits({1, 3}, {margin, 0.0, 0.0});
    const double loss = softmax_cross_entropy(logits, std::vector<int>{0}).value;
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-8);
}

TEST(CrossEntropy, HandExample) {
  const TensorD logits({1, 2}, {0.0, std::log(3.0)});
  const auto r = softmax_cross_entropy(logits, std::vector<int>{0});
  EXPECT_NEAR(r.value, std::log(4.0), 1e-12);
  EXPECT_NEAR(r.grad[0], 0.25 - 1.0, 1e-12);
  EXPECT_NEAR(r.grad[1], 0.75, 1e-12);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  const TensorD logits({1, 2}, 0.0);
  EXPECT_THROW(softmax_cross_entropy(logits, std::vector<int>{2}), ParameterError);
}

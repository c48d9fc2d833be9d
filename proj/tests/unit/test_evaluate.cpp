#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cytocon/error.hpp"
#include "cytocon/evaluate.hpp"
#include "cytocon/rng.hpp"

namespace fs = std::filesystem;
using namespace cytocon;

namespace {

// Within-cluster sum of squares of a member set, straight from the points.
double ess(const Tensor& x, const std::vector<int>& members) {
  const std::size_t d = x.dim(1);
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (const int m : members) mean += x.at(m, k);
    mean /= members.size();
    for (const int m : members) total += (x.at(m, k) - mean) * (x.at(m, k) - mean);
  }
  return total;
}

struct OracleResult {
  std::vector<int> assignments;
  std::vector<double> costs;
};

// Greedy agglomeration that scores every candidate pair by recomputing the
// variance increase from the members; clusters are kept in order of their
// smallest member, which is also the tie order.
OracleResult ward_oracle(const Tensor& x, int k) {
  std::vector<std::vector<int>> clusters;
  for (int i = 0; i < static_cast<int>(x.dim(0)); ++i) clusters.push_back({i});
  OracleResult out;
  while (static_cast<int>(clusters.size()) > k) {
    std::size_t bi = 0, bj = 1;
    double best = INFINITY;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        std::vector<int> u = clusters[i];
        u.insert(u.end(), clusters[j].begin(), clusters[j].end());
        const double cost = ess(x, u) - ess(x, clusters[i]) - ess(x, clusters[j]);
        if (cost < best) {
          best = cost;
          bi = i;
          bj = j;
        }
      }
    }
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + bj);
    out.costs.push_back(best);
  }
  out.assignments.assign(x.dim(0), -1);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const int m : clusters[c]) out.assignments[m] = static_cast<int>(c);
  }
  return out;
}

double f1_oracle(const std::vector<int>& t, const std::vector<int>& p, int classes) {
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += t[i] == c && p[i] == c;
      fp += t[i] != c && p[i] == c;
      fn += t[i] == c && p[i] != c;
    }
    const double prec = tp + fp ? double(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn ? double(tp) / (tp + fn) : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    total += f1 * (tp + fn);
  }
  return total / t.size();
}

double topk_oracle(const Tensor& logits, const std::vector<int>& y, int k) {
  const std::size_t c = logits.dim(1);
  int hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::vector<int> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits.at(i, a) > logits.at(i, b); });
    hits += std::find(order.begin(), order.begin() + k, y[i]) != order.begin() + k;
  }
  return double(hits) / y.size();
}

Tensor random_features(std::size_t n, std::size_t d, Rng& rng) {
  Tensor x({n, d});
  for (auto& v : x.storage()) v = static_cast<float>(rng.normal());
  return x;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(WeightedF1, HandExamples) {
  const std::vector<int> perfect{0, 1, 2, 1};
  EXPECT_DOUBLE_EQ(weighted_f1(perfect, perfect, 3).weighted_f1, 1.0);
  const auto r = weighted_f1(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2);
  EXPECT_NEAR(r.weighted_f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.per_class[0].f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.per_class[1].f1, 2.0 / 3.0, 1e-12);
  const std::vector<int> uniform{0, 1, 2, 3, 0, 1, 2, 3};
  const std::vector<int> constant(8, 2);
  EXPECT_NEAR(weighted_f1(uniform, constant, 4).weighted_f1, 0.1, 1e-12);
}

TEST(WeightedF1, BalancedBinaryEqualsPlainF1AveragedWithSupport) {
  const std::vector<int> t{0, 0, 0, 1, 1, 1};
  const std::vector<int> p{0, 1, 1, 1, 1, 0};
  const auto r = weighted_f1(t, p, 2);
  EXPECT_NEAR(r.weighted_f1, 0.5 * (r.per_class[0].f1 + r.per_class[1].f1), 1e-12);
  EXPECT_EQ(r.per_class[0].support + r.per_class[1].support, 6u);
}

TEST(WeightedF1, Errors) {
  EXPECT_THROW(weighted_f1(std::vector<int>{}, std::vector<int>{}, 2), ParameterError);
  EXPECT_THROW(weighted_f1(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 2), ParameterError);
}

TEST(Metrics, MatchBruteForceOnRandomInstances) {
  Rng rng(21);
  for (int t = 0; t < 1000; ++t) {
    const int c = 2 + static_cast<int>(rng.below(6));
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> y(n), p(n);
    for (auto& v : y) v = static_cast<int>(rng.below(c));
    for (auto& v : p) v = static_cast<int>(rng.below(c));
    ASSERT_NEAR(weighted_f1(y, p, c).weighted_f1, f1_oracle(y, p, c), 1e-12);

    Tensor logits({n, static_cast<std::size_t>(c)});
    // Small integer range so ties are common.
    for (auto& v : logits.storage()) v = static_cast<float>(rng.below(4));
    const int k = 1 + static_cast<int>(rng.below(c));
    ASSERT_DOUBLE_EQ(topk_accuracy(logits, y, k), topk_oracle(logits, y, k));
    const double top1 = topk_accuracy(logits, y, 1);
    ASSERT_GE(topk_accuracy(logits, y, std::min(3, c)), top1);
    const auto pred = argmax_rows(logits);
    int agree = 0;
    for (std::size_t i = 0; i < n; ++i) agree += pred[i] == y[i];
    ASSERT_DOUBLE_EQ(top1, double(agree) / n);
  }
}

TEST(TopK, FullKAndErrors) {
  Rng rng(22);
  const auto logits = random_features(6, 4, rng);
  const std::vector<int> y{0, 1, 2, 3, 0, 1};
  EXPECT_EQ(topk_accuracy(logits, y, 4), 1.0);
  EXPECT_THROW(topk_accuracy(logits, y, 5), ParameterError);
  const auto m = evaluate_logits(logits, y);
  EXPECT_GE(m.top3, m.top1);
  EXPECT_EQ(m.total, 6u);
}

TEST(Ward, MatchesExhaustiveOracle) {
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(8);
    const auto x = random_features(n, 1 + rng.below(4), rng);
    const int k = 1 + static_cast<int>(rng.below(n));
    const auto report = ward_cluster(x, k);
    const auto oracle = ward_oracle(x, k);
    ASSERT_EQ(report.assignments, oracle.assignments) << "trial " << t;
    ASSERT_EQ(report.dendrogram.size(), oracle.costs.size());
    for (std::size_t m = 0; m < oracle.costs.size(); ++m) {
      EXPECT_NEAR(report.dendrogram[m].cost, oracle.costs[m], 1e-5 * (1.0 + oracle.costs[m]));
    }
  }
}

TEST(Ward, SmallExamples) {
  const Tensor line({3, 1}, std::vector<float>{0, 1, 10});
  EXPECT_EQ(ward_cluster(line, 2).assignments, (std::vector<int>{0, 0, 1}));
  const auto singletons = ward_cluster(line, 3);
  EXPECT_TRUE(singletons.dendrogram.empty());
  EXPECT_EQ(singletons.assignments, (std::vector<int>{0, 1, 2}));
  const Tensor twins({2, 2}, std::vector<float>{1, 2, 1, 2});
  const auto one = ward_cluster(twins, 1);
  ASSERT_EQ(one.dendrogram.size(), 1u);
  EXPECT_EQ(one.dendrogram[0].cost, 0.0);
  EXPECT_THROW(ward_cluster(line, 0), ParameterError);
  EXPECT_THROW(ward_cluster(line, 4), ParameterError);
}

TEST(Ward, TiesGoToLowestPair) {
  // Equidistant pairs (0,1) and (2,3): the first pair merges first.
  const Tensor x({4, 1}, std::vector<float>{0, 1, 5, 6});
  const auto r = ward_cluster(x, 3);
  EXPECT_EQ(r.dendrogram[0].first, 0);
  EXPECT_EQ(r.dendrogram[0].second, 1);
}

TEST(Composition, PureTieAndTotals) {
  ClusterReport pure{1, {0, 0, 0}, {}};
  const auto rows = cluster_composition(pure, std::vector<int>{2, 2, 2}, 3);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].percent, 100.0);

  ClusterReport mixed{1, std::vector<int>(100, 0), {}};
  std::vector<int> labels(100, 4);
  std::fill(labels.begin(), labels.begin() + 50, 1);
  const auto tie = cluster_composition(mixed, labels, 1);
  ASSERT_EQ(tie.size(), 1u);
  EXPECT_EQ(tie[0].label, 1);
  EXPECT_EQ(tie[0].percent, 50.0);

  Rng rng(24);
  const auto x = random_features(60, 3, rng);
  std::vector<int> y(60);
  for (auto& v : y) v = static_cast<int>(rng.below(5));
  const auto report = ward_cluster(x, 4);
  std::map<int, double> sums;
  for (const auto& row : cluster_composition(report, y, 0)) sums[row.cluster] += row.percent;
  EXPECT_EQ(sums.size(), 4u);
  for (const auto& [c, s] : sums) EXPECT_NEAR(s, 100.0, 1e-9);
}

TEST(Composition, OrthantFixtureIsPure) {
  // One class per orthant of R^3, tight clouds around (+-1, +-1, +-1).
  Rng rng(25);
  const std::size_t per = 20;
  Tensor x({8 * per, 3});
  std::vector<int> y(8 * per);
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t r = c * per + i;
      y[r] = static_cast<int>(c);
      for (std::size_t k = 0; k < 3; ++k) {
        const double sign = (c >> k) & 1 ? 1.0 : -1.0;
        x.at(r, k) = static_cast<float>(sign + 0.1 * rng.normal());
      }
    }
  }
  const auto report = ward_cluster(x, 8);
  for (const auto& row : cluster_composition(report, y, 1)) EXPECT_GE(row.percent, 99.0);
}

TEST(Embed2d, ExactPlaneRecovered) {
  Rng rng(26);
  const std::size_t n = 30, d = 128;
  std::vector<double> u(d), v(d), offset(d);
  for (auto& e : u) e = rng.normal();
  for (auto& e : v) e = rng.normal();
  for (auto& e : offset) e = rng.normal();
  Tensor x({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.normal(), b = 0.3 * rng.normal();
    for (std::size_t k = 0; k < d; ++k) x.at(i, k) = static_cast<float>(offset[k] + a * u[k] + b * v[k]);
  }
  const auto y = embed_2d(x, 1);
  ASSERT_EQ(y.shape(), (Shape{n, 2}));
  // A rank-2 projection preserves all pairwise distances.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dx = 0.0;
      for (std::size_t k = 0; k < d; ++k) dx += std::pow(double(x.at(i, k)) - x.at(j, k), 2);
      const double dy = std::pow(double(y.at(i, 0)) - y.at(j, 0), 2) +
                        std::pow(double(y.at(i, 1)) - y.at(j, 1), 2);
      EXPECT_NEAR(std::sqrt(dy), std::sqrt(dx), 1e-5 * (1.0 + std::sqrt(dx)));
    }
  }
}

TEST(Embed2d, OrderingDuplicatesAndDegenerate) {
  Rng rng(27);
  auto x = random_features(20, 6, rng);
  auto doubled = Tensor({40, 6});
  std::copy(x.storage().begin(), x.storage().end(), doubled.storage().begin());
  std::copy(x.storage().begin(), x.storage().end(), doubled.storage().begin() + 120);
  const auto y = embed_2d(doubled, 3);
  double v0 = 0.0, v1 = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(y.at(i, 0), y.at(i + 20, 0));
    EXPECT_EQ(y.at(i, 1), y.at(i + 20, 1));
  }
  for (std::size_t i = 0; i < 40; ++i) {
    v0 += double(y.at(i, 0)) * y.at(i, 0);
    v1 += double(y.at(i, 1)) * y.at(i, 1);
  }
  EXPECT_GE(v0, v1);
  const auto flat = embed_2d(Tensor({5, 3}, 2.0f));
  for (const float v : flat.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(embed_2d(Tensor({1, 3})), ParameterError);
}

TEST(Embed2d, RotationInvariantUpToSign) {
  Rng rng(28);
  const std::size_t n = 25, d = 5;
  Tensor x({n, d});
  const double scales[] = {3.0, 1.5, 0.5, 0.2, 0.1};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) x.at(i, k) = static_cast<float>(scales[k] * rng.normal());
  }
  // Rotation in the (0,1) and (2,3) planes.
  const double c = std::cos(0.7), s = std::sin(0.7);
  Tensor r = x;
  for (std::size_t i = 0; i < n; ++i) {
    r.at(i, 0) = static_cast<float>(c * x.at(i, 0) - s * x.at(i, 1));
    r.at(i, 1) = static_cast<float>(s * x.at(i, 0) + c * x.at(i, 1));
    r.at(i, 2) = static_cast<float>(c * x.at(i, 2) + s * x.at(i, 3));
    r.at(i, 3) = static_cast<float>(-s * x.at(i, 2) + c * x.at(i, 3));
  }
  const auto a = embed_2d(x, 5);
  const auto b = embed_2d(r, 5);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const double sign = a.at(0, axis) * b.at(0, axis) >= 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a.at(i, axis), sign * b.at(i, axis), 1e-4);
  }
}

TEST(CsvOutputs, TableLayouts) {
  const fs::path dir = fs::temp_directory_path() / "cytocon_eval_csv";
  fs::create_directories(dir);
  MetricBlock m;
  m.weighted_f1 = 0.504912;
  m.top1 = 0.5008;
  m.top3 = 0.7857;
  write_metrics_csv(dir / "m.csv", {{"contrastive", "test", m}});
  EXPECT_EQ(slurp(dir / "m.csv"), "model,dataset,f1,top1,top3\ncontrastive,test,50.49,50.08,78.57\n");

  write_cluster_csv(dir / "c.csv", {{0, 1, 3, 75.0}, {1, 0, 2, 100.0}}, {"hOc1", "hOc2"});
  EXPECT_EQ(slurp(dir / "c.csv"), "cluster,label,percent\n1,hOc2,75.0\n2,hOc1,100.0\n");

  write_embedding_csv(dir / "e.csv", Tensor({1, 2}, std::vector<float>{0.5f, -1.0f}),
                      std::vector<int>{1}, std::vector<int>{0}, std::vector<int>{2});
  const auto text = slurp(dir / "e.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "x,y,label,brain_id,cluster");
  EXPECT_NE(text.find(",1,0,3"), std::string::npos) << text;
}

TEST(CsvInputs, ReadLogitsAndLabels) {
  const fs::path dir = fs::temp_directory_path() / "cytocon_eval_in";
  fs::create_directories(dir);
  std::ofstream(dir / "l.csv") << "c0,c1\n0.1,0.9\n2,-1\n";
  std::ofstream(dir / "y.csv") << "label\n1\n0\n";
  const auto logits = read_logits_csv(dir / "l.csv");
  EXPECT_EQ(logits.shape(), (Shape{2, 2}));
  EXPECT_FLOAT_EQ(logits.at(1, 0), 2.0f);
  EXPECT_EQ(read_labels_csv(dir / "y.csv"), (std::vector<int>{1, 0}));
  std::ofstream(dir / "bad.csv") << "0.1,0.9\n0.5\n";
  EXPECT_THROW(read_logits_csv(dir / "bad.csv"), FormatError);
}

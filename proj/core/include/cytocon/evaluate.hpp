#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cytocon/tensor.hpp"

namespace cytocon {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct F1Result {
  double weighted_f1 = 0.0;
  std::vector<ClassScores> per_class;
};

// Per-class F1 (0 when precision + recall = 0) averaged with true-label
// frequency weights.
F1Result weighted_f1(std::span<const int> y_true, std::span<const int> y_pred, int classes);

// Fraction of rows whose label is among the k largest logits; equal logits
// rank the lower class index first.
double topk_accuracy(const Tensor& logits, std::span<const int> y_true, int k);

std::vector<int> argmax_rows(const Tensor& logits);

struct MetricBlock {
  double weighted_f1 = 0.0;
  double top1 = 0.0;
  double top3 = 0.0;
  std::vector<ClassScores> per_class;
  std::size_t total = 0;
};

// top3 uses k = min(3, C).
MetricBlock evaluate_logits(const Tensor& logits, std::span<const int> y_true);

struct Merge {
  int first = 0;   // surviving cluster slot (lower index)
  int second = 0;  // absorbed cluster slot
  double cost = 0.0;  // within-cluster sum-of-squares increase
  std::size_t size = 0;
};

struct ClusterReport {
  int k = 0;
  // Cluster id per item; ids ordered by the smallest member index.
  std::vector<int> assignments;
  std::vector<Merge> dendrogram;
};

// Agglomerative Ward clustering (Lance-Williams update on squared Euclidean
// distances) down to k clusters. Ties go to the smallest (i, j) slot pair.
ClusterReport ward_cluster(const Tensor& features, int k);

struct CompositionRow {
  int cluster = 0;
  int label = 0;
  std::size_t count = 0;
  double percent = 0.0;
};

// Per cluster, the top_m most frequent labels (all when top_m <= 0) as a
// percentage of the cluster size, descending; ties favour the lower label.
std::vector<CompositionRow> cluster_composition(const ClusterReport& report,
                                                std::span<const int> labels, int top_m);

// Centered projection onto the top two principal directions found by power
// iteration with deflation (100 iterations, seeded start). Each direction's
// first non-negligible loading is positive.
Tensor embed_2d(const Tensor& features, std::uint64_t seed = 0);

struct MetricsRow {
  std::string model;
  std::string dataset;
  MetricBlock metrics;
};

// `model,dataset,f1,top1,top3` with percentages to two decimals.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::string metrics_csv_row(const MetricsRow& row);

// `cluster,label,percent`; clusters numbered from 1, labels by name.
void write_cluster_csv(const std::filesystem::path& path, const std::vector<CompositionRow>& rows,
                       const std::vector<std::string>& label_names);

// `x,y,label,brain_id,cluster`.
void write_embedding_csv(const std::filesystem::path& path, const Tensor& coords,
                         std::span<const int> labels, std::span<const int> brains,
                         std::span<const int> clusters);

// Logits: one row of comma-separated numbers per item. Labels: one integer
// per line. A leading non-numeric header line is skipped in both.
Tensor read_logits_csv(const std::filesystem::path& path);
std::vector<int> read_labels_csv(const std::filesystem::path& path);

}  // namespace cytocon

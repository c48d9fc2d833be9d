#include "cytocon/evaluate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "cytocon/error.hpp"
#include "cytocon/rng.hpp"

namespace cytocon {

namespace fs = std::filesystem;

F1Result weighted_f1(std::span<const int> y_true, std::span<const int> y_pred, int classes) {
  if (y_true.empty()) throw ParameterError("weighted_f1: empty input");
  if (y_true.size() != y_pred.size()) throw ShapeError("weighted_f1: length mismatch");
  if (classes < 1) throw ParameterError("weighted_f1: class count must be positive");
  std::vector<std::size_t> tp(classes, 0), predicted(classes, 0), actual(classes, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    for (const int v : {y_true[i], y_pred[i]}) {
      if (v < 0 || v >= classes) {
        throw ParameterError("weighted_f1: label " + std::to_string(v) + " outside [0, " +
                             std::to_string(classes) + ")");
      }
    }
    ++actual[y_true[i]];
    ++predicted[y_pred[i]];
    if (y_true[i] == y_pred[i]) ++tp[y_true[i]];
  }
  F1Result out;
  out.per_class.resize(classes);
  const double n = static_cast<double>(y_true.size());
  for (int c = 0; c < classes; ++c) {
    auto& s = out.per_class[c];
    s.support = actual[c];
    s.precision = predicted[c] ? static_cast<double>(tp[c]) / predicted[c] : 0.0;
    s.recall = actual[c] ? static_cast<double>(tp[c]) / actual[c] : 0.0;
    const double denom = s.precision + s.recall;
    s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
    out.weighted_f1 += s.f1 * static_cast<double>(actual[c]) / n;
  }
  return out;
}

double topk_accuracy(const Tensor& logits, std::span<const int> y_true, int k) {
  if (logits.rank() != 2) throw ShapeError("topk: logits must be N x C");
  const std::size_t n = logits.dim(0);
  const int c = static_cast<int>(logits.dim(1));
  if (k < 1 || k > c) {
    throw ParameterError("topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(c) + "]");
  }
  if (y_true.size() != n) throw ShapeError("topk: label count does not match rows");
  if (n == 0) throw ParameterError("topk: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = y_true[i];
    if (label < 0 || label >= c) throw ParameterError("topk: label out of range");
    const float* row = logits.data() + i * c;
    // Rank of the true label = classes strictly ahead of it.
    int ahead = 0;
    for (int j = 0; j < c; ++j) {
      if (row[j] > row[label] || (row[j] == row[label] && j < label)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

MetricBlock evaluate_logits(const Tensor& logits, std::span<const int> y_true) {
  const int c = static_cast<int>(logits.dim(1));
  const auto preds = argmax_rows(logits);
  auto f1 = weighted_f1(y_true, preds, c);
  MetricBlock m;
  m.weighted_f1 = f1.weighted_f1;
  m.per_class = std::move(f1.per_class);
  m.top1 = topk_accuracy(logits, y_true, 1);
  m.top3 = topk_accuracy(logits, y_true, std::min(3, c));
  m.total = y_true.size();
  return m;
}

ClusterReport ward_cluster(const Tensor& features, int k) {
  if (features.rank() != 2) throw ShapeError("ward_cluster: features must be N x D");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ParameterError("ward_cluster: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(n) + "]");
  }
  // dist[i][j] holds the merge cost of slots i and j; singletons start at
  // half the squared distance.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(features[i * d + c]) - features[j * d + c];
        sq += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = 0.5 * sq;
    }
  }
  std::vector<std::size_t> size(n, 1);
  std::vector<bool> active(n, true);
  std::vector<int> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[i] = static_cast<int>(i);

  ClusterReport report;
  report.k = k;
  for (std::size_t step = 0; step + k < n; ++step) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (active[j] && dist[i * n + j] < best) {
          best = dist[i * n + j];
          bi = i;
          bj = j;
        }
      }
    }
    const double ni = static_cast<double>(size[bi]);
    const double nj = static_cast<double>(size[bj]);
    for (std::size_t m = 0; m < n; ++m) {
      if (!active[m] || m == bi || m == bj) continue;
      const double nm = static_cast<double>(size[m]);
      const double updated =
          ((ni + nm) * dist[bi * n + m] + (nj + nm) * dist[bj * n + m] - nm * best) / (ni + nj + nm);
      dist[bi * n + m] = dist[m * n + bi] = updated;
    }
    size[bi] += size[bj];
    active[bj] = false;
    for (auto& o : owner) {
      if (o == static_cast<int>(bj)) o = static_cast<int>(bi);
    }
    report.dendrogram.push_back(Merge{static_cast<int>(bi), static_cast<int>(bj), best, size[bi]});
  }
  std::vector<int> cluster_of_slot(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (active[i]) cluster_of_slot[i] = next++;
  }
  report.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) report.assignments[i] = cluster_of_slot[owner[i]];
  return report;
}

std::vector<CompositionRow> cluster_composition(const ClusterReport& report,
                                                std::span<const int> labels, int top_m) {
  if (labels.size() != report.assignments.size()) {
    throw ShapeError("cluster_composition: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(report.assignments.size()) + " items");
  }
  int max_label = 0;
  for (const int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> counts(report.k, std::vector<std::size_t>(max_label + 1, 0));
  std::vector<std::size_t> sizes(report.k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++counts[report.assignments[i]][labels[i]];
    ++sizes[report.assignments[i]];
  }
  std::vector<CompositionRow> rows;
  for (int c = 0; c < report.k; ++c) {
    std::vector<int> order;
    for (int l = 0; l <= max_label; ++l) {
      if (counts[c][l] > 0) order.push_back(l);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return counts[c][a] > counts[c][b]; });
    const std::size_t keep = top_m > 0 ? std::min(order.size(), static_cast<std::size_t>(top_m)) : order.size();
    for (std::size_t r = 0; r < keep; ++r) {
      const int l = order[r];
      rows.push_back(CompositionRow{c, l, counts[c][l],
                                    100.0 * static_cast<double>(counts[c][l]) / static_cast<double>(sizes[c])});
    }
  }
  return rows;
}

Tensor embed_2d(const Tensor& features, std::uint64_t seed) {
  if (features.rank() != 2) throw ShapeError("embed_2d: features must be N x D");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw ParameterError("embed_2d: needs at least 2 points");
  std::vector<double> centered(n * d);
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += features[i * d + c];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centered[i * d + c] = features[i * d + c] - mean;
  }
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = centered.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      if (row[a] == 0.0) continue;
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += row[a] * row[b];
    }
  }
  for (double& v : cov) v /= static_cast<double>(n);

  constexpr int kIterations = 100;
  Rng rng(derive_seed(seed, {0xe3b}));
  Tensor coords({n, 2});
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    std::vector<double> next(d);
    bool degenerate = false;
    for (int it = 0; it < kIterations; ++it) {
      for (std::size_t a = 0; a < d; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < d; ++b) acc += cov[a * d + b] * v[b];
        next[a] = acc;
      }
      double norm = 0.0;
      for (const double x : next) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-300) {
        degenerate = true;
        break;
      }
      for (std::size_t a = 0; a < d; ++a) v[a] = next[a] / norm;
    }
    if (degenerate) continue;  // zero variance left: this axis stays 0
    double largest = 0.0;
    for (const double x : v) largest = std::max(largest, std::abs(x));
    for (const double x : v) {
      if (std::abs(x) > 1e-9 * largest) {
        if (x < 0.0) {
          for (double& y : v) y = -y;
        }
        break;
      }
    }
    double eigen = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d; ++b) acc += cov[a * d + b] * v[b];
      eigen += v[a] * acc;
    }
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= eigen * v[a] * v[b];
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t a = 0; a < d; ++a) acc += centered[i * d + a] * v[a];
      coords[i * 2 + axis] = static_cast<float>(acc);
    }
  }
  return coords;
}

namespace {

std::ofstream open_csv(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

}  // namespace

std::string metrics_csv_row(const MetricsRow& row) {
  return row.model + "," + row.dataset + "," + fixed(100.0 * row.metrics.weighted_f1, 2) + "," +
         fixed(100.0 * row.metrics.top1, 2) + "," + fixed(100.0 * row.metrics.top3, 2);
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_csv(path);
  out << "model,dataset,f1,top1,top3\n";
  for (const auto& r : rows) out << metrics_csv_row(r) << '\n';
}

void write_cluster_csv(const fs::path& path, const std::vector<CompositionRow>& rows,
                       const std::vector<std::string>& label_names) {
  auto out = open_csv(path);
  out << "cluster,label,percent\n";
  for (const auto& r : rows) {
    const std::string name = static_cast<std::size_t>(r.label) < label_names.size()
                                 ? label_names[r.label]
                                 : std::to_string(r.label);
    out << (r.cluster + 1) << ',' << name << ',' << fixed(r.percent, 1) << '\n';
  }
}

void write_embedding_csv(const fs::path& path, const Tensor& coords, std::span<const int> labels,
                         std::span<const int> brains, std::span<const int> clusters) {
  const std::size_t n = coords.dim(0);
  if (labels.size() != n || brains.size() != n || clusters.size() != n) {
    throw ShapeError("write_embedding_csv: column lengths differ");
  }
  auto out = open_csv(path);
  out << "x,y,label,brain_id,cluster\n";
  for (std::size_t i = 0; i < n; ++i) {
    out << fixed(coords[i * 2], 6) << ',' << fixed(coords[i * 2 + 1], 6) << ',' << labels[i] << ','
        << brains[i] << ',' << (clusters[i] + 1) << '\n';
  }
}

namespace {

std::vector<std::string> csv_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (!lines.empty()) {
    const char c = lines.front().front();
    const bool numeric = std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.';
    if (!numeric) lines.erase(lines.begin());
  }
  if (lines.empty()) throw FormatError(path.string() + " holds no rows");
  return lines;
}

double parse_number(const std::string& text, const fs::path& path, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError(path.string() + " row " + std::to_string(row + 1) + ": bad number '" + text + "'");
}

}  // namespace

Tensor read_logits_csv(const fs::path& path) {
  const auto lines = csv_lines(path);
  std::vector<float> values;
  std::size_t width = 0;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    std::size_t count = 0, start = 0;
    while (true) {
      const auto comma = lines[r].find(',', start);
      values.push_back(static_cast<float>(
          parse_number(lines[r].substr(start, comma == std::string::npos ? comma : comma - start), path, r)));
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (r == 0) width = count;
    if (count != width) {
      throw FormatError(path.string() + " row " + std::to_string(r + 1) + " has " +
                        std::to_string(count) + " columns, expected " + std::to_string(width));
    }
  }
  Tensor out({lines.size(), width});
  std::copy(values.begin(), values.end(), out.data());
  return out;
}

std::vector<int> read_labels_csv(const fs::path& path) {
  const auto lines = csv_lines(path);
  std::vector<int> out;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const double v = parse_number(lines[r], path, r);
    if (v != std::floor(v)) throw FormatError(path.string() + " row " + std::to_string(r + 1) + ": not an integer label");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace cytocon

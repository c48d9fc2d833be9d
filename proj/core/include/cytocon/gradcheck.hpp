#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cytocon {

struct GradcheckOptions {
  int trials = 20;
  double step = 1e-5;
  std::uint64_t seed = 1;
  // Coordinates probed per tensor per trial (all when the tensor is smaller).
  std::size_t max_coordinates = 24;
};

struct GradcheckResult {
  std::string op;
  int trials = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_relative_error < tolerance; }
};

// ||a - n|| / max(||a||, ||n||, floor) over the probed coordinates; the plain
// difference norm when that denominator is below 1e-10.
double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                               double floor = 0.0);

// Central finite differences against every backward pass: substrate ops,
// projection head, contrastive and cross-entropy losses (64-bit, tolerance
// 1e-4), plus a two-block encoder -> projection -> contrastive loss chain in
// 64-bit (1e-4) and 32-bit analytic gradients (1e-3).
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace cytocon

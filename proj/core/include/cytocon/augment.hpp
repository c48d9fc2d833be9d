#pragma once

#include <cstdint>
#include <vector>

#include "cytocon/corpus.hpp"

namespace cytocon {

enum class FilterKind { kNone, kBlur, kSharpen };

// One draw of every stochastic augmentation parameter. Distances in mm,
// angles in radians, filter widths in pixels.
struct AugmentParams {
  double rotation = 0.0;            // U[-pi, pi]
  double translation_mm = 0.0;      // U[0, 0.2]
  double translation_dir = 0.0;     // U[0, 2 pi)
  bool mirror = false;              // p = 0.5
  double gamma_alpha = 1.0;         // U[0.9, 1.0]
  double gamma_beta = 0.0;          // U[-0.1, 0.1]
  double gamma_z = 0.0;             // U[-0.05, 0.05]
  FilterKind filter = FilterKind::kNone;
  double blur_sigma = 0.5;          // U[0.125, 1.0]
  double sharpen_sigma = 0.5;       // U[0.125, 1.0]
  double sharpen_delta = 1.0;       // U[0.5, 1.5]

  static AugmentParams identity() { return {}; }
  friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

struct AugmentLimits {
  static constexpr double kMaxTranslationMm = 0.2;
  static constexpr double kAlphaMin = 0.9, kAlphaMax = 1.0;
  static constexpr double kBetaMax = 0.1;
  static constexpr double kZMax = 0.05;
  static constexpr double kSigmaMin = 0.125, kSigmaMax = 1.0;
  static constexpr double kDeltaMin = 0.5, kDeltaMax = 1.5;
  static constexpr double kMirrorProbability = 0.5;
  static constexpr double kFilterProbability = 0.25;
};

AugmentParams draw_params(std::uint64_t seed);

// gamma = log(0.5 + Z / sqrt 2) / log(0.5 - Z / sqrt 2). Throws ParameterError
// for |Z| > 0.05.
double unbiased_gamma(double z);

Patch gamma_augment(const Patch& patch, double alpha, double beta, double z);

// Smallest source side that fits a rotated target of `target_side` shifted by
// `translation_mm` without padding.
int required_source_side(int target_side, double translation_mm, double resolution_um);

// Bilinear resample of `source` around its center shifted by (d, phi), rotated
// by theta, then mirrored top-to-bottom when `mirror` is set.
Patch rotate_mirror_translate(const Patch& source, int target_side, double theta, bool mirror,
                              double translation_mm, double translation_dir);

// Normalized discrete Gaussian of radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

Patch gaussian_blur(const Patch& patch, double sigma);

// x + delta * (G(x) - x), clamped. With `flip_sign` the correction is
// subtracted instead (classic unsharp masking).
Patch sharpen(const Patch& patch, double sigma, double delta, bool flip_sign = false);

struct PipelineOptions {
  int target_side = 64;
  bool flip_sharpen_sign = false;
};

// Geometric -> gamma -> blur/sharpen/none.
Patch apply_pipeline(const Patch& source, const AugmentParams& params,
                     const PipelineOptions& options);

// Center crop (no interpolation when the side difference is even).
Patch center_crop(const Patch& source, int target_side);

}  // namespace cytocon

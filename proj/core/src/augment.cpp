#include "cytocon/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cytocon/error.hpp"
#include "cytocon/rng.hpp"

namespace cytocon {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Half-sample symmetric reflection: -1 -> 0, n -> n-1.
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

}  // namespace

AugmentParams draw_params(std::uint64_t seed) {
  using L = AugmentLimits;
  Rng rng(seed);
  AugmentParams p;
  p.rotation = rng.uniform(-std::numbers::pi, std::numbers::pi);
  p.translation_mm = rng.uniform(0.0, L::kMaxTranslationMm);
  p.translation_dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.mirror = rng.bernoulli(L::kMirrorProbability);
  p.gamma_alpha = rng.uniform(L::kAlphaMin, L::kAlphaMax);
  p.gamma_beta = rng.uniform(-L::kBetaMax, L::kBetaMax);
  p.gamma_z = rng.uniform(-L::kZMax, L::kZMax);
  // One uniform decides the filter: blur first, then sharpen, else none.
  const double u = rng.uniform();
  if (u < L::kFilterProbability) {
    p.filter = FilterKind::kBlur;
  } else if (u < 2.0 * L::kFilterProbability) {
    p.filter = FilterKind::kSharpen;
  }
  p.blur_sigma = rng.uniform(L::kSigmaMin, L::kSigmaMax);
  p.sharpen_sigma = rng.uniform(L::kSigmaMin, L::kSigmaMax);
  p.sharpen_delta = rng.uniform(L::kDeltaMin, L::kDeltaMax);
  return p;
}

double unbiased_gamma(double z) {
  if (!(std::abs(z) <= AugmentLimits::kZMax)) {
    throw ParameterError("gamma Z=" + std::to_string(z) + " outside [-0.05, 0.05]");
  }
  const double shift = kInvSqrt2 * z;
  return std::log(0.5 + shift) / std::log(0.5 - shift);
}

Patch gamma_augment(const Patch& patch, double alpha, double beta, double z) {
  const double gamma = unbiased_gamma(z);
  Patch out = patch;
  if (gamma == 1.0 && alpha == 1.0 && beta == 0.0) return out;
  for (float& v : out.pixels) v = clamp01(alpha * std::pow(static_cast<double>(v), gamma) + beta);
  return out;
}

int required_source_side(int target_side, double translation_mm, double resolution_um) {
  const double shift_px = translation_mm * 1000.0 / resolution_um;
  return static_cast<int>(std::ceil(target_side * std::numbers::sqrt2 + 2.0 * shift_px - 1e-9));
}

Patch rotate_mirror_translate(const Patch& source, int target_side, double theta, bool mirror,
                              double translation_mm, double translation_dir) {
  if (target_side < 1) throw GeometryError("target side must be positive");
  const int needed = required_source_side(target_side, translation_mm, source.resolution_um);
  if (source.side < needed) {
    throw GeometryError("source side " + std::to_string(source.side) + " too small: need " +
                        std::to_string(needed) + " px for target " + std::to_string(target_side) +
                        " with translation " + std::to_string(translation_mm) + " mm");
  }
  const double shift_px = translation_mm * 1000.0 / source.resolution_um;
  const double src_center = (source.side - 1) / 2.0;
  const double cx = src_center + shift_px * std::cos(translation_dir);
  const double cy = src_center + shift_px * std::sin(translation_dir);
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double dst_center = (target_side - 1) / 2.0;

  Patch out(target_side, source.resolution_um);
  const int n = source.side;
  for (int r = 0; r < target_side; ++r) {
    // Vertical mirror in output space, applied after rotation.
    const double v = mirror ? dst_center - r : r - dst_center;
    for (int c = 0; c < target_side; ++c) {
      const double u = c - dst_center;
      const double sx = cx + cos_t * u - sin_t * v;
      const double sy = cy + sin_t * u + cos_t * v;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, n - 2);
      const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, n - 2);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      const double fy = std::clamp(sy - y0, 0.0, 1.0);
      const double top = (1.0 - fx) * source.at(y0, x0) + fx * source.at(y0, x0 + 1);
      const double bottom = (1.0 - fx) * source.at(y0 + 1, x0) + fx * source.at(y0 + 1, x0 + 1);
      out.at(r, c) = clamp01((1.0 - fy) * top + fy * bottom);
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian sigma must be > 0, got " + std::to_string(sigma));
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& w : kernel) w /= sum;
  return kernel;
}

namespace {

std::vector<double> blur_values(const Patch& patch, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int n = patch.side;
  std::vector<double> rows(patch.pixels.size());
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * patch.at(r, reflect(c + k, n));
      rows[static_cast<std::size_t>(r) * n + c] = acc;
    }
  }
  std::vector<double> out(rows.size());
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * rows[static_cast<std::size_t>(reflect(r + k, n)) * n + c];
      }
      out[static_cast<std::size_t>(r) * n + c] = acc;
    }
  }
  return out;
}

}  // namespace

Patch gaussian_blur(const Patch& patch, double sigma) {
  const auto values = blur_values(patch, sigma);
  Patch out(patch.side, patch.resolution_um);
  for (std::size_t i = 0; i < values.size(); ++i) out.pixels[i] = clamp01(values[i]);
  return out;
}

Patch sharpen(const Patch& patch, double sigma, double delta, bool flip_sign) {
  if (!(delta >= AugmentLimits::kDeltaMin && delta <= AugmentLimits::kDeltaMax)) {
    throw ParameterError("sharpen delta " + std::to_string(delta) + " outside [0.5, 1.5]");
  }
  const Patch blurred = gaussian_blur(patch, sigma);
  const double sign = flip_sign ? -1.0 : 1.0;
  Patch out(patch.side, patch.resolution_um);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double x = patch.pixels[i];
    const double g = blurred.pixels[i];
    out.pixels[i] = clamp01(x + sign * delta * (g - x));
  }
  return out;
}

Patch center_crop(const Patch& source, int target_side) {
  if (target_side > source.side) {
    throw GeometryError("cannot crop " + std::to_string(target_side) + " px from a " +
                        std::to_string(source.side) + " px source");
  }
  const int offset = (source.side - target_side) / 2;
  Patch out(target_side, source.resolution_um);
  for (int r = 0; r < target_side; ++r) {
    for (int c = 0; c < target_side; ++c) out.at(r, c) = source.at(r + offset, c + offset);
  }
  return out;
}

Patch apply_pipeline(const Patch& source, const AugmentParams& params,
                     const PipelineOptions& options) {
  Patch out = rotate_mirror_translate(source, options.target_side, params.rotation, params.mirror,
                                      params.translation_mm, params.translation_dir);
  out = gamma_augment(out, params.gamma_alpha, params.gamma_beta, params.gamma_z);
  switch (params.filter) {
    case FilterKind::kBlur:
      out = gaussian_blur(out, params.blur_sigma);
      break;
    case FilterKind::kSharpen:
      out = sharpen(out, params.sharpen_sigma, params.sharpen_delta, options.flip_sharpen_sign);
      break;
    case FilterKind::kNone:
      break;
  }
  return out;
}

}  // namespace cytocon

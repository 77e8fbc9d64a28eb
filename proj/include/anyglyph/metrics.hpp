#pragma once

#include <filesystem>
#include <string>

#include "anyglyph/glyph_synth.hpp"
#include "anyglyph/losses.hpp"

namespace anyglyph {

/// Mean absolute difference over all elements.
double l1(const Image& a, const Image& b);

/// 10 log10(peak^2 / MSE), capped at 100 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b, double peak = 1.0);

/// Mean SSIM over all fully covered window positions of a Gaussian window
/// (sigma 1.5), computed per channel and averaged. Throws ImageTooSmall if
/// H or W is below `window`.
double ssim(const Image& a, const Image& b, int window = 11, double k1 = 0.01, double k2 = 0.03, double peak = 1.0);

/// Normalised 1-D Gaussian taps used by ssim().
Eigen::VectorXd gaussian_window(int size, double sigma = 1.5);

/// Frechet distance between Gaussian fits of two feature sets (one sample per
/// row). Needs at least D + 1 rows in each set.
double fid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b);

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues are clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

struct EvalConfig {
  int ssim_window = 11;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
  /// Images are compared at this size (0 keeps the generated size).
  int image_size = 0;
};

struct EvalReport {
  double l1 = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  /// NaN when there are too few samples for a covariance estimate.
  double fid = 0.0;
  std::size_t samples = 0;
  EvalConfig config;
  std::string extractor_id;
  std::string gen_manifest;
  std::string gt_manifest;

  /// "key: value" lines followed by a metric table.
  std::string to_text() const;
  /// Inverse of to_text(); lines it does not recognise are ignored.
  static EvalReport parse(const std::string& text);
};

/// Pairs generated and ground-truth samples by id and averages the per-pair
/// metrics; FID is computed over the two sets. Throws ManifestMismatch unless
/// both manifests hold the same ids.
EvalReport evaluate_pairs(const synth::Manifest& gen, const synth::Manifest& gt, const EvalConfig& config,
                          const FeatureExtractor& extractor);

}  // namespace anyglyph

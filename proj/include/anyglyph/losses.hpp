#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyglyph/image.hpp"
#include "anyglyph/nn.hpp"

namespace anyglyph {

/// Frozen, seeded convolutional pyramid used by the perceptual losses and as
/// the default FID feature extractor. Level 1 runs at full resolution; each
/// later level average-pools by 2 first.
class FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5EED0F1E1DULL;
  static constexpr int kContentLevel = 3;

  explicit FeatureExtractor(std::vector<int> channels = {8, 16, 24, 32}, std::uint64_t seed = kDefaultSeed);
  FeatureExtractor(const FeatureExtractor&) = delete;
  FeatureExtractor& operator=(const FeatureExtractor&) = delete;

  int levels() const { return static_cast<int>(convs_.size()); }
  const std::vector<int>& channels() const { return channels_; }
  /// Identifies the architecture and seed; recorded in evaluation reports.
  std::string id() const;

  /// One {C_l, H_l, W_l} map per level.
  std::vector<Var> features(Tape& tape, const Var& x) const;
  /// Global average of the last level, the FID embedding.
  Eigen::VectorXd embed(const Image& x) const;

  const ParamStore& params() const { return store_; }

 private:
  std::vector<int> channels_;
  std::uint64_t seed_;
  ParamStore store_;
  std::vector<nn::Conv2d> convs_;
};

/// Mean squared error between the true and predicted noise.
Var diffusion_loss(const Var& eps, const Var& eps_hat);
double diffusion_loss(const Tensor& eps, const Tensor& eps_hat);

/// {C, H, W} -> F F^T with F = {C, H*W}.
Var gram_matrix(const Var& features);

/// MSE between content-level features.
Var content_loss(Tape& tape, const FeatureExtractor& phi, const Var& x_hat, const Var& lg);
/// Sum over levels of ||G(x_hat) - G(lr)||_F^2 / (C_l * N_l)^2.
Var style_loss(Tape& tape, const FeatureExtractor& phi, const Var& x_hat, const Var& lr);
/// alpha_bar_t * (content(x_hat, lg) + style(x_hat, lr)); throws InvalidCoefficient unless 0 < alpha_bar_t <= 1.
Var feature_level_loss(Tape& tape, const FeatureExtractor& phi, const Var& x_hat, const Var& lg, const Var& lr,
                       double alpha_bar_t);

double content_loss(const FeatureExtractor& phi, const Image& x_hat, const Image& lg);
double style_loss(const FeatureExtractor& phi, const Image& x_hat, const Image& lr);
double feature_level_loss(const FeatureExtractor& phi, const Image& x_hat, const Image& lg, const Image& lr,
                          double alpha_bar_t);

/// l_df + lambda * l_fl.
Var total_loss(const Var& l_df, const Var& l_fl, double lambda);
double total_loss(double l_df, double l_fl, double lambda);

}  // namespace anyglyph

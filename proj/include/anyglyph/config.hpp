#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anyglyph/diffusion.hpp"
#include "anyglyph/latent_codec.hpp"

namespace anyglyph {

/// Every knob of a training run. The text form is one `key = value` per line
/// using exactly these field names; `#` starts a comment.
struct TrainConfig {
  double lr = 1e-5;
  int batch = 16;
  int epochs = 30;
  /// Weight of the feature-level loss.
  double lambda = 1.0;
  int T = 1000;
  int image_size = 128;
  std::uint64_t seed = 0;
  bool use_ci = true;
  bool use_ct = true;
  bool use_lfl = true;
  InjectionMode injection_mode = InjectionMode::input_add;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Optimizer steps; 0 derives the count from `epochs`.
  long steps = 0;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  /// Divide by alpha_bar instead of sqrt(alpha_bar) in the one-step estimate.
  bool eq6_literal = false;
  /// Evaluate the feature-level loss every `lfl_stride` steps.
  int lfl_stride = 1;
  double grad_clip = 1.0;
  /// Anneal the learning rate from `lr` to 0 along a half cosine over the run.
  bool cosine_lr = false;
  int checkpoint_every = 0;

  CodecMode codec_mode = CodecMode::learned;
  int codec_factor = 4;
  int latent_channels = 4;
  int codec_hidden = 32;
  int codec_steps = 1000;
  double codec_lr = 2e-3;

  int base_channels = 32;
  int ffem_channels = 64;
  int cond_dim = 64;
  int num_tokens = 16;
  bool freeze_text_encoder = false;

  static const std::vector<std::string>& keys();

  /// Throws InvalidConfig naming the valid keys for an unknown key, or for a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// `key=value`.
  void apply_override(const std::string& assignment);

  /// Throws InvalidConfig when a value is out of range.
  void validate() const;

  std::string to_text() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  NoiseSchedule schedule() const;
  CodecConfig codec() const;
};

}  // namespace anyglyph

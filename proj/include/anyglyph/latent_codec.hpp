#pragma once

#include <cstdint>
#include <vector>

#include "anyglyph/glyph_synth.hpp"
#include "anyglyph/nn.hpp"

namespace anyglyph {

enum class CodecMode { learned, fixed };

const char* to_string(CodecMode m);
CodecMode parse_codec_mode(const std::string& s);

struct CodecConfig {
  /// Spatial downsampling factor f, a power of two.
  int factor = 4;
  /// Latent channels. Fixed mode requires 3 * factor^2.
  int latent_channels = 4;
  CodecMode mode = CodecMode::learned;
  /// Hidden width of the learned autoencoder.
  int hidden = 32;

  static CodecConfig fixed(int factor = 2) { return {factor, 3 * factor * factor, CodecMode::fixed, 0}; }
};

/// Image encoder/decoder between {3, H, W} images in [0, 1] and {c_lat, H/f, W/f} latents.
///
/// Fixed mode is an exact space-to-depth rearrangement followed by the affine
/// map v -> 2v - 1; learned mode is a small convolutional autoencoder whose
/// parameters live in the "codec." group of the store.
class LatentCodec {
 public:
  LatentCodec() = default;
  LatentCodec(ParamStore& store, const CodecConfig& config, std::uint64_t seed);

  const CodecConfig& config() const { return config_; }
  bool has_parameters() const { return config_.mode == CodecMode::learned; }

  /// {c_lat, H/f, W/f}; throws ShapeMismatch when H or W is not divisible by f.
  std::vector<int> latent_dims(int height, int width) const;

  Var encode(Tape& tape, const Var& x) const;
  /// With `clamp`, the output is clipped to [0, 1].
  Var decode(Tape& tape, const Var& z, bool clamp = true) const;

  Tensor encode(const Image& x) const;
  Image decode(const Tensor& z) const;

 private:
  void check_image(const std::vector<int>& dims) const;
  void check_latent(const std::vector<int>& dims) const;

  CodecConfig config_;
  std::vector<nn::Conv2d> enc_, dec_;
};

struct CodecTrainOptions {
  int steps = 200;
  int batch = 8;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  /// Images are resized to this size before training (0 keeps the stored size).
  int image_size = 0;
  /// Samples held out as the fixed validation batch.
  int validation = 8;
};

struct CodecTrainReport {
  /// Mean L1 on the training batch, one entry per step.
  std::vector<double> loss_trace;
  double validation_initial = 0.0;
  double validation_final = 0.0;
};

/// Mean absolute reconstruction error of decode(encode(x)) over the images.
double reconstruction_l1(const LatentCodec& codec, const std::vector<Image>& images);

/// L1 reconstruction training of a learned codec. `steps == 0` leaves the parameters untouched.
CodecTrainReport train_codec(LatentCodec& codec, ParamStore& store, const std::vector<Image>& images,
                             const CodecTrainOptions& options);

}  // namespace anyglyph

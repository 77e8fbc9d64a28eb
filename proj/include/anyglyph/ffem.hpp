#pragma once

#include <cstdint>

#include "anyglyph/image.hpp"
#include "anyglyph/nn.hpp"

namespace anyglyph {

struct FfemConfig {
  /// Feature width k at latent resolution.
  int channels = 32;
  /// Spatial reduction from image to latent (the codec factor).
  int factor = 2;
  int latent_channels = 12;
  int blocks_per_stage = 2;
  /// Zero-initialise the fusion conv (used with the control-branch injection).
  bool zero_init_fusion = false;
};

/// Glyph/reference fusion into a latent-shaped condition:
/// z_a = fuse(glyph_block(lg) concatenated with reference_block(lr)).
class Ffem {
 public:
  Ffem() = default;
  Ffem(ParamStore& store, const FfemConfig& config, std::uint64_t seed);

  const FfemConfig& config() const { return config_; }

  /// {3, H, W} -> {k, H/f, W/f}.
  Var glyph_block(Tape& tape, const Var& lg) const;
  Var reference_block(Tape& tape, const Var& lr) const;
  /// {k, h, w} x {k, h, w} -> {c_lat, h, w}.
  Var fuse(Tape& tape, const Var& glyph_features, const Var& reference_features) const;

  Var operator()(Tape& tape, const Var& lg, const Var& lr) const;
  Tensor encode(const Image& lg, const Image& lr) const;

 private:
  struct Stack {
    nn::Conv2d stem;
    std::vector<nn::Conv2d> downs;
    std::vector<nn::ResBlock> blocks;
  };
  Stack make_stack(ParamStore& store, const std::string& prefix, Rng& rng) const;
  Var run_stack(Tape& tape, const Stack& s, const Var& x) const;

  FfemConfig config_;
  Stack glyph_, reference_;
  nn::Conv2d fusion_;
};

}  // namespace anyglyph

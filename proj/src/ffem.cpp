#include "anyglyph/ffem.hpp"

namespace anyglyph {

Ffem::Stack Ffem::make_stack(ParamStore& store, const std::string& prefix, Rng& rng) const {
  const int k = config_.channels;
  Stack s;
  s.stem = nn::Conv2d::make(store, prefix + ".stem", 3, k, 3, 1, rng);
  int stage = 0;
  for (int f = config_.factor; f > 1; f /= 2, ++stage) {
    const std::string name = prefix + ".stage" + std::to_string(stage);
    s.downs.push_back(nn::Conv2d::make(store, name + ".down", k, k, 3, 2, rng));
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      s.blocks.push_back(nn::ResBlock::make(store, name + ".res" + std::to_string(b), k, k, 0, rng));
    }
  }
  return s;
}

Ffem::Ffem(ParamStore& store, const FfemConfig& config, std::uint64_t seed) : config_(config) {
  if (config.factor < 1 || (config.factor & (config.factor - 1))) {
    throw InvalidConfig("ffem factor must be a power of two");
  }
  Rng glyph_rng(mix_seed(seed, {0xFF, 1})), ref_rng(mix_seed(seed, {0xFF, 2})), fuse_rng(mix_seed(seed, {0xFF, 3}));
  glyph_ = make_stack(store, "ffem.glyph", glyph_rng);
  reference_ = make_stack(store, "ffem.reference", ref_rng);
  fusion_ = nn::Conv2d::make(store, "ffem.fusion", 2 * config.channels, config.latent_channels, 3, 1, fuse_rng,
                             config.zero_init_fusion ? 0.0 : 1.0);
}

Var Ffem::run_stack(Tape& tape, const Stack& s, const Var& x) const {
  if (x.dims().size() != 3 || x.dim(0) != 3) {
    throw ShapeMismatch("ffem expects a {3, H, W} image, got " + Tensor::shape_string(x.dims()));
  }
  if (x.dim(1) % config_.factor || x.dim(2) % config_.factor) {
    throw ShapeMismatch("image " + Tensor::shape_string(x.dims()) + " is not divisible by " +
                        std::to_string(config_.factor));
  }
  Var h = s.stem(tape, ag::add_scalar(ag::scale(x, 2.0), -1.0));
  const std::size_t per_stage = static_cast<std::size_t>(config_.blocks_per_stage);
  for (std::size_t i = 0; i < s.downs.size(); ++i) {
    h = s.downs[i](tape, ag::silu(h));
    for (std::size_t b = 0; b < per_stage; ++b) h = s.blocks[i * per_stage + b](tape, h);
  }
  return h;
}

Var Ffem::glyph_block(Tape& tape, const Var& lg) const { return run_stack(tape, glyph_, lg); }

Var Ffem::reference_block(Tape& tape, const Var& lr) const { return run_stack(tape, reference_, lr); }

Var Ffem::fuse(Tape& tape, const Var& glyph_features, const Var& reference_features) const {
  if (glyph_features.dims() != reference_features.dims()) {
    throw ShapeMismatch("fuse: glyph features " + Tensor::shape_string(glyph_features.dims()) +
                        " vs reference features " + Tensor::shape_string(reference_features.dims()));
  }
  if (glyph_features.dim(0) != config_.channels) {
    throw ShapeMismatch("fuse expects " + std::to_string(config_.channels) + " channels per input");
  }
  return fusion_(tape, ag::concat(glyph_features, reference_features));
}

Var Ffem::operator()(Tape& tape, const Var& lg, const Var& lr) const {
  return fuse(tape, glyph_block(tape, lg), reference_block(tape, lr));
}

Tensor Ffem::encode(const Image& lg, const Image& lr) const {
  Tape tape;
  return (*this)(tape, tape.constant(lg), tape.constant(lr)).value();
}

}  // namespace anyglyph

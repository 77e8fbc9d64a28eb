#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "anyglyph/autograd.hpp"

namespace anyglyph {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a list of salts.
std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts);

/// Standard-normal tensor of the given shape.
Tensor randn(std::vector<int> dims, Rng& rng);

/// Owns every parameter of a model, in creation order. Names are dotted paths
/// whose first component is the module group ("unet", "ffem", ...).
class ParamStore {
 public:
  Parameter& create(const std::string& name, std::vector<int> dims, bool trainable = true);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  /// Parameters whose name starts with `prefix`.
  std::vector<Parameter*> group(const std::string& prefix);

  void zero_grad();
  void set_trainable(const std::string& prefix, bool trainable);
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

/// Normal(0, std) fill.
void init_normal(Parameter& p, double std, Rng& rng);

namespace nn {

struct Conv2d {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  int stride = 1;
  int pad = 1;

  /// `init_scale` multiplies the default 1/sqrt(fan_in) std; 0 gives a zero-initialised layer.
  static Conv2d make(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride, Rng& rng,
                     double init_scale = 1.0);
  Var operator()(Tape& tape, const Var& x) const;
};

/// x {N, in} -> x * W + b, W {in, out}.
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear make(ParamStore& store, const std::string& name, int in, int out, Rng& rng, double init_scale = 1.0,
                     bool trainable = true);
  Var operator()(Tape& tape, const Var& x) const;
};

struct GroupNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  int groups = 1;

  static GroupNorm make(ParamStore& store, const std::string& name, int channels, int groups);
  Var operator()(Tape& tape, const Var& x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm make(ParamStore& store, const std::string& name, int dim, bool trainable = true);
  Var operator()(Tape& tape, const Var& x) const;
};

/// Pre-activation residual block: GN-SiLU-conv, optional per-channel time
/// embedding, GN-SiLU-conv, 1x1 skip when channel counts differ.
struct ResBlock {
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2;
  Linear time_proj;
  bool has_time = false;
  bool has_skip = false;
  Conv2d skip;

  static ResBlock make(ParamStore& store, const std::string& name, int cin, int cout, int time_dim, Rng& rng);
  Var operator()(Tape& tape, const Var& x, const Var& temb = Var()) const;
};

/// Single-head attention from a {C, H, W} feature map onto a {N, d} context
/// (cross-attention), with a residual connection.
struct CrossAttention {
  GroupNorm norm;
  Linear q, k, v, out;

  static CrossAttention make(ParamStore& store, const std::string& name, int channels, int context_dim, Rng& rng);
  Var operator()(Tape& tape, const Var& x, const Var& context) const;
};

/// Pre-LN transformer encoder layer over a {N, d} token sequence.
struct TransformerLayer {
  LayerNorm ln1, ln2;
  Linear q, k, v, out, fc1, fc2;

  static TransformerLayer make(ParamStore& store, const std::string& name, int dim, Rng& rng, bool trainable = true);
  Var operator()(Tape& tape, const Var& x) const;
};

/// softmax(q k^T / sqrt(d)) v for q {N, d}, k {M, d}, v {M, e}.
Var attention(const Var& q, const Var& k, const Var& v);

/// Sinusoidal embedding of a scalar position into `dim` features, {1, dim}.
Tensor sinusoidal_embedding(double position, int dim);

/// {C, H, W} -> {H*W, C} and back.
Var to_tokens(const Var& x);
Var from_tokens(const Var& tokens, int h, int w);

}  // namespace nn
}  // namespace anyglyph

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anyglyph/glyph_synth.hpp"
#include "anyglyph/nn.hpp"

namespace anyglyph {

/// Word/character tokenizer for prompts. The template words are single tokens;
/// every other word is split into one token per codepoint.
class Vocab {
 public:
  static constexpr int kVersion = 1;
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;

  /// Special tokens, template words, printable ASCII, then `charset` in order.
  static Vocab build(const std::vector<synth::Codepoint>& charset);

  std::vector<std::string> tokenize(const std::string& text) const;
  /// Token ids padded with kPad or truncated to exactly `length` entries.
  std::vector<int> encode(const std::string& text, int length) const;
  int id(const std::string& token) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line after a version header.
  std::string serialize() const;
  static Vocab deserialize(const std::string& text);

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

struct VtfemConfig {
  int num_tokens = 16;
  int cond_dim = 64;
  /// Width of the frozen image encoder's token features.
  int image_dim = 64;
  bool use_ci = true;
  bool use_ct = true;
  bool freeze_text_encoder = false;
};

/// c = c_i + c_t, with c_i = F_I(E_I(lr)) and c_t = E_T(y).
///
/// E_I pools the reference into a grid of patches and maps them with a frozen
/// random projection; F_I is a trainable linear map. E_T is an embedding,
/// positional table and one transformer layer. Disabled branches create no
/// parameters; with both disabled a learned constant stands in for c.
class Vtfem {
 public:
  Vtfem() = default;
  Vtfem(ParamStore& store, const VtfemConfig& config, Vocab vocab, std::uint64_t seed);

  const VtfemConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }

  /// Pooled patch features of the reference, {N_tok, 48}. Not learned.
  Tensor patch_features(const Image& lr) const;

  Var encode_reference(Tape& tape, const Image& lr) const;
  /// Throws EmptyPrompt for an empty or blank prompt.
  Var encode_prompt(Tape& tape, const std::string& prompt) const;
  /// Applies the toggles: c_i + c_t, the remaining branch alone, or the learned constant.
  Var condition(Tape& tape, const Image& lr, const std::string& prompt) const;

  Tensor condition(const Image& lr, const std::string& prompt) const;

 private:
  VtfemConfig config_;
  Vocab vocab_;
  Parameter* image_proj_w_ = nullptr;
  Parameter* image_proj_b_ = nullptr;
  Parameter* image_pos_ = nullptr;
  nn::Linear image_head_;
  Parameter* token_table_ = nullptr;
  Parameter* token_pos_ = nullptr;
  nn::TransformerLayer text_layer_;
  nn::LayerNorm text_norm_;
  Parameter* null_ = nullptr;
};

/// Element-wise sum of two {N_tok, d} embeddings.
Var combine(const Var& c_i, const Var& c_t);
Tensor combine(const Tensor& c_i, const Tensor& c_t);

}  // namespace anyglyph

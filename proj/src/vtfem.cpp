#include "anyglyph/vtfem.hpp"

#include <cmath>
#include <sstream>

namespace anyglyph {

namespace {

constexpr const char* kTemplateWords[] = {"render", "glyph", "in", "style"};
constexpr int kCells = 4;  // per-patch pooling grid
constexpr int kPatchFeatures = 3 * kCells * kCells;

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

}  // namespace

void Vocab::add(const std::string& token) {
  if (ids_.count(token)) return;
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build(const std::vector<synth::Codepoint>& charset) {
  Vocab v;
  v.add("<pad>");
  v.add("<unk>");
  for (const char* w : kTemplateWords) v.add(w);
  for (char c = 0x21; c < 0x7F; ++c) v.add(std::string(1, c));
  for (synth::Codepoint c : charset) v.add(synth::utf8_encode(c));
  return v;
}

std::vector<std::string> Vocab::tokenize(const std::string& text) const {
  std::vector<std::string> out;
  for (const std::string& w : split_words(text)) {
    bool literal = false;
    for (const char* t : kTemplateWords) literal = literal || w == t;
    if (literal) {
      out.push_back(w);
      continue;
    }
    for (synth::Codepoint c : synth::utf8_decode(w)) out.push_back(synth::utf8_encode(c));
  }
  return out;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnknown : it->second;
}

std::vector<int> Vocab::encode(const std::string& text, int length) const {
  std::vector<int> ids;
  for (const std::string& t : tokenize(text)) {
    if (static_cast<int>(ids.size()) == length) break;
    ids.push_back(id(t));
  }
  ids.resize(static_cast<std::size_t>(length), kPad);
  return ids;
}

std::string Vocab::serialize() const {
  std::string s = "vocab " + std::to_string(kVersion) + "\n";
  for (const std::string& t : tokens_) s += t + "\n";
  return s;
}

Vocab Vocab::deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  if (header != "vocab " + std::to_string(kVersion)) throw VersionMismatch("unsupported vocab header '" + header + "'");
  Vocab v;
  for (std::string line; std::getline(in, line);) v.add(line);
  if (v.size() < 2 || v.tokens_[kPad] != "<pad>" || v.tokens_[kUnknown] != "<unk>") {
    throw CorruptCheckpoint("vocab lacks its special tokens");
  }
  return v;
}

Vtfem::Vtfem(ParamStore& store, const VtfemConfig& config, Vocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  if (config.num_tokens < 1 || config.cond_dim < 1) throw InvalidConfig("num_tokens and cond_dim must be positive");
  const int n = config.num_tokens, d = config.cond_dim;
  if (config.use_ci) {
    Rng rng(mix_seed(seed, {0x717, 1}));
    image_proj_w_ = &store.create("vtfem.image_encoder.proj.w", {kPatchFeatures, config.image_dim}, false);
    image_proj_b_ = &store.create("vtfem.image_encoder.proj.b", {config.image_dim}, false);
    image_pos_ = &store.create("vtfem.image_encoder.pos", {n, config.image_dim}, false);
    init_normal(*image_proj_w_, 1.0 / std::sqrt(double(kPatchFeatures)), rng);
    init_normal(*image_pos_, 0.5, rng);
    Rng head_rng(mix_seed(seed, {0x717, 2}));
    image_head_ = nn::Linear::make(store, "vtfem.image_head", config.image_dim, d, head_rng);
  }
  if (config.use_ct) {
    const bool trainable = !config.freeze_text_encoder;
    Rng rng(mix_seed(seed, {0x717, 3}));
    token_table_ = &store.create("vtfem.text_encoder.tokens", {vocab_.size(), d}, trainable);
    token_pos_ = &store.create("vtfem.text_encoder.pos", {n, d}, trainable);
    init_normal(*token_table_, 1.0, rng);
    init_normal(*token_pos_, 0.5, rng);
    text_layer_ = nn::TransformerLayer::make(store, "vtfem.text_encoder.layer", d, rng, trainable);
    text_norm_ = nn::LayerNorm::make(store, "vtfem.text_encoder.norm", d, trainable);
  }
  if (!config.use_ci && !config.use_ct) {
    Rng rng(mix_seed(seed, {0x717, 4}));
    null_ = &store.create("vtfem.null", {n, d});
    init_normal(*null_, 1.0, rng);
  }
}

Tensor Vtfem::patch_features(const Image& lr) const {
  require_rgb(lr, "encode_reference");
  const int height = lr.dim(1), width = lr.dim(2);
  const int n = config_.num_tokens;
  const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  if (height < g * kCells || width < g * kCells) {
    throw ShapeMismatch("reference " + lr.shape() + " is too small for a " + std::to_string(g) + "x" +
                        std::to_string(g) + " patch grid");
  }
  const int cells = g * kCells;
  Tensor feats({n, kPatchFeatures});
  for (int p = 0; p < n; ++p) {
    const int py = p / g, px = p % g;
    for (int c = 0; c < 3; ++c)
      for (int cy = 0; cy < kCells; ++cy)
        for (int cx = 0; cx < kCells; ++cx) {
          const int gy = py * kCells + cy, gx = px * kCells + cx;
          const int y0 = gy * height / cells, y1 = (gy + 1) * height / cells;
          const int x0 = gx * width / cells, x1 = (gx + 1) * width / cells;
          double acc = 0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) acc += lr.at(c, y, x);
          feats[Eigen::Index(p) * kPatchFeatures + (c * kCells + cy) * kCells + cx] =
              2.0 * acc / ((y1 - y0) * (x1 - x0)) - 1.0;
        }
  }
  return feats;
}

Var Vtfem::encode_reference(Tape& tape, const Image& lr) const {
  if (!image_proj_w_) throw InvalidConfig("image branch is disabled (use_ci = false)");
  Var tokens = ag::matmul(tape.constant(patch_features(lr)), tape.param(*image_proj_w_));
  tokens = ag::silu(ag::add_row_bias(tokens, tape.param(*image_proj_b_)) + tape.param(*image_pos_));
  return image_head_(tape, tokens);
}

Var Vtfem::encode_prompt(Tape& tape, const std::string& prompt) const {
  if (!token_table_) throw InvalidConfig("text branch is disabled (use_ct = false)");
  if (split_words(prompt).empty()) throw EmptyPrompt("prompt is empty");
  const auto ids = vocab_.encode(prompt, config_.num_tokens);
  Var h = ag::embedding(tape.param(*token_table_), ids) + tape.param(*token_pos_);
  return text_norm_(tape, text_layer_(tape, h));
}

Var Vtfem::condition(Tape& tape, const Image& lr, const std::string& prompt) const {
  if (config_.use_ci && config_.use_ct) return combine(encode_reference(tape, lr), encode_prompt(tape, prompt));
  if (config_.use_ci) return encode_reference(tape, lr);
  if (config_.use_ct) return encode_prompt(tape, prompt);
  return tape.param(*null_);
}

Tensor Vtfem::condition(const Image& lr, const std::string& prompt) const {
  Tape tape;
  return condition(tape, lr, prompt).value();
}

Var combine(const Var& c_i, const Var& c_t) {
  if (c_i.dims() != c_t.dims()) {
    throw ShapeMismatch("combine: " + Tensor::shape_string(c_i.dims()) + " vs " + Tensor::shape_string(c_t.dims()));
  }
  return c_i + c_t;
}

Tensor combine(const Tensor& c_i, const Tensor& c_t) {
  require_same_shape(c_i, c_t, "combine");
  return Tensor(c_i.dims(), c_i.data() + c_t.data());
}

}  // namespace anyglyph

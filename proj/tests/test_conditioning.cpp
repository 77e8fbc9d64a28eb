#include "anyglyph/ffem.hpp"
#include "anyglyph/latent_codec.hpp"
#include "anyglyph/optim.hpp"
#include "anyglyph/vtfem.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace anyglyph;
using testsupport::max_abs_diff;
using testsupport::uniform;

namespace {

FfemConfig tiny_ffem(int factor, int latent_channels) {
  FfemConfig c;
  c.channels = 8;
  c.factor = factor;
  c.latent_channels = latent_channels;
  return c;
}

VtfemConfig tiny_vtfem(bool ci, bool ct) {
  VtfemConfig c;
  c.num_tokens = 9;
  c.cond_dim = 8;
  c.image_dim = 6;
  c.use_ci = ci;
  c.use_ct = ct;
  return c;
}

Vocab latin_vocab() { return Vocab::build(synth::charset_preset("latin26")); }

std::vector<std::string> names(ParamStore& s) {
  std::vector<std::string> out;
  for (auto* p : s.all()) out.push_back(p->name);
  return out;
}

}  // namespace

TEST_CASE("z_a has the latent shape at every configured resolution") {
  for (int size : {16, 32, 64}) {
    for (const CodecConfig& cc : {CodecConfig::fixed(2), CodecConfig::fixed(4), CodecConfig{}}) {
      ParamStore store;
      const LatentCodec codec(store, cc, 1);
      const Ffem ffem(store, tiny_ffem(cc.factor, cc.latent_channels), 2);
      const Image lg = uniform({3, size, size}, 3), lr = uniform({3, size, size}, 4);
      CHECK(ffem.encode(lg, lr).dims() == codec.latent_dims(size, size));
    }
  }
  ParamStore store;
  const Ffem ffem(store, tiny_ffem(4, 4), 2);
  Tape t;
  CHECK(ffem.glyph_block(t, t.constant(uniform({3, 128, 128}, 1))).dims() == std::vector<int>{8, 32, 32});
  CHECK_THROWS_AS(ffem.encode(uniform({3, 30, 32}, 1), uniform({3, 30, 32}, 1)), ShapeMismatch);
  CHECK_THROWS_AS(ffem.fuse(t, t.constant(Tensor({8, 4, 4})), t.constant(Tensor({8, 4, 2}))), ShapeMismatch);
}

TEST_CASE("ffem blocks are independent and both inputs matter") {
  ParamStore store;
  const Ffem ffem(store, tiny_ffem(2, 12), 3);
  const Image lg = uniform({3, 16, 16}, 1), lr = uniform({3, 16, 16}, 2), lg2 = uniform({3, 16, 16}, 5);
  const Tensor base = ffem.encode(lg, lr);
  CHECK(base.all_finite());
  CHECK(max_abs_diff(ffem.encode(Tensor(lg.dims()), lr), base) > 0.0);
  CHECK(max_abs_diff(ffem.encode(lg, Tensor(lr.dims())), base) > 0.0);
  Tape t1, t2;
  CHECK(max_abs_diff(ffem.glyph_block(t1, t1.constant(lg)).value(), ffem.glyph_block(t1, t1.constant(lg2)).value()) > 0);

  const Tensor ref_before = ffem.reference_block(t2, t2.constant(lr)).value();
  for (Parameter* p : store.group("ffem.glyph.")) p->value.data().array() += 0.3;
  Tape t3;
  CHECK(ffem.reference_block(t3, t3.constant(lr)).value().data() == ref_before.data());

  // Concatenation order matters.
  Tape t4;
  Var g = ffem.glyph_block(t4, t4.constant(lg)), r = ffem.reference_block(t4, t4.constant(lr));
  CHECK(max_abs_diff(ffem.fuse(t4, g, r).value(), ffem.fuse(t4, r, g).value()) > 0.0);
}

TEST_CASE("zero-initialised fusion gives z_a = 0") {
  ParamStore store;
  FfemConfig cfg = tiny_ffem(2, 12);
  cfg.zero_init_fusion = true;
  const Ffem ffem(store, cfg, 3);
  CHECK(ffem.encode(uniform({3, 16, 16}, 1), uniform({3, 16, 16}, 2)).data().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ffem gradients match finite differences") {
  ParamStore store;
  const Ffem ffem(store, tiny_ffem(2, 3), 4);
  const Image lg = uniform({3, 8, 8}, 1), lr = uniform({3, 8, 8}, 2);
  auto glyph = [&](Tape& t) { return ag::mean(ag::square(ffem.glyph_block(t, t.constant(lg)))); };
  auto reference = [&](Tape& t) { return ag::mean(ag::square(ffem.reference_block(t, t.constant(lr)))); };
  auto fused = [&](Tape& t) { return ag::mean(ag::square(ffem(t, t.constant(lg), t.constant(lr)))); };
  CHECK(testsupport::check_param_grads(glyph, store.group("ffem.glyph."), 3).rel_error < 1e-4);
  CHECK(testsupport::check_param_grads(reference, store.group("ffem.reference."), 3).rel_error < 1e-4);
  CHECK(testsupport::check_param_grads(fused, store.all(), 2).rel_error < 1e-4);
  const auto ri = testsupport::check_input_grad(
      [&](Tape& t, const Var& x) { return ag::mean(ag::square(ffem(t, x, t.constant(lr)))); }, lg);
  CHECK(ri.rel_error < 1e-4);
}

TEST_CASE("vocab tokenizes the prompt template") {
  const Vocab v = latin_vocab();
  const auto toks = v.tokenize(synth::make_prompt(U'A', "s0007"));
  CHECK(toks == std::vector<std::string>{"render", "glyph", "\"", "A", "\"", "in", "style", "s", "0", "0", "0", "7"});
  CHECK(v.encode("render glyph \"A\" in style s0007", 16) == v.encode("render glyph \"A\" in style s0007", 16));
  CHECK(v.encode("render glyph \"A\" in style s0007", 16) != v.encode("render glyph \"B\" in style s0007", 16));
  CHECK(v.encode("render glyph \"A\" in style s0007", 16) != v.encode("render glyph \"A\" in style s0008", 16));
  const auto ids = v.encode("render glyph \"A\" in style s0007", 16);
  CHECK(ids.size() == 16);
  CHECK(ids[12] == Vocab::kPad);
  CHECK(v.encode("render glyph \"A\" in style s0007", 5).size() == 5);
  CHECK(v.id("好") == Vocab::kUnknown);
  CHECK(Vocab::deserialize(v.serialize()).tokens() == v.tokens());
  CHECK_THROWS_AS(Vocab::deserialize("vocab 99\n<pad>\n"), VersionMismatch);
}

TEST_CASE("condition embeddings share the token shape and combine adds exactly") {
  ParamStore store;
  const Vtfem vt(store, tiny_vtfem(true, true), latin_vocab(), 5);
  const Image lr = uniform({3, 32, 32}, 1);
  const std::string y = synth::make_prompt(U'Q', "s0002");
  Tape t;
  const Tensor ci = vt.encode_reference(t, lr).value();
  const Tensor ct = vt.encode_prompt(t, y).value();
  const Tensor c = vt.condition(t, lr, y).value();
  CHECK(ci.dims() == std::vector<int>{9, 8});
  CHECK(ct.dims() == ci.dims());
  CHECK(c.dims() == ci.dims());
  Tensor manual(ci.dims());
  for (Eigen::Index i = 0; i < ci.size(); ++i) manual[i] = ci[i] + ct[i];
  CHECK(max_abs_diff(c, manual) == 0.0);
  CHECK(max_abs_diff(combine(Tensor(ct.dims()), ct), ct) == 0.0);
  CHECK(max_abs_diff(combine(ci, ct), combine(ct, ci)) == 0.0);
  CHECK_THROWS_AS(combine(ci, Tensor({8, 8})), ShapeMismatch);
  CHECK_THROWS_AS(vt.encode_prompt(t, "  "), EmptyPrompt);
  const std::string long_prompt(200, 'x');
  CHECK(vt.encode_prompt(t, long_prompt).dims() == std::vector<int>{9, 8});
  CHECK(vt.encode_prompt(t, y).value().data() == ct.data());
  CHECK(max_abs_diff(vt.encode_reference(t, uniform({3, 32, 32}, 2)).value(), ci) > 0.0);
}

TEST_CASE("ablation toggles leave the remaining branch alone") {
  const Image lr = uniform({3, 32, 32}, 1);
  const std::string y = synth::make_prompt(U'Q', "s0002");
  ParamStore full_store;
  const Vtfem full(full_store, tiny_vtfem(true, true), latin_vocab(), 5);
  Tape t;
  const Tensor ci = full.encode_reference(t, lr).value(), ct = full.encode_prompt(t, y).value();

  ParamStore no_ci_store, no_ct_store, none_store;
  const Vtfem no_ci(no_ci_store, tiny_vtfem(false, true), latin_vocab(), 5);
  const Vtfem no_ct(no_ct_store, tiny_vtfem(true, false), latin_vocab(), 5);
  const Vtfem none(none_store, tiny_vtfem(false, false), latin_vocab(), 5);
  CHECK(no_ci.condition(lr, y).data() == ct.data());
  CHECK(no_ct.condition(lr, y).data() == ci.data());
  CHECK(none.condition(lr, y).data() == none_store.at("vtfem.null").value.data());
  CHECK(none.condition(uniform({3, 32, 32}, 9), "other").data() == none.condition(lr, y).data());

  for (const auto& n : names(no_ci_store)) CHECK(n.find("image") == std::string::npos);
  for (const auto& n : names(no_ct_store)) CHECK(n.find("text") == std::string::npos);
  CHECK(names(none_store) == std::vector<std::string>{"vtfem.null"});
}

TEST_CASE("image encoder stays frozen while its head trains") {
  ParamStore store;
  const Vtfem vt(store, tiny_vtfem(true, true), latin_vocab(), 5);
  std::map<std::string, Tensor> before;
  for (auto* p : store.all()) before[p->name] = p->value;
  Tape t;
  const Tensor target = uniform({9, 8}, 4);
  t.backward(ag::mse(vt.condition(t, uniform({3, 32, 32}, 1), "render glyph \"A\" in style s0001"), t.constant(target)));
  Adam adam;
  adam.step(store.all());
  for (auto* p : store.group("vtfem.image_encoder.")) CHECK(p->value.data() == before[p->name].data());
  for (auto* p : store.group("vtfem.image_head.")) CHECK(p->value.data() != before[p->name].data());
  for (auto* p : store.group("vtfem.text_encoder.")) CHECK(p->value.data() != before[p->name].data());

  ParamStore frozen_store;
  VtfemConfig cfg = tiny_vtfem(false, true);
  cfg.freeze_text_encoder = true;
  const Vtfem frozen(frozen_store, cfg, latin_vocab(), 5);
  for (auto* p : frozen_store.all()) CHECK_FALSE(p->trainable);
}

TEST_CASE("vtfem gradients") {
  ParamStore store;
  const Vtfem vt(store, tiny_vtfem(true, true), latin_vocab(), 6);
  const Image lr = uniform({3, 32, 32}, 2);
  const Tensor w = uniform({9, 8}, 3, -1, 1);
  auto f = [&](Tape& t) { return ag::sum(vt.condition(t, lr, "render glyph \"Z\" in style s0004") * t.constant(w)); };
  CHECK(testsupport::check_param_grads(f, store.all(), 3).rel_error < 1e-4);
}

#include <doctest.h>

#include <fstream>

#include "anyglyph/trainer.hpp"
#include "support.hpp"

using namespace anyglyph;
using testsupport::max_abs_diff;

namespace {

std::vector<synth::GlyphSample> tiny_samples(int n = 4) {
  const std::u32string chars = U"ABCDEFGH";
  const auto style = synth::make_style("s0000", 9);
  std::vector<Image> lg, x0;
  for (int i = 0; i < n; ++i) {
    Image g = synth::render_glyph({chars[static_cast<std::size_t>(i)], synth::kDefaultFont, 32});
    lg.push_back(resize_nearest(g, 16));
    x0.push_back(resize_nearest(synth::apply_style(g, style, 9), 16));
  }
  std::vector<synth::GlyphSample> out;
  for (int i = 0; i < n; ++i) {
    synth::GlyphSample s;
    s.codepoint = chars[static_cast<std::size_t>(i)];
    s.id = "s0000_" + synth::codepoint_hex(s.codepoint);
    s.style_id = "s0000";
    s.x0 = x0[static_cast<std::size_t>(i)];
    s.lg = lg[static_cast<std::size_t>(i)];
    s.lr = x0[static_cast<std::size_t>((i + 1) % n)];
    s.prompt = synth::make_prompt(s.codepoint, "s0000");
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.batch = 2;
  c.steps = 6;
  c.T = 50;
  c.beta_start = 2e-3;
  c.beta_end = 0.3;
  c.image_size = 16;
  c.codec_mode = CodecMode::fixed;
  c.codec_factor = 2;
  c.latent_channels = 12;
  c.base_channels = 16;
  c.ffem_channels = 16;
  c.cond_dim = 32;
  c.num_tokens = 16;
  c.seed = 21;
  return c;
}

Vocab tiny_vocab() { return Vocab::build({U'A', U'B', U'C', U'D', U'E', U'F', U'G', U'H'}); }

std::vector<Tensor> values(const Model& m) {
  std::vector<Tensor> out;
  for (const Parameter* p : m.params().all()) out.push_back(p->value);
  return out;
}

double max_param_diff(const Model& a, const Model& b) {
  const auto pa = a.params().all(), pb = b.params().all();
  REQUIRE(pa.size() == pb.size());
  double d = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) d = std::max(d, max_abs_diff(pa[i]->value, pb[i]->value));
  return d;
}

std::string read_bytes(const std::filesystem::path& f) {
  std::ifstream in(f, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& f, const std::string& s) {
  std::ofstream out(f, std::ios::binary | std::ios::trunc);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

TEST_CASE("reverse timesteps are evenly spaced and end at 1") {
  CHECK(sampling_timesteps(1000, 4) == std::vector<int>{1000, 750, 500, 250});
  CHECK(sampling_timesteps(10, 10) == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1});
  CHECK(sampling_timesteps(100, 1) == std::vector<int>{100});
  const auto ts = sampling_timesteps(1000, 50);
  CHECK(ts.size() == 50);
  CHECK(ts.back() == 20);
  CHECK_THROWS_AS(sampling_timesteps(10, 0), InvalidConfig);
  CHECK_THROWS_AS(sampling_timesteps(10, 11), InvalidConfig);
}

TEST_CASE("an empty training set is rejected") {
  Model m(tiny_config(), tiny_vocab());
  CHECK_THROWS_AS(Trainer(m, {}), DatasetEmpty);
}

TEST_CASE("every sample appears once per epoch") {
  Model m(tiny_config(), tiny_vocab());
  Trainer tr(m, tiny_samples(4));
  CHECK(tr.steps_per_epoch() == 2);
  for (long epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (long s = 0; s < 2; ++s) {
      auto b = tr.batch_indices(epoch * 2 + s);
      CHECK(b.size() == 2);
      seen.insert(seen.end(), b.begin(), b.end());
    }
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3});
  }
}

TEST_CASE("a zero loss weight leaves gradients equal to the diffusion loss alone") {
  TrainConfig with = tiny_config();
  with.lambda = 0.0;
  TrainConfig without = with;
  without.use_lfl = false;
  Model ma(with, tiny_vocab()), mb(without, tiny_vocab());
  Trainer ta(ma, tiny_samples()), tb(mb, tiny_samples());
  const auto ra = ta.compute_gradients(0);
  const auto rb = tb.compute_gradients(0);
  CHECK(std::isfinite(ra.l_fl));
  CHECK(std::isnan(rb.l_fl));
  CHECK(ra.l_df == doctest::Approx(rb.l_df).epsilon(1e-12));
  const auto pa = ma.params().all(), pb = mb.params().all();
  REQUIRE(pa.size() == pb.size());
  double worst = 0;
  int compared = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->grad.size() == 0 && pb[i]->grad.size() == 0) continue;
    REQUIRE(pa[i]->grad.size() == pb[i]->grad.size());
    worst = std::max(worst, max_abs_diff(pa[i]->grad, pb[i]->grad));
    ++compared;
  }
  CHECK(compared > 10);
  CHECK(worst < 1e-9);
}

TEST_CASE("the feature-level loss changes gradients when weighted") {
  TrainConfig with = tiny_config();
  TrainConfig without = with;
  without.use_lfl = false;
  Model ma(with, tiny_vocab()), mb(without, tiny_vocab());
  Trainer ta(ma, tiny_samples()), tb(mb, tiny_samples());
  ta.compute_gradients(0);
  tb.compute_gradients(0);
  double diff = 0;
  const auto pa = ma.params().all(), pb = mb.params().all();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->grad.size() && pb[i]->grad.size()) diff = std::max(diff, max_abs_diff(pa[i]->grad, pb[i]->grad));
  }
  CHECK(diff > 1e-8);
}

TEST_CASE("training lowers nothing it should not touch") {
  TrainConfig c = tiny_config();
  c.codec_mode = CodecMode::learned;
  c.latent_channels = 4;
  c.codec_factor = 2;
  c.codec_hidden = 8;
  c.codec_steps = 3;
  Model m(c, tiny_vocab());
  Trainer tr(m, tiny_samples());
  CHECK(m.codec_ready());
  std::map<std::string, Tensor> frozen_before, trainable_before;
  for (const Parameter* p : m.params().all()) (p->trainable ? trainable_before : frozen_before)[p->name] = p->value;
  bool has_codec = false;
  for (const auto& [name, v] : frozen_before) has_codec |= name.rfind("codec.", 0) == 0;
  CHECK(has_codec);
  tr.run(4);
  for (const auto& [name, v] : frozen_before) CHECK_MESSAGE(max_abs_diff(m.params().at(name).value, v) == 0.0, name);
  int moved = 0;
  for (const auto& [name, v] : trainable_before) moved += max_abs_diff(m.params().at(name).value, v) > 0;
  CHECK(moved > 0);
}

TEST_CASE("two runs with the same seed produce identical traces") {
  Model ma(tiny_config(), tiny_vocab()), mb(tiny_config(), tiny_vocab());
  Trainer ta(ma, tiny_samples()), tb(mb, tiny_samples());
  const auto a = ta.run(), b = tb.run();
  REQUIRE(a.size() == 6);
  REQUIRE(b.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(format_trace_line(a[i]) == format_trace_line(b[i]));
  CHECK(max_param_diff(ma, mb) == 0.0);
}

TEST_CASE("trace lines round-trip") {
  StepRecord r{12, 0.5, std::nan(""), 0.5, 0.25};
  const StepRecord back = parse_trace_line(format_trace_line(r));
  CHECK(back.step == 12);
  CHECK(std::isnan(back.l_fl));
  CHECK(back.l_total == 0.5);
  r.l_fl = 1.0 / 3.0;
  CHECK(parse_trace_line(format_trace_line(r)).l_fl == r.l_fl);
  CHECK_THROWS_AS(parse_trace_line("1 2"), IOFailure);
}

TEST_CASE("non-finite losses name the offending batch") {
  Model m(tiny_config(), tiny_vocab());
  Trainer tr(m, tiny_samples());
  m.params().at("unet.conv_out.b").value[0] = std::nan("");
  const auto expect = tr.batch_indices(0);
  try {
    tr.step();
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.step() == 0);
    CHECK(e.batch_ids().size() == expect.size());
    CHECK(e.batch_ids()[0] == tr.data()[expect[0]].id);
  }
  CHECK(tr.step_count() == 0);
}

TEST_CASE("checkpoints round-trip byte for byte") {
  testsupport::TempDir dir("ckpt");
  Model m(tiny_config(), tiny_vocab());
  Trainer tr(m, tiny_samples());
  tr.run(3);
  save_checkpoint(dir.path() / "a.ckpt", m, tr.optimizer(), tr.step_count());
  const Checkpoint ck = load_checkpoint(dir.path() / "a.ckpt");
  CHECK(ck.step == 3);
  CHECK(ck.model->trained());
  CHECK(ck.model->config().to_text() == m.config().to_text());
  CHECK(ck.model->vocab().serialize() == m.vocab().serialize());
  CHECK(max_param_diff(*ck.model, m) == 0.0);
  save_checkpoint(dir.path() / "b.ckpt", *ck.model, ck.optimizer, ck.step);
  CHECK(read_bytes(dir.path() / "a.ckpt") == read_bytes(dir.path() / "b.ckpt"));
}

TEST_CASE("damaged checkpoints are rejected") {
  testsupport::TempDir dir("ckpt-bad");
  Model m(tiny_config(), tiny_vocab());
  Trainer tr(m, tiny_samples());
  tr.run(1);
  const auto good = dir.path() / "good.ckpt";
  save_checkpoint(good, m, tr.optimizer(), tr.step_count());
  const std::string bytes = read_bytes(good);
  const auto bad = dir.path() / "bad.ckpt";

  write_bytes(bad, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(bad), CorruptCheckpoint);

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write_bytes(bad, flipped);
  CHECK_THROWS_AS(load_checkpoint(bad), CorruptCheckpoint);

  std::string other = bytes;
  other[0] = 'X';
  write_bytes(bad, other);
  CHECK_THROWS_AS(load_checkpoint(bad), CorruptCheckpoint);

  std::string future = bytes;
  future[8] = 2;
  write_bytes(bad, future);
  CHECK_THROWS_AS(load_checkpoint(bad), VersionMismatch);

  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), IOFailure);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  testsupport::TempDir dir("resume");
  TrainConfig c = tiny_config();
  c.steps = 10;
  Model straight(c, tiny_vocab());
  Trainer ts(straight, tiny_samples());
  const auto full = ts.run();

  Model first(c, tiny_vocab());
  Trainer tf(first, tiny_samples());
  tf.run(5);
  save_checkpoint(dir.path() / "mid.ckpt", first, tf.optimizer(), tf.step_count());
  Checkpoint ck = load_checkpoint(dir.path() / "mid.ckpt");
  Trainer tr(*ck.model, tiny_samples());
  resume(tr, ck);
  const auto rest = tr.run();
  REQUIRE(rest.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rest[i].step == full[5 + i].step);
    CHECK(rest[i].l_total == doctest::Approx(full[5 + i].l_total).epsilon(1e-9));
  }
  CHECK(max_param_diff(*ck.model, straight) < 1e-6);
}

TEST_CASE("sampling requires a trained model") {
  Model m(tiny_config(), tiny_vocab());
  const auto s = tiny_samples();
  CHECK_THROWS_AS(m.sample(s[0].lg, s[0].lr, s[0].prompt, {}), UntrainedModel);
}

TEST_CASE("a single sampling step is the one-step estimate decoded") {
  Model m(tiny_config(), tiny_vocab());
  Trainer tr(m, tiny_samples());
  tr.run(2);
  const auto s = tiny_samples()[0];
  SampleOptions opt;
  opt.steps = 1;
  opt.seed = 5;
  const Image got = m.sample(s.lg, s.lr, s.prompt, opt);

  const int T = m.schedule().T;
  Rng rng(mix_seed(opt.seed, {0x5A3B1E}));
  const Tensor z = randn(m.codec().latent_dims(16, 16), rng);
  const Tensor eps = m.predictor().predict(z, m.ffem().encode(s.lg, s.lr), m.vtfem().condition(s.lr, s.prompt), T);
  Tensor z0(z.dims());
  z0.data() = (z.data() - std::sqrt(1.0 - m.schedule().alpha_bar_at(T)) * eps.data()) /
              std::sqrt(m.schedule().alpha_bar_at(T));
  const Image want = m.codec().decode(z0);
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("sampling is deterministic per seed") {
  Model m(tiny_config(), tiny_vocab());
  Trainer tr(m, tiny_samples());
  tr.run(1);
  const auto s = tiny_samples()[1];
  SampleOptions opt;
  opt.steps = 5;
  opt.seed = 11;
  const Image a = m.sample(s.lg, s.lr, s.prompt, opt);
  const Image b = m.sample(s.lg, s.lr, s.prompt, opt);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(a.dim(0) == 3);
  CHECK(a.dim(1) == 16);
  CHECK(a.data().minCoeff() >= 0.0);
  CHECK(a.data().maxCoeff() <= 1.0);
  opt.seed = 12;
  CHECK(max_abs_diff(a, m.sample(s.lg, s.lr, s.prompt, opt)) > 1e-6);
  opt.seed = 11;
  opt.sampler = Sampler::ddpm;
  const Image c = m.sample(s.lg, s.lr, s.prompt, opt);
  CHECK(max_abs_diff(c, m.sample(s.lg, s.lr, s.prompt, opt)) == 0.0);
  CHECK(max_abs_diff(a, c) > 1e-6);
}

TEST_CASE("the vocabulary covers every character in a manifest") {
  synth::Manifest man;
  man.records.push_back({"s0000_AC00", U'가', "s0000", "", "", "", synth::make_prompt(U'가', "s0000")});
  const Vocab v = vocab_for(man);
  for (const auto& tok : v.tokenize(man.records[0].prompt)) CHECK(v.id(tok) != Vocab::kUnknown);
}

TEST_CASE("cosine learning-rate annealing") {
  TrainConfig c = tiny_config();
  c.steps = 10;
  Model flat(c, tiny_vocab());
  Trainer tf(flat, tiny_samples());
  CHECK(tf.learning_rate(0) == c.lr);
  CHECK(tf.learning_rate(9) == c.lr);
  c.cosine_lr = true;
  Model annealed(c, tiny_vocab());
  Trainer ta(annealed, tiny_samples());
  CHECK(ta.learning_rate(0) == doctest::Approx(c.lr));
  CHECK(ta.learning_rate(5) == doctest::Approx(0.5 * c.lr));
  CHECK(ta.learning_rate(10) == doctest::Approx(0.0));
  for (long s = 1; s < 10; ++s) CHECK(ta.learning_rate(s) < ta.learning_rate(s - 1));
}

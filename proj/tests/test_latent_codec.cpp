#include "anyglyph/latent_codec.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace anyglyph;
using testsupport::TempDir;
using testsupport::uniform;

namespace {

std::vector<Image> toy_images(const std::filesystem::path& dir, int canvas) {
  synth::DatasetOptions opt;
  opt.charset = synth::charset_preset("latin26");
  opt.n_styles = 4;
  opt.seed = 7;
  opt.canvas = canvas;
  opt.out_dir = dir;
  const auto ds = synth::build_dataset(opt);
  std::vector<Image> images;
  for (auto& s : synth::load_samples(ds.all)) images.push_back(s.x0);
  return images;
}

}  // namespace

TEST_CASE("fixed codec is an exact rearrangement") {
  ParamStore store;
  const LatentCodec codec(store, CodecConfig::fixed(2), 0);
  CHECK(store.all().empty());
  const Image x = quantize8(uniform({3, 16, 12}, 1));
  const Tensor z = codec.encode(x);
  CHECK(z.dims() == std::vector<int>{12, 8, 6});
  CHECK(testsupport::max_abs_diff(codec.decode(z), x) < 1e-12);
  CHECK(testsupport::max_abs_diff(codec.encode(codec.decode(z)), z) < 1e-12);
  // Channel layout: latent[c*4 + dy*2 + dx, y, x] = 2 * image[c, 2y+dy, 2x+dx] - 1.
  CHECK(z.at(1 * 4 + 1 * 2 + 0, 3, 2) == doctest::Approx(2 * x.at(1, 7, 4) - 1));
}

TEST_CASE("codec shape contract") {
  ParamStore store;
  const LatentCodec learned(store, CodecConfig{}, 3);
  CHECK(learned.latent_dims(128, 128) == std::vector<int>{4, 32, 32});
  CHECK(learned.encode(uniform({3, 32, 32}, 2)).dims() == std::vector<int>{4, 8, 8});
  CHECK_THROWS_AS(learned.latent_dims(127, 128), ShapeMismatch);
  CHECK_THROWS_AS(learned.encode(uniform({3, 30, 32}, 2)), ShapeMismatch);
  CHECK_THROWS_AS(learned.decode(Tensor({3, 8, 8})), ShapeMismatch);
  const Image zero = learned.decode(Tensor({4, 8, 8}));
  CHECK(zero.dims() == std::vector<int>{3, 32, 32});
  CHECK(zero.data().minCoeff() >= 0.0);
  CHECK(zero.data().maxCoeff() <= 1.0);

  const LatentCodec fixed(store, CodecConfig::fixed(4), 0);
  CHECK(fixed.latent_dims(128, 128) == std::vector<int>{48, 32, 32});
  CHECK_THROWS_AS(LatentCodec(store, CodecConfig{2, 4, CodecMode::fixed, 0}, 0), InvalidConfig);
  CHECK_THROWS_AS(LatentCodec(store, CodecConfig{3, 27, CodecMode::fixed, 0}, 0), InvalidConfig);
}

TEST_CASE("learned codec gradients") {
  ParamStore store;
  const LatentCodec codec(store, CodecConfig{2, 4, CodecMode::learned, 8}, 5);
  const Image x = uniform({3, 8, 8}, 6);
  auto f = [&](Tape& t) {
    Var in = t.constant(x);
    return ag::mse(codec.decode(t, codec.encode(t, in), false), in);
  };
  const auto r = testsupport::check_param_grads(f, store.all(), 2);
  CHECK(r.rel_error < 1e-4);
}

TEST_CASE("train_codec with zero steps is a no-op") {
  ParamStore store;
  LatentCodec codec(store, CodecConfig{2, 4, CodecMode::learned, 8}, 1);
  std::vector<Tensor> before;
  for (auto* p : store.all()) before.push_back(p->value);
  CodecTrainOptions opt;
  opt.steps = 0;
  train_codec(codec, store, {uniform({3, 8, 8}, 1), uniform({3, 8, 8}, 2)}, opt);
  const auto params = store.all();
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value.data() == before[i].data());
}

TEST_CASE("learned codec training is deterministic and reaches the reconstruction target") {
  TempDir dir("codec");
  const auto images = toy_images(dir.path(), 32);
  REQUIRE(images.size() == 104);
  CodecTrainOptions opt;
  opt.steps = 200;
  opt.batch = 8;
  opt.seed = 11;
  opt.validation = 8;

  ParamStore a_store, b_store;
  LatentCodec a(a_store, CodecConfig{}, 2), b(b_store, CodecConfig{}, 2);
  opt.steps = 20;
  const auto ra = train_codec(a, a_store, images, opt);
  const auto rb = train_codec(b, b_store, images, opt);
  CHECK(ra.loss_trace == rb.loss_trace);
  const auto pa = a_store.all(), pb = b_store.all();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.data() == pb[i]->value.data());

  ParamStore store;
  LatentCodec codec(store, CodecConfig{}, 2);
  opt.steps = 200;
  const auto report = train_codec(codec, store, images, opt);
  REQUIRE(report.loss_trace.size() == 200);
  auto window_mean = [&](std::size_t from, std::size_t n) {
    double s = 0;
    for (std::size_t i = from; i < from + n; ++i) s += report.loss_trace[i];
    return s / n;
  };
  CHECK(window_mean(180, 20) < window_mean(0, 20));
  MESSAGE("codec held-out L1: " << report.validation_initial << " -> " << report.validation_final);
  CHECK(report.validation_final < report.validation_initial);
  CHECK(report.validation_final < 0.05);
}

#include <doctest.h>

#include <fstream>

#include "anyglyph/config.hpp"
#include "support.hpp"

using namespace anyglyph;

TEST_CASE("defaults match the published training setup") {
  const TrainConfig c;
  CHECK(c.lr == doctest::Approx(1e-5));
  CHECK(c.batch == 16);
  CHECK(c.epochs == 30);
  CHECK(c.lambda == doctest::Approx(1.0));
  CHECK(c.T == 1000);
  CHECK(c.image_size == 128);
  CHECK(c.use_ci);
  CHECK(c.use_ct);
  CHECK(c.use_lfl);
  CHECK(c.injection_mode == InjectionMode::input_add);
}

TEST_CASE("text form round-trips every key") {
  TrainConfig c;
  c.lr = 3.25e-4;
  c.seed = 0xFFFFFFFFFFFFULL;
  c.use_ct = false;
  c.injection_mode = InjectionMode::control_branch;
  c.codec_mode = CodecMode::fixed;
  c.codec_factor = 2;
  c.latent_channels = 12;
  c.beta_end = 0.1 / 3.0;
  const TrainConfig back = TrainConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.beta_end == c.beta_end);
  for (const auto& k : TrainConfig::keys()) CHECK(back.get(k) == c.get(k));
}

TEST_CASE("parse skips comments and blank lines") {
  const auto c = TrainConfig::parse("# run\n\nbatch = 4   # small\n  lambda=0.5\n");
  CHECK(c.batch == 4);
  CHECK(c.lambda == 0.5);
}

TEST_CASE("unknown keys list the valid ones") {
  TrainConfig c;
  try {
    c.set("learning_rate", "1");
    FAIL("expected InvalidConfig");
  } catch (const InvalidConfig& e) {
    const std::string msg = e.what();
    CHECK(msg.find("learning_rate") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("injection_mode") != std::string::npos);
  }
  CHECK_THROWS_AS(c.set("batch", "four"), InvalidConfig);
  CHECK_THROWS_AS(c.set("use_ci", "maybe"), InvalidConfig);
  CHECK_THROWS_AS(c.apply_override("batch"), InvalidConfig);
}

TEST_CASE("overrides assign by key") {
  TrainConfig c;
  c.apply_override("lambda=1.5");
  c.apply_override("injection_mode=control_branch");
  c.apply_override("use_lfl=false");
  CHECK(c.lambda == 1.5);
  CHECK(c.injection_mode == InjectionMode::control_branch);
  CHECK_FALSE(c.use_lfl);
}

TEST_CASE("validation rejects inconsistent settings") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  TrainConfig bad = c;
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = c;
  bad.image_size = 100;  // not divisible by the codec's downsampling
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = c;
  bad.codec_mode = CodecMode::fixed;
  bad.codec_factor = 2;
  bad.latent_channels = 4;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad.latent_channels = 12;
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("save and load through a file") {
  testsupport::TempDir dir("config");
  TrainConfig c;
  c.batch = 3;
  c.save(dir.path() / "run.cfg");
  CHECK(TrainConfig::load(dir.path() / "run.cfg").to_text() == c.to_text());
  CHECK_THROWS_AS(TrainConfig::load(dir.path() / "missing.cfg"), IOFailure);
}

TEST_CASE("schedule follows T and the beta range") {
  TrainConfig c;
  c.T = 100;
  c.beta_start = 1e-3;
  c.beta_end = 0.2;
  const auto s = c.schedule();
  CHECK(s.T == 100);
  CHECK(s.beta_at(1) == doctest::Approx(1e-3));
  CHECK(s.beta_at(100) == doctest::Approx(0.2));
}

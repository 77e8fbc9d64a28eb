#include <doctest.h>

#include <fstream>
#include <set>

#include "anyglyph/repro.hpp"
#include "support.hpp"

using namespace anyglyph;
using namespace anyglyph::repro;

namespace {

ExperimentRecipe tiny_recipe() {
  ExperimentRecipe r = ExperimentRecipe::parse(R"(
name = tiny
dataset.preset = latin26
dataset.styles = 2
dataset.glyphs = 4
dataset.split = 0.5
dataset.canvas = 32
train.T = 20
train.beta_start = 0.005
train.beta_end = 0.5
train.lr = 0.001
train.batch = 2
train.steps = 2
train.image_size = 16
train.codec_mode = fixed
train.codec_factor = 2
train.latent_channels = 12
train.base_channels = 16
train.ffem_channels = 16
train.cond_dim = 32
sample.steps = 2
)");
  return r;
}

std::string slurp(const std::filesystem::path& f) {
  std::ifstream in(f, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("recipes round-trip through text") {
  const ExperimentRecipe r = tiny_recipe();
  const ExperimentRecipe back = ExperimentRecipe::parse(r.to_text());
  CHECK(back.to_text() == r.to_text());
  CHECK(back.dataset.glyphs == 4);
  CHECK(back.train.image_size == 16);
  CHECK_THROWS_AS(ExperimentRecipe::parse("dataset.colour = red\n"), InvalidConfig);
  CHECK_THROWS_AS(ExperimentRecipe::parse("train.nope = 1\n"), InvalidConfig);
  CHECK_THROWS_AS(ExperimentRecipe::parse("name\n"), InvalidConfig);
}

TEST_CASE("shipped recipes parse") {
  for (const char* name : {"overfit", "ablation-korean-mini", "latin-mini", "chinese-mini", "korean-mini"}) {
    const auto file = std::filesystem::path(ANYGLYPH_SOURCE_DIR) / "recipes" / (std::string(name) + ".recipe");
    CHECK_NOTHROW(ExperimentRecipe::load(file));
    CHECK(ExperimentRecipe::load(file).name == name);
  }
}

TEST_CASE("the ablation has exactly seven rows in order") {
  const auto rows = ablation_rows();
  REQUIRE(rows.size() == 7);
  const TrainConfig base;
  auto flags = [&](const AblationRow& row) {
    const TrainConfig c = apply_row(base, row);
    return std::vector<bool>{c.use_ci, c.use_ct, c.use_lfl};
  };
  CHECK(flags(rows[0]) == std::vector<bool>{false, false, false});
  CHECK(flags(rows[1]) == std::vector<bool>{true, false, false});
  CHECK(flags(rows[2]) == std::vector<bool>{false, true, false});
  CHECK(flags(rows[3]) == std::vector<bool>{true, true, false});
  for (int i = 4; i < 7; ++i) CHECK(flags(rows[i]) == std::vector<bool>{true, true, true});
  CHECK(apply_row(base, rows[4]).lambda == 0.5);
  CHECK(apply_row(base, rows[5]).lambda == 1.0);
  CHECK(apply_row(base, rows[6]).lambda == 1.5);
  int refs = 0;
  for (const auto& r : rows) refs += r.reference;
  CHECK(refs == 1);
  CHECK(rows[5].reference);
}

TEST_CASE("ablation rows differ from the baseline only in the toggles") {
  const std::set<std::string> allowed{"use_ci", "use_ct", "use_lfl", "lambda"};
  const TrainConfig base = tiny_recipe().train;
  const TrainConfig baseline = apply_row(base, ablation_rows()[0]);
  for (const auto& row : ablation_rows()) {
    const TrainConfig c = apply_row(base, row);
    for (const auto& k : TrainConfig::keys()) {
      if (!allowed.count(k)) CHECK_MESSAGE(c.get(k) == baseline.get(k), row.name << " changes " << k);
    }
  }
}

TEST_CASE("a tiny sweep yields seven reports and a reproducible summary") {
  testsupport::TempDir dir("sweep");
  const auto results = run_ablation_sweep(tiny_recipe(), {3}, dir.path());
  REQUIRE(results.size() == 7);
  for (const auto& r : results) {
    CHECK(r.report.samples == 4);
    CHECK(std::isfinite(r.report.l1));
    CHECK(std::filesystem::exists(dir.path() / r.row.name / "seed3" / "model.ckpt"));
    const TrainConfig cfg = TrainConfig::load(dir.path() / r.row.name / "seed3" / "config.txt");
    CHECK(cfg.seed == 3);
    CHECK(cfg.to_text() == [&] {
      TrainConfig c = apply_row(tiny_recipe().train, r.row);
      c.seed = 3;
      return c.to_text();
    }());
  }
  const std::string summary = summary_table(results);
  CHECK(summary == slurp(dir.path() / "summary.txt"));
  CHECK(summary_table(load_ablation_results({3}, dir.path())) == summary);
  CHECK(summary.find("+all_lambda1.0 (ref)") != std::string::npos);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 8);
}

TEST_CASE("the overfit probe reports its thresholds and fails on a damaged checkpoint") {
  ExperimentRecipe r = tiny_recipe();
  r.dataset.styles = 1;
  r.train.steps = 4;
  r.initial_window = 2;
  r.final_window = 2;
  testsupport::TempDir dir("probe");
  const OverfitReport rep = run_overfit_probe(r, 0, dir.path());
  CHECK(rep.trace.size() == 4);
  CHECK(rep.initial_loss > 0);
  CHECK(rep.sample_l1 > 0);
  CHECK(rep.max_loss_ratio == 0.1);
  CHECK(rep.to_text().find("result: ") != std::string::npos);
  CHECK(std::filesystem::exists(dir.path() / "loss_trace.tsv"));
  ProbeOptions bad;
  bad.corrupt_checkpoint = true;
  testsupport::TempDir dir2("probe-bad");
  CHECK_THROWS_AS(run_overfit_probe(r, 0, dir2.path(), bad), CorruptCheckpoint);
}

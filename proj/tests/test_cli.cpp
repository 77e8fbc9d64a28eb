#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "anyglyph/image.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  static int n = 0;
  const fs::path log = fs::temp_directory_path() / ("anyglyph-cli-" + std::to_string(::getpid()) + "-" +
                                                    std::to_string(n++) + ".log");
  const std::string cmd = std::string("\"") + ANYGLYPH_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  r.out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  fs::remove(log);
  return r;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t lines(const fs::path& f) {
  std::ifstream in(f);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

std::string tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "run.txt") files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.string() + "\n" + slurp(root / f);
  return all;
}

const char* kTinyTrain =
    " --override steps=2 batch=2 T=20 image_size=16 codec_mode=fixed codec_factor=2 latent_channels=12"
    " base_channels=16 ffem_channels=16 cond_dim=32 lr=0.001";

}  // namespace

TEST_CASE("synth-data writes a deterministic manifest") {
  testsupport::TempDir dir("cli-synth");
  const auto a = dir.path() / "a", b = dir.path() / "b";
  const auto r = cli("synth-data --preset latin26 --styles 4 --seed 7 --canvas 32 --out " + a.string());
  REQUIRE(r.code == 0);
  CHECK(lines(a / "manifest.tsv") == 104);
  CHECK(fs::exists(a / "run.txt"));
  REQUIRE(cli("synth-data --preset latin26 --styles 4 --seed 7 --canvas 32 --out " + b.string()).code == 0);
  CHECK(tree_bytes(a) == tree_bytes(b));
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli("synth-data --preset latin26").code == 2);
  CHECK(cli("").code == 2);
  CHECK(cli("no-such-command").code == 2);
  testsupport::TempDir dir("cli-usage");
  const auto r = cli("train --data " + dir.path().string() + " --out " + (dir.path() / "o").string() +
                     " --override learning_rate=1");
  CHECK(r.code == 2);
  CHECK(r.out.find("injection_mode") != std::string::npos);
  CHECK(cli("grid --chars AB --ref x.png --out " + (dir.path() / "g.png").string()).code == 2);
}

TEST_CASE("train, sample, eval and grid work end to end") {
  testsupport::TempDir dir("cli-e2e");
  const auto data = dir.path() / "data", run = dir.path() / "run", run2 = dir.path() / "run2";
  REQUIRE(cli("synth-data --preset latin26 --styles 2 --split 0.5 --seed 1 --canvas 32 --out " + data.string())
              .code == 0);
  const auto t = cli("train --data " + (data / "train.tsv").string() + " --out " + run.string() + kTinyTrain);
  REQUIRE_MESSAGE(t.code == 0, t.out);
  CHECK(fs::exists(run / "model.ckpt"));
  CHECK(fs::exists(run / "config.txt"));
  CHECK(lines(run / "loss_trace.tsv") == 3);

  SUBCASE("resume appends to the trace") {
    REQUIRE(cli("train --data " + (data / "train.tsv").string() + " --out " + run.string() + " --resume " +
                (run / "model.ckpt").string() + " --override steps=4")
                .code == 2);
    const auto r2 = cli("train --data " + (data / "train.tsv").string() + " --out " + run2.string() + kTinyTrain +
                        " lambda=0");
    CHECK(r2.code == 0);
  }

  SUBCASE("sampling") {
    const auto ref = data / "styles" / "s0001" / "0052.png";
    const auto s1 = dir.path() / "s1", s2 = dir.path() / "s2", s3 = dir.path() / "s3";
    REQUIRE(cli("sample --ckpt " + (run / "model.ckpt").string() + " --char R --ref " + ref.string() +
                " --steps 3 --seed 1 --out " + s1.string())
                .code == 0);
    CHECK(fs::exists(s1 / "0052.png"));
    REQUIRE(cli("sample --ckpt " + (run / "model.ckpt").string() + " --char R --ref " + ref.string() +
                " --steps 3 --seed 1 --out " + s2.string())
                .code == 0);
    CHECK(slurp(s1 / "0052.png") == slurp(s2 / "0052.png"));
    REQUIRE(cli("sample --ckpt " + (run / "model.ckpt").string() + " --chars A..Z --ref " + ref.string() +
                " --steps 2 --out " + s3.string())
                .code == 0);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(s3)) pngs += e.path().extension() == ".png";
    CHECK(pngs == 26);
  }

  SUBCASE("evaluation") {
    const auto ev = dir.path() / "ev";
    const auto r = cli("eval --gen " + data.string() + " --gt " + data.string() + " --out " + ev.string());
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const std::string report = slurp(ev / "report.txt");
    CHECK(report.find("L1\t0\n") != std::string::npos);
    CHECK(report.find("SSIM\t1\n") != std::string::npos);
    CHECK(report.find("FID\t0\n") != std::string::npos);
    CHECK(report.find("extractor: phi-pyramid") != std::string::npos);
    CHECK(report.find("command = eval") != std::string::npos);
    const auto bad = cli("eval --gen " + (data / "train.tsv").string() + " --gt " + (data / "test.tsv").string() +
                         " --out " + ev.string());
    CHECK(bad.code == 1);
    CHECK(bad.out.find("missing from generated manifest") != std::string::npos);
  }

  SUBCASE("grid layout") {
    const auto g = dir.path() / "grid.png";
    const auto r = cli("grid --ckpt " + (run / "model.ckpt").string() + " " + (run / "model.ckpt").string() +
                       " --chars ABCDE --ref " + (data / "styles" / "s0001" / "0052.png").string() +
                       " --steps 2 --cell 20 --out " + g.string());
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const auto img = anyglyph::read_png(g);
    CHECK(img.dim(1) == 3 * 22 + 2);
    CHECK(img.dim(2) == 6 * 22 + 2);
    // reference cell frame is red
    CHECK(img.at(0, 3, 3) == 1.0);
    CHECK(img.at(1, 3, 3) == 0.0);
    CHECK(img.at(2, 3, 3) == 0.0);
  }
}

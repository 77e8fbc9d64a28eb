#include <fstream>

#include "anyglyph/metrics.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace anyglyph;
using testsupport::TempDir;
using testsupport::uniform;

using testsupport::brute_ssim;
using testsupport::gaussian_set;

TEST_CASE("l1 and psnr closed forms") {
  const Image a = uniform({3, 8, 8}, 1), b = uniform({3, 8, 8}, 2), c = uniform({3, 8, 8}, 3);
  CHECK(l1(a, a) == 0.0);
  CHECK(l1(Image({3, 4, 4}), Image({3, 4, 4}, 0.5)) == 0.5);
  long double acc = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) acc += std::abs((long double)a[i] - b[i]);
  CHECK(std::abs(l1(a, b) - static_cast<double>(acc / a.size())) < 1e-10);
  CHECK(l1(a, b) == l1(b, a));
  CHECK(l1(a, c) <= l1(a, b) + l1(b, c));

  CHECK(psnr(Image({3, 4, 4}), Image({3, 4, 4}, 0.1)) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, a) == 100.0);
  long double se = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) se += ((long double)a[i] - b[i]) * ((long double)a[i] - b[i]);
  CHECK(std::abs(psnr(a, b) - 10 * std::log10(1.0 / static_cast<double>(se / a.size()))) < 1e-8);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(l1(a, Image({3, 8, 7})), ShapeMismatch);
}

TEST_CASE("ssim matches a brute-force window loop") {
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const Image a = uniform({3, 16, 16}, 100 + i), b = uniform({3, 16, 16}, 200 + i);
    worst = std::max(worst, std::abs(ssim(a, b) - brute_ssim(a, b, 11)));
    const double s = ssim(a, b);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
  }
  CHECK(worst < 1e-8);
  const Image x = uniform({3, 16, 16}, 5);
  CHECK(std::abs(ssim(x, x) - 1.0) < 1e-9);
  CHECK_THROWS_AS(ssim(Image({3, 10, 16}), Image({3, 10, 16})), ImageTooSmall);
}

TEST_CASE("fid closed forms") {
  const Eigen::MatrixXd a = gaussian_set(50, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3), 1);
  CHECK(fid(a, a) < 1e-6);
  Eigen::MatrixXd pa(3, 2), pb(3, 2);
  pa.setZero();
  pb.rowwise() = Eigen::RowVector2d(3, 4);
  CHECK(fid(pa, pb) == doctest::Approx(25.0).epsilon(1e-12));
  const Eigen::MatrixXd b = gaussian_set(60, Eigen::VectorXd::Ones(3), 2 * Eigen::VectorXd::Ones(3), 2);
  CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-6);
  CHECK_THROWS_AS(fid(a.topRows(3), b), TooFewSamples);
  Eigen::MatrixXd bad = a;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(fid(bad, a), NonFiniteFeatures);
}

TEST_CASE("fid matches the analytic Gaussian formula") {
  Eigen::VectorXd mu_a(4), mu_b(4), sd_a(4), sd_b(4);
  mu_a << 0, 1, -1, 0.5;
  mu_b << 0.5, 0, -1, 2;
  sd_a << 1, 0.5, 2, 1;
  sd_b << 2, 0.5, 1, 1.5;
  const double analytic = (mu_a - mu_b).squaredNorm() + (sd_a - sd_b).squaredNorm();
  const double value = fid(gaussian_set(10000, mu_a, sd_a, 3), gaussian_set(10000, mu_b, sd_b, 4));
  CHECK(std::abs(value - analytic) < 0.05 * analytic);
}

TEST_CASE("psd square root") {
  Eigen::MatrixXd m(2, 2);
  m << 4, 1, 1, 3;
  const Eigen::MatrixXd r = psd_sqrt(m);
  CHECK((r * r - m).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::MatrixXd neg(2, 2);
  neg << 1, 0, 0, -1e-9;
  CHECK(psd_sqrt(neg)(1, 1) == 0.0);
}

TEST_CASE("evaluate_pairs over manifests") {
  TempDir dir("eval");
  synth::DatasetOptions opt;
  opt.charset = synth::charset_preset("latin26");
  opt.n_styles = 2;
  opt.seed = 3;
  opt.canvas = 32;
  opt.out_dir = dir.path();
  const auto ds = synth::build_dataset(opt);
  const FeatureExtractor phi;
  const EvalReport same = evaluate_pairs(ds.all, ds.all, {}, phi);
  CHECK(same.samples == 52);
  CHECK(same.l1 == 0.0);
  CHECK(same.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.psnr == 100.0);
  CHECK(same.fid < 1e-6);
  CHECK(same.extractor_id == phi.id());
  CHECK(same.to_text() == evaluate_pairs(ds.all, ds.all, {}, phi).to_text());
  CHECK(same.to_text().find("extractor: " + phi.id()) != std::string::npos);

  // Shift every generated image to a different style of the same character.
  synth::Manifest shifted = ds.all;
  for (std::size_t i = 0; i < 26; ++i) std::swap(shifted.records[i].path_x0, shifted.records[i + 26].path_x0);
  const EvalReport diff = evaluate_pairs(shifted, ds.all, {}, phi);
  CHECK(diff.l1 > 0.0);
  CHECK(diff.psnr < 100.0);

  synth::Manifest dropped = ds.all;
  dropped.records.pop_back();
  CHECK_THROWS_AS(evaluate_pairs(dropped, ds.all, {}, phi), ManifestMismatch);
  synth::Manifest renamed = ds.all;
  renamed.records[0].id = "other";
  CHECK_THROWS_AS(evaluate_pairs(renamed, ds.all, {}, phi), ManifestMismatch);
}

TEST_CASE("reports parse back exactly") {
  EvalReport r;
  r.l1 = 1.0 / 3.0;
  r.ssim = 0.123456789012345678;
  r.psnr = 23.5;
  r.fid = std::nan("");
  r.samples = 60;
  r.config.image_size = 32;
  r.extractor_id = "phi";
  r.gen_manifest = "a/manifest.tsv";
  r.gt_manifest = "b/test.tsv";
  const EvalReport back = EvalReport::parse(r.to_text());
  CHECK(back.l1 == r.l1);
  CHECK(back.ssim == r.ssim);
  CHECK(back.psnr == r.psnr);
  CHECK(std::isnan(back.fid));
  CHECK(back.samples == 60);
  CHECK(back.config.image_size == 32);
  CHECK(back.to_text() == r.to_text());
  r.fid = 2.5;
  CHECK(EvalReport::parse(r.to_text()).fid == 2.5);
  CHECK_THROWS_AS(EvalReport::parse("samples: 3\n"), IOFailure);
}

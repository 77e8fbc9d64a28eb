#include "anyglyph/losses.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace anyglyph;
using testsupport::uniform;

namespace {

// Explicit Gram distance over a {C, H, W} feature tensor pair.
double gram_distance(const Tensor& a, const Tensor& b) {
  const int c = a.dim(0);
  const Eigen::Index n = a.size() / c;
  long double acc = 0;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      long double ga = 0, gb = 0;
      for (Eigen::Index k = 0; k < n; ++k) {
        ga += static_cast<long double>(a[i * n + k]) * a[j * n + k];
        gb += static_cast<long double>(b[i * n + k]) * b[j * n + k];
      }
      acc += (ga - gb) * (ga - gb);
    }
  return static_cast<double>(acc / ((long double)(c * n) * (c * n)));
}

}  // namespace

TEST_CASE("diffusion loss closed forms") {
  const Tensor e = uniform({2, 3, 3}, 1, -1, 1);
  CHECK(diffusion_loss(e, e) == 0.0);
  CHECK(diffusion_loss(Tensor({2, 3, 3}), Tensor({2, 3, 3}, 1.0)) == 1.0);
  const Tensor f = uniform({2, 3, 3}, 2, -1, 1);
  long double acc = 0;
  for (Eigen::Index i = 0; i < e.size(); ++i) acc += (long double)(e[i] - f[i]) * (e[i] - f[i]);
  CHECK(std::abs(diffusion_loss(e, f) - static_cast<double>(acc / e.size())) < 1e-10);
  Tape t;
  CHECK(diffusion_loss(t.constant(e), t.constant(f)).value()[0] == doctest::Approx(diffusion_loss(e, f)).epsilon(1e-14));
  CHECK_THROWS_AS(diffusion_loss(e, Tensor({2, 3, 2})), ShapeMismatch);
}

TEST_CASE("feature extractor is frozen and deterministic") {
  const FeatureExtractor phi;
  for (const Parameter* p : phi.params().all()) CHECK_FALSE(p->trainable);
  const FeatureExtractor again;
  const Image x = uniform({3, 32, 32}, 3);
  CHECK(phi.embed(x) == again.embed(x));
  CHECK(phi.embed(x).size() == 32);
  Tape t;
  const auto f = phi.features(t, t.constant(x));
  REQUIRE(f.size() == 4);
  CHECK(f[0].dims() == std::vector<int>{8, 32, 32});
  CHECK(f[3].dims() == std::vector<int>{32, 4, 4});
  CHECK(phi.id() == again.id());
}

TEST_CASE("content and style losses vanish on identical inputs") {
  const FeatureExtractor phi;
  const Image x = uniform({3, 16, 16}, 4);
  CHECK(content_loss(phi, x, x) == 0.0);
  CHECK(style_loss(phi, x, x) == 0.0);
  CHECK(feature_level_loss(phi, x, x, x, 1.0) == 0.0);
  const Image y = uniform({3, 16, 16}, 5);
  CHECK(content_loss(phi, x, y) > 0.0);
  CHECK(style_loss(phi, x, y) > 0.0);
  CHECK_THROWS_AS(content_loss(phi, x, uniform({3, 8, 16}, 1)), ShapeMismatch);
}

TEST_CASE("content loss grows as the image drifts from the glyph") {
  const FeatureExtractor phi;
  const Image lg = uniform({3, 16, 16}, 6), noise = uniform({3, 16, 16}, 7);
  auto blend = [&](double a) { return Image(lg.dims(), (1 - a) * lg.data() + a * noise.data()); };
  const double l0 = content_loss(phi, blend(0.0), lg), l5 = content_loss(phi, blend(0.5), lg),
               l1 = content_loss(phi, blend(1.0), lg);
  CHECK(l0 <= l5);
  CHECK(l5 <= l1);
}

TEST_CASE("style loss equals an explicit Gram computation") {
  const FeatureExtractor phi;
  const Image a = uniform({3, 16, 16}, 8), b = uniform({3, 16, 16}, 9);
  Tape t;
  const auto fa = phi.features(t, t.constant(a)), fb = phi.features(t, t.constant(b));
  double expected = 0;
  for (std::size_t l = 0; l < fa.size(); ++l) expected += gram_distance(fa[l].value(), fb[l].value());
  CHECK(std::abs(style_loss(phi, a, b) - expected) < 1e-8);
}

TEST_CASE("Gram matrices ignore spatial permutations") {
  const Tensor f = uniform({4, 3, 5}, 10, -1, 1);
  Tensor shuffled(f.dims());
  std::vector<int> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 15; ++k) shuffled[c * 15 + k] = f[c * 15 + perm[static_cast<std::size_t>(k)]];
  Tape t;
  const Tensor g1 = gram_matrix(t.constant(f)).value(), g2 = gram_matrix(t.constant(shuffled)).value();
  CHECK(testsupport::max_abs_diff(g1, g2) < 1e-12);
  CHECK(gram_distance(f, shuffled) < 1e-20);
}

TEST_CASE("feature level loss is linear in alpha_bar") {
  const FeatureExtractor phi;
  const Image x = uniform({3, 16, 16}, 11), lg = uniform({3, 16, 16}, 12), lr = uniform({3, 16, 16}, 13);
  const double l08 = feature_level_loss(phi, x, lg, lr, 0.8), l04 = feature_level_loss(phi, x, lg, lr, 0.4);
  CHECK(std::abs(l08 - 2 * l04) < 1e-12 * std::max(1.0, l08));
  const double recomputed = 0.37 * (content_loss(phi, x, lg) + style_loss(phi, x, lr));
  CHECK(std::abs(feature_level_loss(phi, x, lg, lr, 0.37) - recomputed) < 1e-10);
  for (double ab : {0.1, 0.5, 0.9, 1.0}) {
    CHECK(feature_level_loss(phi, x, lg, lr, ab) / ab == doctest::Approx(l08 / 0.8).epsilon(1e-12));
  }
  CHECK_THROWS_AS(feature_level_loss(phi, x, lg, lr, 0.0), InvalidCoefficient);
  CHECK_THROWS_AS(feature_level_loss(phi, x, lg, lr, 1.5), InvalidCoefficient);
}

TEST_CASE("total loss") {
  CHECK(total_loss(2.0, 3.0, 1.5) == 6.5);
  CHECK(total_loss(0.7, 123.0, 0.0) == 0.7);
  CHECK(total_loss(0.7, 0.2, 1.0) == doctest::Approx(0.9));
}

TEST_CASE("loss gradients w.r.t. the generated image") {
  const FeatureExtractor phi;
  const Image lg = uniform({3, 8, 8}, 14), lr = uniform({3, 8, 8}, 15), x = uniform({3, 8, 8}, 16);
  const auto rc = testsupport::check_input_grad(
      [&](Tape& t, const Var& v) { return content_loss(t, phi, v, t.constant(lg)); }, x, 24);
  const auto rs = testsupport::check_input_grad(
      [&](Tape& t, const Var& v) { return style_loss(t, phi, v, t.constant(lr)); }, x, 24);
  const auto rf = testsupport::check_input_grad(
      [&](Tape& t, const Var& v) { return feature_level_loss(t, phi, v, t.constant(lg), t.constant(lr), 0.6); }, x, 24);
  const auto rd = testsupport::check_input_grad(
      [&](Tape& t, const Var& v) { return diffusion_loss(t.constant(lg), v); }, x, 24);
  CHECK(rc.rel_error < 1e-4);
  CHECK(rs.rel_error < 1e-4);
  CHECK(rf.rel_error < 1e-4);
  CHECK(rd.rel_error < 1e-4);
  CHECK(rc.analytic_norm > 0);
  CHECK(rs.analytic_norm > 0);
}

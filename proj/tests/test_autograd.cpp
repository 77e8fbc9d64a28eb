#include "doctest.h"
#include "support.hpp"

using namespace anyglyph;
using testsupport::check_input_grad;
using testsupport::uniform;

namespace {

// Every op is probed through a random linear functional so that all output
// entries contribute to the checked scalar.
Var probe(Tape& t, const Var& y, std::uint64_t seed = 99) {
  Tensor w = uniform(y.dims(), seed, -1.0, 1.0);
  return ag::sum(y * t.constant(w));
}

void expect_grad(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x) {
  const auto r = check_input_grad(f, x, 16);
  CHECK(r.analytic_norm > 0.0);
  CHECK(r.rel_error < 1e-6);
}

}  // namespace

TEST_CASE("elementwise ops have exact gradients") {
  const Tensor x = uniform({2, 3, 4}, 1, -2.0, 2.0);
  const Tensor other = uniform({2, 3, 4}, 2, -2.0, 2.0);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::silu(v)); }, x);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::tanh(v)); }, x);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::square(v)); }, x);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, v * t.constant(other)); }, x);
  expect_grad([&](Tape& t, const Var& v) { return ag::mse(v, t.constant(other)); }, x);
  expect_grad([&](Tape& t, const Var& v) { return ag::l1(v, t.constant(other)); }, x);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::clamp(v, -1.0, 1.0)); }, x);
}

TEST_CASE("matmul gradients for every transpose combination") {
  const Tensor b = uniform({4, 5}, 3, -1.0, 1.0);
  const Tensor bt = uniform({5, 4}, 3, -1.0, 1.0);
  const Tensor a = uniform({3, 4}, 4, -1.0, 1.0);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::matmul(v, t.constant(b))); }, a);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::matmul(v, t.constant(bt), false, true)); }, a);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::matmul(t.constant(bt), v, true, true)); },
              uniform({3, 5}, 6, -1.0, 1.0));
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::matmul(v, t.constant(a), true, false)); },
              uniform({3, 2}, 7, -1.0, 1.0));
}

TEST_CASE("conv2d gradients w.r.t. input, weight and bias") {
  const Tensor x = uniform({3, 6, 6}, 8, -1.0, 1.0);
  const Tensor w = uniform({4, 3, 3, 3}, 9, -0.5, 0.5);
  const Tensor b = uniform({4}, 10, -0.5, 0.5);
  for (int stride : {1, 2}) {
    expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::conv2d(v, t.constant(w), t.constant(b), stride, 1)); },
                x);
    expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::conv2d(t.constant(x), v, t.constant(b), stride, 1)); },
                w);
    expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::conv2d(t.constant(x), t.constant(w), v, stride, 1)); },
                b);
  }
  const Tensor w1 = uniform({5, 3, 1, 1}, 11, -0.5, 0.5);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::conv2d(v, t.constant(w1), Var(), 1, 0)); }, x);
}

TEST_CASE("conv2d matches a direct loop") {
  const Tensor x = uniform({2, 5, 5}, 12, -1.0, 1.0);
  const Tensor w = uniform({3, 2, 3, 3}, 13, -1.0, 1.0);
  const Tensor b = uniform({3}, 14, -1.0, 1.0);
  Tape t;
  const Tensor y = ag::conv2d(t.constant(x), t.constant(w), t.constant(b), 2, 1).value();
  REQUIRE(y.dims() == std::vector<int>{3, 3, 3});
  double max_err = 0;
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        double acc = b[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              acc += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x.at(c, iy, ix);
            }
        max_err = std::max(max_err, std::abs(acc - y.at(o, oy, ox)));
      }
  CHECK(max_err < 1e-12);
}

TEST_CASE("normalisation, pooling and attention gradients") {
  const Tensor x = uniform({4, 4, 4}, 15, -1.0, 1.0);
  const Tensor gamma = uniform({4}, 16, 0.5, 1.5);
  const Tensor beta = uniform({4}, 17, -0.5, 0.5);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::group_norm(v, 2, t.constant(gamma), t.constant(beta))); },
              x);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::group_norm(t.constant(x), 2, v, t.constant(beta))); },
              gamma);
  const Tensor rows = uniform({3, 4}, 18, -1.0, 1.0);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::layer_norm(v, t.constant(gamma), t.constant(beta))); },
              rows);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::softmax_rows(v)); }, rows);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::avg_pool2x(v)); }, x);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::upsample_nearest2x(v)); }, x);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::transpose(v)); }, rows);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::concat(v, t.constant(x))); }, x);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::add_channel_bias(t.constant(x), v)); }, beta);
  expect_grad([&](Tape& t, const Var& v) { return probe(t, ag::add_row_bias(t.constant(rows), v)); }, beta);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::embedding(v, {2, 0, 2, 1})); }, rows);
  expect_grad([](Tape& t, const Var& v) { return probe(t, ag::gather(v, {5, 1, 5, 0}, {2, 2})); }, rows);
}

TEST_CASE("nn layers back-propagate into parameters") {
  ParamStore store;
  Rng rng(4);
  auto block = nn::ResBlock::make(store, "blk", 4, 8, 6, rng);
  auto attn = nn::CrossAttention::make(store, "attn", 8, 5, rng);
  auto layer = nn::TransformerLayer::make(store, "tr", 5, rng);
  const Tensor x = uniform({4, 4, 4}, 20, -1.0, 1.0);
  const Tensor ctx = uniform({3, 5}, 21, -1.0, 1.0);
  const Tensor temb = uniform({1, 6}, 22, -1.0, 1.0);
  auto f = [&](Tape& t) {
    Var h = block(t, t.constant(x), t.constant(temb));
    Var c = layer(t, t.constant(ctx));
    return probe(t, attn(t, h, c));
  };
  const auto r = testsupport::check_param_grads(f, store.all(), 3);
  CHECK(r.probes > 40);
  CHECK(r.rel_error < 1e-5);
}

TEST_CASE("frozen parameters receive no gradient") {
  ParamStore store;
  Rng rng(1);
  auto lin = nn::Linear::make(store, "lin", 3, 2, rng, 1.0, false);
  Tape t;
  t.backward(ag::sum(lin(t, t.constant(uniform({2, 3}, 1)))));
  CHECK(lin.weight->grad.empty());
  CHECK(lin.bias->grad.empty());
}

TEST_CASE("tensor reshape rejects a size change") {
  Tensor a({2, 3});
  CHECK_THROWS_AS(a.reshaped({4, 2}), ShapeMismatch);
  CHECK(a.reshaped({3, 2}).dims() == std::vector<int>{3, 2});
}

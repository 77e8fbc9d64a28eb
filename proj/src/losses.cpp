#include "anyglyph/losses.hpp"

#include <sstream>

namespace anyglyph {

FeatureExtractor::FeatureExtractor(std::vector<int> channels, std::uint64_t seed)
    : channels_(std::move(channels)), seed_(seed) {
  Rng rng(seed);
  int prev = 3;
  for (std::size_t l = 0; l < channels_.size(); ++l) {
    convs_.push_back(nn::Conv2d::make(store_, "phi.level" + std::to_string(l + 1), prev, channels_[l], 3, 1, rng, 1.5));
    prev = channels_[l];
  }
  for (Parameter* p : store_.all()) p->trainable = false;
}

std::string FeatureExtractor::id() const {
  std::ostringstream s;
  s << "phi-pyramid";
  for (int c : channels_) s << "-" << c;
  s << "-seed" << std::hex << seed_;
  return s.str();
}

std::vector<Var> FeatureExtractor::features(Tape& tape, const Var& x) const {
  if (x.dims().size() != 3 || x.dim(0) != 3) {
    throw ShapeMismatch("feature extractor expects a {3, H, W} image, got " + Tensor::shape_string(x.dims()));
  }
  const int down = 1 << (levels() - 1);
  if (x.dim(1) % down || x.dim(2) % down) {
    throw ShapeMismatch("image " + Tensor::shape_string(x.dims()) + " is not divisible by " + std::to_string(down));
  }
  std::vector<Var> out;
  Var h = ag::add_scalar(ag::scale(x, 2.0), -1.0);
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    if (l > 0) h = ag::avg_pool2x(h);
    h = ag::silu(convs_[l](tape, h));
    out.push_back(h);
  }
  return out;
}

Eigen::VectorXd FeatureExtractor::embed(const Image& x) const {
  Tape tape;
  const Tensor& f = features(tape, tape.constant(x)).back().value();
  return f.matrix().rowwise().mean();
}

Var diffusion_loss(const Var& eps, const Var& eps_hat) {
  require_same_shape(eps.value(), eps_hat.value(), "diffusion_loss");
  return ag::mse(eps_hat, eps);
}

double diffusion_loss(const Tensor& eps, const Tensor& eps_hat) {
  require_same_shape(eps, eps_hat, "diffusion_loss");
  return (eps.data() - eps_hat.data()).squaredNorm() / static_cast<double>(eps.size());
}

Var gram_matrix(const Var& features) {
  const int c = features.dim(0);
  const int n = static_cast<int>(features.value().size() / c);
  Var f = ag::reshape(features, {c, n});
  return ag::matmul(f, f, false, true);
}

Var content_loss(Tape& tape, const FeatureExtractor& phi, const Var& x_hat, const Var& lg) {
  require_same_shape(x_hat.value(), lg.value(), "content_loss");
  const auto a = phi.features(tape, x_hat);
  const auto b = phi.features(tape, lg);
  const std::size_t level = FeatureExtractor::kContentLevel - 1;
  return ag::mse(a[level], b[level]);
}

Var style_loss(Tape& tape, const FeatureExtractor& phi, const Var& x_hat, const Var& lr) {
  require_same_shape(x_hat.value(), lr.value(), "style_loss");
  const auto a = phi.features(tape, x_hat);
  const auto b = phi.features(tape, lr);
  Var total;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const double c = a[l].dim(0);
    const double n = static_cast<double>(a[l].value().size()) / c;
    Var d = gram_matrix(a[l]) - gram_matrix(b[l]);
    Var term = ag::scale(ag::sum(ag::square(d)), 1.0 / ((c * n) * (c * n)));
    total = total.valid() ? total + term : term;
  }
  return total;
}

Var feature_level_loss(Tape& tape, const FeatureExtractor& phi, const Var& x_hat, const Var& lg, const Var& lr,
                       double alpha_bar_t) {
  if (!(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0)) {
    throw InvalidCoefficient("alpha_bar_t must lie in (0, 1], got " + std::to_string(alpha_bar_t));
  }
  return ag::scale(content_loss(tape, phi, x_hat, lg) + style_loss(tape, phi, x_hat, lr), alpha_bar_t);
}

double content_loss(const FeatureExtractor& phi, const Image& x_hat, const Image& lg) {
  Tape tape;
  return content_loss(tape, phi, tape.constant(x_hat), tape.constant(lg)).value()[0];
}

double style_loss(const FeatureExtractor& phi, const Image& x_hat, const Image& lr) {
  Tape tape;
  return style_loss(tape, phi, tape.constant(x_hat), tape.constant(lr)).value()[0];
}

double feature_level_loss(const FeatureExtractor& phi, const Image& x_hat, const Image& lg, const Image& lr,
                          double alpha_bar_t) {
  Tape tape;
  return feature_level_loss(tape, phi, tape.constant(x_hat), tape.constant(lg), tape.constant(lr), alpha_bar_t)
      .value()[0];
}

Var total_loss(const Var& l_df, const Var& l_fl, double lambda) {
  if (lambda < 0.0) throw InvalidConfig("lambda must be >= 0");
  return l_df + ag::scale(l_fl, lambda);
}

double total_loss(double l_df, double l_fl, double lambda) {
  if (lambda < 0.0) throw InvalidConfig("lambda must be >= 0");
  return l_df + lambda * l_fl;
}

}  // namespace anyglyph

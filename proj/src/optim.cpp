#include "anyglyph/optim.hpp"

#include <cmath>

namespace anyglyph {

void Adam::step(const std::vector<Parameter*>& params) {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Parameter* p : params) {
    if (!p->trainable || p->grad.empty()) continue;
    Moments& s = moments_[p->name];
    if (s.m.empty()) {
      s.m = Tensor(p->value.dims());
      s.v = Tensor(p->value.dims());
    }
    auto g = p->grad.array();
    s.m.array() = config_.beta1 * s.m.array() + (1.0 - config_.beta1) * g;
    s.v.array() = config_.beta2 * s.v.array() + (1.0 - config_.beta2) * g.square();
    p->value.array() -= config_.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + config_.eps);
  }
}

double grad_global_norm(const std::vector<Parameter*>& params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (!p->grad.empty()) sq += p->grad.data().squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double norm = grad_global_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      if (!p->grad.empty()) p->grad.data() *= s;
    }
  }
  return norm;
}

}  // namespace anyglyph

#pragma once

#include <map>
#include <string>
#include <vector>

#include "anyglyph/autograd.hpp"

namespace anyglyph {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters that are frozen or have no gradient
/// this step are left untouched.
class Adam {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(const std::vector<Parameter*>& params);

  long steps() const { return steps_; }
  void set_steps(long n) { steps_ = n; }
  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

double grad_global_norm(const std::vector<Parameter*>& params);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

}  // namespace anyglyph

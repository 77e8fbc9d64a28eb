#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyglyph/nn.hpp"

namespace anyglyph {

enum class ScheduleKind { linear };

/// Variances beta_t and cumulative products alpha_bar_t for t = 1..T.
/// Storage is zero-based; use the accessors for 1-based steps.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  double beta_at(int t) const;
  double alpha_bar_at(int t) const;
  /// Throws StepOutOfRange unless 1 <= t <= T.
  void check_step(int t) const;
};

/// Throws InvalidRange unless 0 < beta_start <= beta_end < 1 and T >= 1.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind = ScheduleKind::linear);

/// Linear schedule whose endpoints are the T=1000 range [1e-4, 0.02] scaled by
/// 1000/T, so short schedules still end near pure noise.
NoiseSchedule scaled_linear_schedule(int T);

/// sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// (z_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t). With `literal`,
/// the divisor is alpha_bar_t itself (no square root).
Tensor coarse_denoise(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                      bool literal = false);
Var coarse_denoise(const Var& z_t, const Var& eps_hat, int t, const NoiseSchedule& sched, bool literal = false);

enum class InjectionMode { input_add, control_branch };

const char* to_string(InjectionMode m);
InjectionMode parse_injection_mode(const std::string& s);

struct PredictorConfig {
  int latent_channels = 12;
  int base_channels = 32;
  /// One entry per resolution level; level l has base_channels * mult[l] channels.
  std::vector<int> channel_mult = {1, 2};
  /// Levels that get cross-attention onto the condition (the middle block always does).
  std::vector<int> attention_levels = {1};
  int cond_dim = 64;
  int num_tokens = 16;
  InjectionMode injection = InjectionMode::input_add;
};

/// UNet noise predictor eps_hat = P(z_t, z_a, c, t) with one residual block per
/// level, cross-attention onto the {N_tok, d} condition, and either input
/// addition of z_a or a ControlNet-style side encoder for it.
class NoisePredictor {
 public:
  NoisePredictor() = default;
  NoisePredictor(ParamStore& store, const PredictorConfig& config, std::uint64_t seed);

  const PredictorConfig& config() const { return config_; }

  Var operator()(Tape& tape, const Var& z_t, const Var& z_a, const Var& c, int t) const;
  Tensor predict(const Tensor& z_t, const Tensor& z_a, const Tensor& c, int t) const;

 private:
  struct Level {
    nn::ResBlock block;
    bool has_attention = false;
    nn::CrossAttention attention;
    bool has_down = false;
    nn::Conv2d down;
  };
  struct UpLevel {
    nn::ResBlock block;
    bool has_attention = false;
    nn::CrossAttention attention;
    bool has_up = false;
    nn::Conv2d up;
  };
  struct Encoder {
    nn::Conv2d conv_in;
    std::vector<Level> levels;
    nn::ResBlock mid1;
    nn::CrossAttention mid_attention;
  };

  Encoder make_encoder(ParamStore& store, const std::string& prefix, Rng& rng) const;
  /// Runs conv_in, the down path and the first half of the middle block.
  /// Returns per-level skip features followed by the middle activation.
  std::vector<Var> run_encoder(Tape& tape, const Encoder& enc, const Var& x, const Var& temb, const Var& c) const;

  PredictorConfig config_;
  int time_dim_ = 0;
  nn::Linear time1_, time2_;
  Encoder main_;
  nn::ResBlock mid2_;
  std::vector<UpLevel> ups_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;

  Encoder control_;
  std::vector<nn::Conv2d> control_proj_;
};

}  // namespace anyglyph

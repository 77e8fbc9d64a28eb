#include "anyglyph/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace anyglyph {

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T) {
    throw StepOutOfRange("step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
}

double NoiseSchedule::beta_at(int t) const {
  check_step(t);
  return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  check_step(t);
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 1) throw InvalidRange("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidRange("schedule needs 0 < beta_start <= beta_end < 1, got [" + std::to_string(beta_start) + ", " +
                       std::to_string(beta_end) + "]");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(static_cast<std::size_t>(T));
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    double b = beta_start;
    switch (kind) {
      case ScheduleKind::linear:
        b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
        break;
    }
    s.beta[static_cast<std::size_t>(i)] = b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

NoiseSchedule scaled_linear_schedule(int T) {
  const double scale = 1000.0 / T;
  return make_schedule(T, 1e-4 * scale, std::min(0.02 * scale, 0.999));
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "forward_diffuse");
  const double ab = sched.alpha_bar_at(t);
  Tensor out(z0.dims());
  out.data() = std::sqrt(ab) * z0.data() + std::sqrt(1.0 - ab) * eps.data();
  return out;
}

Tensor coarse_denoise(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched, bool literal) {
  require_same_shape(z_t, eps_hat, "coarse_denoise");
  const double ab = sched.alpha_bar_at(t);
  Tensor out(z_t.dims());
  out.data() = (z_t.data() - std::sqrt(1.0 - ab) * eps_hat.data()) / (literal ? ab : std::sqrt(ab));
  return out;
}

Var coarse_denoise(const Var& z_t, const Var& eps_hat, int t, const NoiseSchedule& sched, bool literal) {
  require_same_shape(z_t.value(), eps_hat.value(), "coarse_denoise");
  const double ab = sched.alpha_bar_at(t);
  return ag::scale(z_t - ag::scale(eps_hat, std::sqrt(1.0 - ab)), 1.0 / (literal ? ab : std::sqrt(ab)));
}

const char* to_string(InjectionMode m) { return m == InjectionMode::control_branch ? "control_branch" : "input_add"; }

InjectionMode parse_injection_mode(const std::string& s) {
  if (s == "input_add") return InjectionMode::input_add;
  if (s == "control_branch") return InjectionMode::control_branch;
  throw InvalidConfig("injection_mode must be 'input_add' or 'control_branch', got '" + s + "'");
}

NoisePredictor::Encoder NoisePredictor::make_encoder(ParamStore& store, const std::string& prefix, Rng& rng) const {
  const auto& cfg = config_;
  Encoder e;
  const int c0 = cfg.base_channels;
  e.conv_in = nn::Conv2d::make(store, prefix + ".conv_in", cfg.latent_channels, c0, 3, 1, rng);
  int prev = c0;
  const int n = static_cast<int>(cfg.channel_mult.size());
  for (int l = 0; l < n; ++l) {
    const int ch = c0 * cfg.channel_mult[static_cast<std::size_t>(l)];
    const std::string name = prefix + ".down" + std::to_string(l);
    Level lv;
    lv.block = nn::ResBlock::make(store, name + ".block", prev, ch, time_dim_, rng);
    lv.has_attention = std::count(cfg.attention_levels.begin(), cfg.attention_levels.end(), l) > 0;
    if (lv.has_attention) lv.attention = nn::CrossAttention::make(store, name + ".attn", ch, cfg.cond_dim, rng);
    lv.has_down = l + 1 < n;
    if (lv.has_down) lv.down = nn::Conv2d::make(store, name + ".down", ch, ch, 3, 2, rng);
    e.levels.push_back(lv);
    prev = ch;
  }
  e.mid1 = nn::ResBlock::make(store, prefix + ".mid1", prev, prev, time_dim_, rng);
  e.mid_attention = nn::CrossAttention::make(store, prefix + ".mid_attn", prev, cfg.cond_dim, rng);
  return e;
}

NoisePredictor::NoisePredictor(ParamStore& store, const PredictorConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.channel_mult.empty()) throw InvalidConfig("channel_mult must list at least one level");
  Rng rng(mix_seed(seed, {0x0E7}));
  const int c0 = config.base_channels;
  time_dim_ = 4 * c0;
  time1_ = nn::Linear::make(store, "unet.time1", c0, time_dim_, rng);
  time2_ = nn::Linear::make(store, "unet.time2", time_dim_, time_dim_, rng);
  main_ = make_encoder(store, "unet.enc", rng);

  const int n = static_cast<int>(config.channel_mult.size());
  const int last = c0 * config.channel_mult.back();
  mid2_ = nn::ResBlock::make(store, "unet.mid2", last, last, time_dim_, rng);
  int prev = last;
  for (int l = n - 1; l >= 0; --l) {
    const int ch = c0 * config.channel_mult[static_cast<std::size_t>(l)];
    const std::string name = "unet.up" + std::to_string(l);
    UpLevel u;
    u.block = nn::ResBlock::make(store, name + ".block", prev + ch, ch, time_dim_, rng);
    u.has_attention = std::count(config.attention_levels.begin(), config.attention_levels.end(), l) > 0;
    if (u.has_attention) u.attention = nn::CrossAttention::make(store, name + ".attn", ch, config.cond_dim, rng);
    u.has_up = l > 0;
    if (u.has_up) {
      const int next = c0 * config.channel_mult[static_cast<std::size_t>(l - 1)];
      u.up = nn::Conv2d::make(store, name + ".up", ch, next, 3, 1, rng);
      prev = next;
    }
    ups_.push_back(u);
  }
  norm_out_ = nn::GroupNorm::make(store, "unet.norm_out", c0, 8);
  conv_out_ = nn::Conv2d::make(store, "unet.conv_out", c0, config.latent_channels, 3, 1, rng);

  if (config.injection == InjectionMode::control_branch) {
    control_ = make_encoder(store, "control.enc", rng);
    // The side encoder starts as an exact copy of the main encoder.
    for (Parameter* p : store.group("control.enc.")) {
      p->value = store.at("unet.enc." + p->name.substr(std::string("control.enc.").size())).value;
    }
    for (int l = 0; l < n; ++l) {
      const int ch = c0 * config.channel_mult[static_cast<std::size_t>(l)];
      control_proj_.push_back(nn::Conv2d::make(store, "control.proj" + std::to_string(l), ch, ch, 1, 1, rng, 0.0));
    }
    control_proj_.push_back(nn::Conv2d::make(store, "control.proj_mid", last, last, 1, 1, rng, 0.0));
  }
}

std::vector<Var> NoisePredictor::run_encoder(Tape& tape, const Encoder& enc, const Var& x, const Var& temb,
                                             const Var& c) const {
  std::vector<Var> outs;
  Var h = enc.conv_in(tape, x);
  for (const Level& lv : enc.levels) {
    h = lv.block(tape, h, temb);
    if (lv.has_attention) h = lv.attention(tape, h, c);
    outs.push_back(h);
    if (lv.has_down) h = lv.down(tape, h);
  }
  h = enc.mid1(tape, h, temb);
  outs.push_back(enc.mid_attention(tape, h, c));
  return outs;
}

Var NoisePredictor::operator()(Tape& tape, const Var& z_t, const Var& z_a, const Var& c, int t) const {
  const auto& cfg = config_;
  if (z_t.dims().size() != 3 || z_t.dim(0) != cfg.latent_channels) {
    throw ShapeMismatch("noise predictor expects a {" + std::to_string(cfg.latent_channels) + ", h, w} latent, got " +
                        Tensor::shape_string(z_t.dims()));
  }
  if (z_a.dims() != z_t.dims()) {
    throw ShapeMismatch("z_a " + Tensor::shape_string(z_a.dims()) + " must match z_t " +
                        Tensor::shape_string(z_t.dims()));
  }
  if (c.dims() != std::vector<int>{cfg.num_tokens, cfg.cond_dim}) {
    throw ShapeMismatch("condition must be {" + std::to_string(cfg.num_tokens) + ", " + std::to_string(cfg.cond_dim) +
                        "}, got " + Tensor::shape_string(c.dims()));
  }
  const int down = 1 << (cfg.channel_mult.size() - 1);
  if (z_t.dim(1) % down || z_t.dim(2) % down) {
    throw ShapeMismatch("latent " + Tensor::shape_string(z_t.dims()) + " is not divisible by " + std::to_string(down));
  }

  Var temb = time2_(tape, ag::silu(time1_(tape, tape.constant(nn::sinusoidal_embedding(t, cfg.base_channels)))));

  std::vector<Var> feats;
  if (cfg.injection == InjectionMode::input_add) {
    feats = run_encoder(tape, main_, z_t + z_a, temb, c);
  } else {
    feats = run_encoder(tape, main_, z_t, temb, c);
    const std::vector<Var> side = run_encoder(tape, control_, z_t + z_a, temb, c);
    for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = feats[i] + control_proj_[i](tape, side[i]);
  }

  Var h = mid2_(tape, feats.back(), temb);
  std::size_t skip = feats.size() - 1;
  for (const UpLevel& u : ups_) {
    h = u.block(tape, ag::concat(h, feats[--skip]), temb);
    if (u.has_attention) h = u.attention(tape, h, c);
    if (u.has_up) h = u.up(tape, ag::upsample_nearest2x(h));
  }
  return conv_out_(tape, ag::silu(norm_out_(tape, h)));
}

Tensor NoisePredictor::predict(const Tensor& z_t, const Tensor& z_a, const Tensor& c, int t) const {
  Tape tape;
  return (*this)(tape, tape.constant(z_t), tape.constant(z_a), tape.constant(c), t).value();
}

}  // namespace anyglyph

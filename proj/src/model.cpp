#include "anyglyph/model.hpp"

#include <cmath>

namespace anyglyph {

const char* to_string(Sampler s) { return s == Sampler::ddpm ? "ddpm" : "ddim"; }

Sampler parse_sampler(const std::string& s) {
  if (s == "ddim") return Sampler::ddim;
  if (s == "ddpm") return Sampler::ddpm;
  throw InvalidConfig("sampler must be 'ddim' or 'ddpm', got '" + s + "'");
}

std::vector<int> sampling_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw InvalidConfig("sampling steps must lie in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
  }
  std::vector<int> ts;
  for (int k = steps; k >= 1; --k) ts.push_back(static_cast<int>(static_cast<long>(k) * T / steps));
  return ts;
}

const FeatureExtractor& default_feature_extractor() {
  static const FeatureExtractor phi;
  return phi;
}

namespace {

FfemConfig ffem_config(const TrainConfig& c) {
  FfemConfig f;
  f.channels = c.ffem_channels;
  f.factor = c.codec_factor;
  f.latent_channels = c.latent_channels;
  f.zero_init_fusion = c.injection_mode == InjectionMode::control_branch;
  return f;
}

VtfemConfig vtfem_config(const TrainConfig& c) {
  VtfemConfig v;
  v.num_tokens = c.num_tokens;
  v.cond_dim = c.cond_dim;
  v.image_dim = c.cond_dim;
  v.use_ci = c.use_ci;
  v.use_ct = c.use_ct;
  v.freeze_text_encoder = c.freeze_text_encoder;
  return v;
}

PredictorConfig predictor_config(const TrainConfig& c) {
  PredictorConfig p;
  p.latent_channels = c.latent_channels;
  p.base_channels = c.base_channels;
  p.cond_dim = c.cond_dim;
  p.num_tokens = c.num_tokens;
  p.injection = c.injection_mode;
  return p;
}

}  // namespace

Model::Model(const TrainConfig& config, Vocab vocab) : config_(config) {
  config_.validate();
  schedule_ = config_.schedule();
  codec_ = LatentCodec(store_, config_.codec(), mix_seed(config_.seed, {1}));
  ffem_ = Ffem(store_, ffem_config(config_), mix_seed(config_.seed, {2}));
  vtfem_ = Vtfem(store_, vtfem_config(config_), std::move(vocab), mix_seed(config_.seed, {3}));
  unet_ = NoisePredictor(store_, predictor_config(config_), mix_seed(config_.seed, {4}));
  codec_ready_ = !codec_.has_parameters();
}

void Model::set_codec_ready(bool ready) {
  codec_ready_ = ready;
  if (ready) store_.set_trainable("codec.", false);
}

Image Model::sample(const Image& lg, const Image& lr, const std::string& prompt, const SampleOptions& options) const {
  if (!trained_) throw UntrainedModel("model has not been trained; load a checkpoint with at least one step");
  require_same_shape(lg, lr, "sample");
  const auto dims = codec_.latent_dims(lg.dim(1), lg.dim(2));
  const Tensor z_a = ffem_.encode(lg, lr);
  const Tensor c = vtfem_.condition(lr, prompt);

  Rng rng(mix_seed(options.seed, {0x5A3B1E}));
  Tensor z = randn(dims, rng);
  const auto ts = sampling_timesteps(schedule_.T, options.steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const double ab = schedule_.alpha_bar_at(t);
    const double ab_prev = i + 1 < ts.size() ? schedule_.alpha_bar_at(ts[i + 1]) : 1.0;
    Tensor eps = unet_.predict(z, z_a, c, t);
    Tensor x0 = coarse_denoise(z, eps, t, schedule_);
    if (options.clip_latent) {
      x0.array() = x0.array().min(1.0).max(-1.0);
      eps.data() = (z.data() - std::sqrt(ab) * x0.data()) / std::sqrt(1.0 - ab);
    }
    if (i + 1 == ts.size()) {
      z = x0;
      break;
    }
    double sigma = 0.0;
    if (options.sampler == Sampler::ddpm) {
      sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    Tensor next(dims);
    next.data() = std::sqrt(ab_prev) * x0.data() + dir * eps.data();
    if (sigma > 0.0) next.data() += sigma * randn(dims, rng).data();
    z = std::move(next);
  }
  return codec_.decode(z);
}

}  // namespace anyglyph

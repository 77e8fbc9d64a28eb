#pragma once

#include <cstdint>
#include <string>

#include "anyglyph/config.hpp"
#include "anyglyph/ffem.hpp"
#include "anyglyph/losses.hpp"
#include "anyglyph/vtfem.hpp"

namespace anyglyph {

enum class Sampler { ddim, ddpm };

const char* to_string(Sampler s);
Sampler parse_sampler(const std::string& s);

struct SampleOptions {
  int steps = 50;
  std::uint64_t seed = 0;
  Sampler sampler = Sampler::ddim;
  /// Clip the running clean-latent estimate to [-1, 1] (the fixed codec's range).
  bool clip_latent = false;
};

/// Reverse-process timesteps, largest first: t_k = floor(k T / S) for k = S..1.
std::vector<int> sampling_timesteps(int T, int steps);

/// Codec, FFEM, VTFEM and noise predictor sharing one parameter store.
class Model {
 public:
  Model(const TrainConfig& config, Vocab vocab);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const TrainConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  void set_schedule(NoiseSchedule s) { schedule_ = std::move(s); }

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const LatentCodec& codec() const { return codec_; }
  LatentCodec& codec() { return codec_; }
  const Ffem& ffem() const { return ffem_; }
  const Vtfem& vtfem() const { return vtfem_; }
  const NoisePredictor& predictor() const { return unet_; }
  const Vocab& vocab() const { return vtfem_.vocab(); }

  /// A learned codec must be trained (and is then frozen) before diffusion training.
  bool codec_ready() const { return codec_ready_; }
  void set_codec_ready(bool ready);
  /// Set once at least one diffusion step has been taken.
  bool trained() const { return trained_; }
  void set_trained(bool trained) { trained_ = trained; }

  /// Generates x0 for a glyph/reference/prompt triple. Throws UntrainedModel before training.
  Image sample(const Image& lg, const Image& lr, const std::string& prompt, const SampleOptions& options) const;

 private:
  TrainConfig config_;
  NoiseSchedule schedule_;
  ParamStore store_;
  LatentCodec codec_;
  Ffem ffem_;
  Vtfem vtfem_;
  NoisePredictor unet_;
  bool codec_ready_ = false;
  bool trained_ = false;
};

/// The perceptual pyramid shared by training and evaluation.
const FeatureExtractor& default_feature_extractor();

}  // namespace anyglyph

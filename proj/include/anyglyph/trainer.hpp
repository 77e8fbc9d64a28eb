#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "anyglyph/glyph_synth.hpp"
#include "anyglyph/model.hpp"
#include "anyglyph/optim.hpp"

namespace anyglyph {

/// One line of the loss trace.
struct StepRecord {
  long step = 0;
  double l_df = 0.0;
  /// NaN on steps where the feature-level loss was not evaluated.
  double l_fl = 0.0;
  double l_total = 0.0;
  double alpha_bar_mean = 0.0;
};

std::string format_trace_line(const StepRecord& r);
StepRecord parse_trace_line(const std::string& line);
std::vector<StepRecord> read_trace(const std::filesystem::path& file);

/// Builds the prompt vocabulary from every character the manifest mentions.
Vocab vocab_for(const synth::Manifest& m);

/// Mini-batch training of L_df + lambda * L_fl.
///
/// All randomness is derived from (seed, step), so a run resumed from a
/// checkpoint reproduces the uninterrupted run exactly.
class Trainer {
 public:
  /// Trains a learned codec first if it is not ready yet.
  Trainer(Model& model, std::vector<synth::GlyphSample> data);

  Model& model() { return model_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  const std::vector<synth::GlyphSample>& data() const { return data_; }

  long step_count() const { return step_; }
  void set_step_count(long step) { step_ = step; }
  long steps_per_epoch() const;
  /// config.steps when set, otherwise epochs * steps_per_epoch().
  long total_steps() const;

  /// Learning rate applied at `step`.
  double learning_rate(long step) const;

  /// Sample indices of the mini-batch used at `step`.
  std::vector<std::size_t> batch_indices(long step) const;

  /// Accumulates the batch gradient for `step` into the parameters without
  /// updating them. Throws NonFiniteLoss.
  StepRecord compute_gradients(long step);
  /// compute_gradients, clipping and one Adam update; advances the step counter.
  StepRecord step();
  /// Runs until `total_steps()` or `max_steps` more steps, whichever comes first.
  std::vector<StepRecord> run(long max_steps = -1, const std::function<void(const StepRecord&)>& on_step = {});

 private:
  Model& model_;
  std::vector<synth::GlyphSample> data_;
  std::vector<Tensor> latents_;
  Adam adam_;
  long step_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume: model, optimizer moments and step counter.
struct Checkpoint {
  std::unique_ptr<Model> model;
  Adam optimizer;
  long step = 0;
};

void save_checkpoint(const std::filesystem::path& file, const Model& model, const Adam& optimizer, long step);
/// Throws CorruptCheckpoint (bad magic, truncation, checksum, inconsistent
/// parameters) or VersionMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& file);
/// Restores optimizer state and step counter into a trainer built on the checkpoint's model.
void resume(Trainer& trainer, const Checkpoint& ckpt);

}  // namespace anyglyph

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "anyglyph/metrics.hpp"
#include "anyglyph/trainer.hpp"

namespace anyglyph::repro {

using Log = std::function<void(const std::string&)>;

struct DatasetRecipe {
  std::string preset = "latin26";
  int styles = 1;
  /// Keep only the first `glyphs` characters of the preset (0 keeps all).
  int glyphs = 0;
  double split = 1.0;
  std::uint64_t seed = 0;
  int canvas = 32;
};

/// A dataset, a training config, and how to sample and judge the result.
///
/// Text form: `key = value` lines with `dataset.`, `train.`, `sample.`,
/// `eval.` and `check.` prefixes, plus `name`.
struct ExperimentRecipe {
  std::string name = "experiment";
  DatasetRecipe dataset;
  TrainConfig train;
  SampleOptions sample;
  EvalConfig eval;
  /// Overfit probe thresholds. The loss ratio compares the mean of the last
  /// `final_window` steps with the mean of the first `initial_window` steps.
  double max_loss_ratio = 0.1;
  double max_sample_l1 = 0.05;
  int initial_window = 20;
  int final_window = 100;

  std::string to_text() const;
  static ExperimentRecipe parse(const std::string& text);
  static ExperimentRecipe load(const std::filesystem::path& file);
  void set(const std::string& key, const std::string& value);
};

/// Builds the recipe's dataset under `dir` and returns it.
synth::Dataset build_recipe_dataset(const DatasetRecipe& recipe, const std::filesystem::path& dir);

/// Samples one image per record of `gt` (using its glyph, reference and prompt),
/// writes them under `out_dir` and returns their manifest.
synth::Manifest generate_set(const Model& model, const synth::Manifest& gt, const std::filesystem::path& out_dir,
                             const SampleOptions& options, const Log& log = {});

struct RunResult {
  TrainConfig config;
  std::vector<StepRecord> trace;
  EvalReport report;
};

/// Trains on the train split with `config`, then generates and evaluates the test split.
/// Writes config.txt, loss_trace.tsv, model.ckpt, gen/ and report.txt under `dir`.
RunResult train_and_evaluate(const TrainConfig& config, const synth::Dataset& data, const ExperimentRecipe& recipe,
                             const std::filesystem::path& dir, const Log& log = {});

/// One row of the component ablation: config assignments applied on top of the recipe.
struct AblationRow {
  std::string name;
  std::vector<std::pair<std::string, std::string>> delta;
  bool reference = false;
};

/// baseline, +c_i, +c_t, +c_i+c_t, then all components with lambda 0.5, 1.0 (reference) and 1.5.
std::vector<AblationRow> ablation_rows();
TrainConfig apply_row(const TrainConfig& base, const AblationRow& row);

struct AblationResult {
  AblationRow row;
  std::uint64_t seed = 0;
  EvalReport report;
};

/// Runs every row for every seed under `workdir/<row>/seed<k>/`, rows in order.
std::vector<AblationResult> run_ablation_sweep(const ExperimentRecipe& recipe, const std::vector<std::uint64_t>& seeds,
                                               const std::filesystem::path& workdir, const Log& log = {});

/// Text table with one line per row; metrics are means over seeds.
std::string summary_table(const std::vector<AblationResult>& results);
/// Re-reads the reports a sweep stored under `workdir`.
std::vector<AblationResult> load_ablation_results(const std::vector<std::uint64_t>& seeds,
                                                  const std::filesystem::path& workdir);

struct ProbeOptions {
  /// Flip a byte of the checkpoint before sampling from it (fault injection).
  bool corrupt_checkpoint = false;
};

struct OverfitReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double sample_l1 = 0.0;
  double max_loss_ratio = 0.0;
  double max_sample_l1 = 0.0;
  std::vector<StepRecord> trace;

  double loss_ratio() const { return final_loss / initial_loss; }
  bool loss_ok() const { return loss_ratio() < max_loss_ratio; }
  bool sample_ok() const { return sample_l1 < max_sample_l1; }
  bool passed() const { return loss_ok() && sample_ok(); }
  std::string to_text() const;
};

/// Trains the recipe on its whole dataset, reloads the checkpoint, and samples
/// every training pair. Throws CorruptCheckpoint when the reload fails.
OverfitReport run_overfit_probe(const ExperimentRecipe& recipe, std::uint64_t seed,
                                const std::filesystem::path& workdir, const ProbeOptions& options = {},
                                const Log& log = {});

}  // namespace anyglyph::repro

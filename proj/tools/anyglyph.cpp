// Command-line entry point: dataset synthesis, training, sampling, evaluation
// and the scripted experiments.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "anyglyph/repro.hpp"

namespace fs = std::filesystem;
using namespace anyglyph;

namespace {

/// Bad user input detected after CLI parsing; exits with the usage code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IOFailure("cannot write " + file.string());
  out << text;
}

/// Resolved options of a run, written before any work starts.
class Snapshot {
 public:
  explicit Snapshot(std::string command) { text_ = "command = " + command + "\n"; }
  template <class T>
  Snapshot& add(const std::string& key, const T& value) {
    std::ostringstream s;
    s << value;
    text_ += key + " = " + s.str() + "\n";
    return *this;
  }
  void write(const fs::path& dir) const { write_text(dir / "run.txt", text_); }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(list);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  return seeds;
}

/// "A..Z" is an inclusive range, anything else is the literal list of characters.
std::vector<synth::Codepoint> parse_chars(const std::string& spec) {
  const auto cps = synth::utf8_decode(spec);
  if (cps.size() == 4 && cps[1] == U'.' && cps[2] == U'.') {
    if (cps[0] > cps[3]) throw UsageError("empty character range " + spec);
    std::vector<synth::Codepoint> out;
    for (synth::Codepoint c = cps[0]; c <= cps[3]; ++c) out.push_back(c);
    return out;
  }
  if (cps.empty()) throw UsageError("no characters given");
  return cps;
}

void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides) {
  try {
    for (const auto& o : overrides) config.apply_override(o);
    config.validate();
  } catch (const InvalidConfig& e) {
    throw UsageError(e.what());
  }
}

repro::ExperimentRecipe load_recipe(const std::string& file, const std::vector<std::string>& overrides) {
  repro::ExperimentRecipe recipe;
  try {
    recipe = repro::ExperimentRecipe::load(file);
  } catch (const InvalidConfig& e) {
    throw UsageError(file + ": " + e.what());
  }
  apply_overrides(recipe.train, overrides);
  return recipe;
}

synth::Manifest load_manifest_arg(const std::string& arg) {
  fs::path p = arg;
  if (fs::is_directory(p)) p /= "manifest.tsv";
  return synth::read_manifest(p);
}

Vocab vocab_from_data(const synth::Manifest& data) {
  synth::Manifest all = data;
  const fs::path full = data.root / "manifest.tsv";
  if (fs::exists(full)) {
    const auto extra = synth::read_manifest(full);
    all.records.insert(all.records.end(), extra.records.begin(), extra.records.end());
  }
  return vocab_for(all);
}

Image glyph_image(synth::Codepoint c, const std::string& font, int size) {
  return resize_nearest(synth::render_glyph({c, font, std::max(size, 64)}), size);
}

/// Draws a `width` px frame in (r, g, b) inside the image border.
void draw_border(Image& img, int width, double r, double g, double b) {
  const int h = img.dim(1), w = img.dim(2);
  const double rgb[3] = {r, g, b};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y < width || x < width || y >= h - width || x >= w - width)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
}

void paste(Image& canvas, const Image& cell, int top, int left) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < cell.dim(1); ++y)
      for (int x = 0; x < cell.dim(2); ++x) canvas.at(c, top + y, left + x) = cell.at(c, y, x);
}

// --- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string charset = "latin26";
  int styles = 1;
  std::uint64_t seed = 0;
  double split = 1.0;
  int canvas = 128;
  std::string font = synth::kDefaultFont;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  Snapshot snap("synth-data");
  snap.add("charset", a.charset).add("styles", a.styles).add("seed", a.seed).add("split", a.split);
  snap.add("canvas", a.canvas).add("font", a.font).add("out", a.out);
  snap.write(a.out);
  synth::DatasetOptions o;
  o.charset = synth::load_charset(a.charset);
  o.n_styles = a.styles;
  o.seed = a.seed;
  o.split = a.split;
  o.canvas = a.canvas;
  o.font_id = a.font;
  o.out_dir = a.out;
  const auto ds = synth::build_dataset(o);
  const auto check = synth::validate_manifest(ds.all);
  std::cout << "samples: " << ds.all.records.size() << " (train " << ds.train.records.size() << ", test "
            << ds.test.records.size() << ")\n";
  std::cout << "valid: " << check.valid_images << "/" << check.samples << "\n";
  for (const auto& p : check.problems) std::cerr << p << "\n";
  return check.ok() ? kExitOk : kExitRuntime;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string data;
  std::string out;
  std::string resume;
  long max_steps = -1;
};

int run_train(const TrainArgs& a) {
  fs::create_directories(a.out);
  const fs::path trace_file = fs::path(a.out) / "loss_trace.tsv";
  std::unique_ptr<Model> owned;
  Checkpoint ck;
  TrainConfig config;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    config = ck.model->config();
    if (!a.overrides.empty() || !a.config.empty()) throw UsageError("--resume uses the checkpoint's config");
  } else {
    if (!a.config.empty()) {
      try {
        config = TrainConfig::load(a.config);
      } catch (const InvalidConfig& e) {
        throw UsageError(a.config + ": " + e.what());
      }
    }
    apply_overrides(config, a.overrides);
  }
  config.save(fs::path(a.out) / "config.txt");

  const synth::Manifest data = load_manifest_arg(a.data);
  if (ck.model) {
    owned = std::move(ck.model);
  } else {
    owned = std::make_unique<Model>(config, vocab_from_data(data));
  }
  Trainer trainer(*owned, synth::load_samples(data, config.image_size));
  if (!a.resume.empty()) {
    trainer.optimizer() = ck.optimizer;
    trainer.set_step_count(ck.step);
  }

  std::ofstream trace(trace_file, a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (a.resume.empty()) trace << "# step\tL_df\tL_fl\tL_total\talpha_bar_mean\n";
  const long total = trainer.total_steps();
  const long every = std::max(1L, total / 20);
  const fs::path out = a.out;
  trainer.run(a.max_steps, [&](const StepRecord& r) {
    trace << format_trace_line(r) << "\n";
    const long done = r.step + 1;
    if (done % every == 0 || done == total) {
      std::ostringstream s;
      s << "step " << done << "/" << total << " L_total " << r.l_total;
      log_line(s.str());
      trace.flush();
    }
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06ld.ckpt", done);
      save_checkpoint(out / name, *owned, trainer.optimizer(), trainer.step_count());
    }
  });
  save_checkpoint(out / "model.ckpt", *owned, trainer.optimizer(), trainer.step_count());
  std::cout << "checkpoint: " << (out / "model.ckpt").string() << " (step " << trainer.step_count() << ")\n";
  return kExitOk;
}

struct SampleArgs {
  std::string ckpt;
  std::string chars;
  std::string ref;
  std::string style = "ref";
  std::string font = synth::kDefaultFont;
  int steps = 50;
  std::uint64_t seed = 0;
  std::string sampler = "ddim";
  bool clip = false;
  std::string out;
};

SampleOptions sample_options(int steps, std::uint64_t seed, const std::string& sampler, bool clip) {
  SampleOptions o;
  o.steps = steps;
  o.seed = seed;
  o.clip_latent = clip;
  try {
    o.sampler = parse_sampler(sampler);
  } catch (const InvalidConfig& e) {
    throw UsageError(e.what());
  }
  return o;
}

int run_sample(const SampleArgs& a) {
  const auto chars = parse_chars(a.chars);
  const SampleOptions opt = sample_options(a.steps, a.seed, a.sampler, a.clip);
  Snapshot snap("sample");
  snap.add("ckpt", a.ckpt).add("chars", a.chars).add("ref", a.ref).add("style", a.style).add("font", a.font);
  snap.add("steps", a.steps).add("seed", a.seed).add("sampler", a.sampler).add("clip_latent", a.clip);
  snap.write(a.out);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const int size = ck.model->config().image_size;
  const Image ref = resize_nearest(read_png(a.ref), size);
  for (synth::Codepoint c : chars) {
    const Image lg = glyph_image(c, a.font, size);
    const Image img = ck.model->sample(lg, ref, synth::make_prompt(c, a.style), opt);
    const fs::path file = fs::path(a.out) / (synth::codepoint_hex(c) + ".png");
    write_png(file, img);
    std::cout << file.string() << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string gen;
  std::string gt;
  std::string out;
  int window = 11;
  int size = 0;
};

int run_eval(const EvalArgs& a) {
  Snapshot snap("eval");
  snap.add("gen", a.gen).add("gt", a.gt).add("ssim_window", a.window).add("image_size", a.size);
  snap.write(a.out);
  EvalConfig cfg;
  cfg.ssim_window = a.window;
  cfg.image_size = a.size;
  const auto report = evaluate_pairs(load_manifest_arg(a.gen), load_manifest_arg(a.gt), cfg,
                                     default_feature_extractor());
  std::string text = report.to_text() + "\n# run\n" + snap.text();
  write_text(fs::path(a.out) / "report.txt", text);
  std::cout << text;
  return kExitOk;
}

struct GridArgs {
  std::vector<std::string> ckpts;
  std::string chars;
  std::string ref;
  std::string style = "ref";
  std::string font = synth::kDefaultFont;
  int steps = 50;
  std::uint64_t seed = 0;
  std::string sampler = "ddim";
  int cell = 64;
  std::string out;
};

int run_grid(const GridArgs& a) {
  if (a.ckpts.empty()) throw UsageError("grid needs at least one --ckpt");
  const auto chars = parse_chars(a.chars);
  const SampleOptions opt = sample_options(a.steps, a.seed, a.sampler, false);
  const fs::path out = a.out;
  Snapshot snap("grid");
  snap.add("ckpts", join(a.ckpts, ",")).add("chars", a.chars).add("ref", a.ref).add("style", a.style);
  snap.add("steps", a.steps).add("seed", a.seed).add("sampler", a.sampler).add("cell", a.cell);
  snap.write(out.has_parent_path() ? out.parent_path() : fs::path("."));

  const int pad = 2, step = a.cell + pad;
  const int cols = static_cast<int>(chars.size()) + 1, rows = static_cast<int>(a.ckpts.size()) + 1;
  Image grid = make_image(rows * step + pad, cols * step + pad, 1.0, 1.0, 1.0);
  const Image ref_png = read_png(a.ref);
  // header row: reference (red frame) followed by the source glyphs
  Image ref_cell = resize_nearest(ref_png, a.cell);
  draw_border(ref_cell, std::max(2, a.cell / 20), 1.0, 0.0, 0.0);
  paste(grid, ref_cell, pad, pad);
  for (std::size_t j = 0; j < chars.size(); ++j) {
    paste(grid, glyph_image(chars[j], a.font, a.cell), pad, pad + static_cast<int>(j + 1) * step);
  }
  for (std::size_t i = 0; i < a.ckpts.size(); ++i) {
    const Checkpoint ck = load_checkpoint(a.ckpts[i]);
    const int size = ck.model->config().image_size;
    const Image ref = resize_nearest(ref_png, size);
    const int top = pad + static_cast<int>(i + 1) * step;
    for (std::size_t j = 0; j < chars.size(); ++j) {
      const Image img = ck.model->sample(glyph_image(chars[j], a.font, size), ref,
                                         synth::make_prompt(chars[j], a.style), opt);
      paste(grid, resize_nearest(img, a.cell), top, pad + static_cast<int>(j + 1) * step);
    }
  }
  write_png(out, grid);
  std::cout << out.string() << " (" << a.ckpts.size() << " rows x " << chars.size() << " columns)\n";
  return kExitOk;
}

struct RecipeArgs {
  std::string recipe;
  std::vector<std::string> overrides;
  std::string seeds = "0";
  std::uint64_t seed = 0;
  std::string out;
  bool summary_only = false;
  bool corrupt = false;
};

int run_ablate(const RecipeArgs& a) {
  const auto seeds = parse_seeds(a.seeds);
  if (a.summary_only) {
    std::cout << repro::summary_table(repro::load_ablation_results(seeds, a.out));
    return kExitOk;
  }
  const auto recipe = load_recipe(a.recipe, a.overrides);
  Snapshot snap("ablate");
  snap.add("recipe", a.recipe).add("seeds", a.seeds).add("overrides", join(a.overrides, " "));
  snap.write(a.out);
  const auto results = repro::run_ablation_sweep(recipe, seeds, a.out, log_line);
  std::cout << repro::summary_table(results);
  return kExitOk;
}

int run_overfit(const RecipeArgs& a) {
  const auto recipe = load_recipe(a.recipe, a.overrides);
  Snapshot snap("overfit");
  snap.add("recipe", a.recipe).add("seed", a.seed).add("overrides", join(a.overrides, " "));
  snap.write(a.out);
  repro::ProbeOptions opt;
  opt.corrupt_checkpoint = a.corrupt;
  const auto report = repro::run_overfit_probe(recipe, a.seed, a.out, opt, log_line);
  std::cout << report.to_text();
  return report.passed() ? kExitOk : kExitRuntime;
}

int run_experiment(const RecipeArgs& a) {
  const auto recipe = load_recipe(a.recipe, a.overrides);
  const auto seeds = parse_seeds(a.seeds);
  Snapshot snap("run");
  snap.add("recipe", a.recipe).add("seeds", a.seeds).add("overrides", join(a.overrides, " "));
  snap.write(a.out);
  const auto data = repro::build_recipe_dataset(recipe.dataset, fs::path(a.out) / "data");
  double l1 = 0, ssim = 0, psnr = 0, fid = 0;
  for (std::uint64_t seed : seeds) {
    TrainConfig config = recipe.train;
    config.seed = seed;
    log_line("seed " + std::to_string(seed));
    const auto r = repro::train_and_evaluate(config, data, recipe, fs::path(a.out) / ("seed" + std::to_string(seed)),
                                             log_line);
    l1 += r.report.l1;
    ssim += r.report.ssim;
    psnr += r.report.psnr;
    fid += r.report.fid;
  }
  const double n = static_cast<double>(seeds.size());
  std::ostringstream s;
  s << "recipe\tL1\tSSIM\tPSNR\tFID\tseeds\n" << recipe.name << '\t' << l1 / n << '\t' << ssim / n << '\t' << psnr / n
    << '\t';
  if (std::isnan(fid)) s << "n/a";
  else s << fid / n;
  s << '\t' << seeds.size() << "\n";
  write_text(fs::path(a.out) / "summary.txt", s.str());
  std::cout << s.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Glyph synthesis, training, sampling and evaluation for one-shot artistic glyph generation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth-data", "Render a styled glyph dataset and its manifests");
  synth_cmd->add_option("--preset,--charset", synth_args.charset, "Preset name or UTF-8 charset file")
      ->capture_default_str();
  synth_cmd->add_option("--styles", synth_args.styles, "Number of styles")->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth_args.seed, "Global seed")->capture_default_str();
  synth_cmd->add_option("--split", synth_args.split, "Fraction of styles used for training")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();
  synth_cmd->add_option("--canvas", synth_args.canvas, "Image size in pixels")->capture_default_str();
  synth_cmd->add_option("--font", synth_args.font, "Font id")->capture_default_str();
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a manifest");
  train_cmd->add_option("--config", train_args.config, "Config file (key = value lines)");
  train_cmd->add_option("--override", train_args.overrides, "key=value assignments")->expected(1, -1);
  train_cmd->add_option("--data", train_args.data, "Training manifest or dataset directory")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--resume", train_args.resume, "Continue from a checkpoint");
  train_cmd->add_option("--max-steps", train_args.max_steps, "Stop after this many steps");

  SampleArgs sample_args;
  auto* sample_cmd = app.add_subcommand("sample", "Generate glyphs in the style of a reference image");
  sample_cmd->add_option("--ckpt", sample_args.ckpt, "Checkpoint")->required();
  auto* char_opt = sample_cmd->add_option("--char", sample_args.chars, "One character");
  sample_cmd->add_option("--chars", sample_args.chars, "Characters, or a range such as A..Z")->excludes(char_opt);
  sample_cmd->add_option("--ref", sample_args.ref, "Reference image (PNG)")->required();
  sample_cmd->add_option("--style", sample_args.style, "Style name used in the prompt")->capture_default_str();
  sample_cmd->add_option("--font", sample_args.font, "Font for the source glyphs")->capture_default_str();
  sample_cmd->add_option("--steps", sample_args.steps, "Sampling steps")->capture_default_str();
  sample_cmd->add_option("--seed", sample_args.seed, "Sampling seed")->capture_default_str();
  sample_cmd->add_option("--sampler", sample_args.sampler, "ddim or ddpm")->capture_default_str();
  sample_cmd->add_flag("--clip-latent", sample_args.clip, "Clip the clean-latent estimate to [-1, 1]");
  sample_cmd->add_option("--out", sample_args.out, "Output directory")->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Compare generated images with ground truth");
  eval_cmd->add_option("--gen", eval_args.gen, "Generated manifest or directory")->required();
  eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth manifest or directory")->required();
  eval_cmd->add_option("--out", eval_args.out, "Output directory")->required();
  eval_cmd->add_option("--ssim-window", eval_args.window, "SSIM window size")->capture_default_str();
  eval_cmd->add_option("--image-size", eval_args.size, "Compare at this size (0 = as stored)")
      ->capture_default_str();

  GridArgs grid_args;
  auto* grid_cmd = app.add_subcommand("grid", "Render a comparison grid: one row per checkpoint");
  grid_cmd->add_option("--ckpt", grid_args.ckpts, "Checkpoints, one row each")->expected(0, -1);
  grid_cmd->add_option("--chars", grid_args.chars, "Characters, or a range such as A..Z")->required();
  grid_cmd->add_option("--ref", grid_args.ref, "Reference image (PNG)")->required();
  grid_cmd->add_option("--style", grid_args.style, "Style name used in the prompt")->capture_default_str();
  grid_cmd->add_option("--font", grid_args.font, "Font for the source glyphs")->capture_default_str();
  grid_cmd->add_option("--steps", grid_args.steps, "Sampling steps")->capture_default_str();
  grid_cmd->add_option("--seed", grid_args.seed, "Sampling seed")->capture_default_str();
  grid_cmd->add_option("--sampler", grid_args.sampler, "ddim or ddpm")->capture_default_str();
  grid_cmd->add_option("--cell", grid_args.cell, "Cell size in pixels")->capture_default_str();
  grid_cmd->add_option("--out", grid_args.out, "Output PNG")->required();

  RecipeArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the seven-row component ablation");
  ablate_cmd->add_option("--recipe", ablate_args.recipe, "Recipe file");
  ablate_cmd->add_option("--override", ablate_args.overrides, "train key=value assignments")->expected(1, -1);
  ablate_cmd->add_option("--seeds", ablate_args.seeds, "Comma-separated seeds")->capture_default_str();
  ablate_cmd->add_option("--out", ablate_args.out, "Output directory")->required();
  ablate_cmd->add_flag("--summary-only", ablate_args.summary_only, "Rebuild the summary from stored reports");

  RecipeArgs overfit_args;
  auto* overfit_cmd = app.add_subcommand("overfit", "Overfit probe on a tiny dataset");
  overfit_cmd->add_option("--recipe", overfit_args.recipe, "Recipe file")->required();
  overfit_cmd->add_option("--override", overfit_args.overrides, "train key=value assignments")->expected(1, -1);
  overfit_cmd->add_option("--seed", overfit_args.seed, "Training seed")->capture_default_str();
  overfit_cmd->add_option("--out", overfit_args.out, "Output directory")->required();
  overfit_cmd->add_flag("--corrupt-checkpoint", overfit_args.corrupt, "Damage the checkpoint before sampling");

  RecipeArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Train and evaluate one recipe");
  run_cmd->add_option("--recipe", run_args.recipe, "Recipe file")->required();
  run_cmd->add_option("--override", run_args.overrides, "train key=value assignments")->expected(1, -1);
  run_cmd->add_option("--seeds", run_args.seeds, "Comma-separated seeds")->capture_default_str();
  run_cmd->add_option("--out", run_args.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth_args);
    if (*train_cmd) return run_train(train_args);
    if (*sample_cmd) {
      if (sample_args.chars.empty()) throw UsageError("sample needs --char or --chars");
      return run_sample(sample_args);
    }
    if (*eval_cmd) return run_eval(eval_args);
    if (*grid_cmd) return run_grid(grid_args);
    if (*ablate_cmd) {
      if (ablate_args.recipe.empty() && !ablate_args.summary_only) throw UsageError("ablate needs --recipe");
      return run_ablate(ablate_args);
    }
    if (*overfit_cmd) return run_overfit(overfit_args);
    if (*run_cmd) return run_experiment(run_args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

#include "anyglyph/repro.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace anyglyph::repro {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidConfig("bad value '" + v + "' for " + key);
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidConfig("bad value '" + v + "' for " + key);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto d = std::stoull(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidConfig("bad value '" + v + "' for " + key);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidConfig("bad boolean '" + v + "' for " + key);
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IOFailure("cannot write " + file.string());
  out << text;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IOFailure("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

}  // namespace

void ExperimentRecipe::set(const std::string& key, const std::string& value) {
  if (key == "name") name = value;
  else if (key == "dataset.preset") dataset.preset = value;
  else if (key == "dataset.styles") dataset.styles = static_cast<int>(to_long(key, value));
  else if (key == "dataset.glyphs") dataset.glyphs = static_cast<int>(to_long(key, value));
  else if (key == "dataset.split") dataset.split = to_double(key, value);
  else if (key == "dataset.seed") dataset.seed = to_u64(key, value);
  else if (key == "dataset.canvas") dataset.canvas = static_cast<int>(to_long(key, value));
  else if (key.rfind("train.", 0) == 0) train.set(key.substr(6), value);
  else if (key == "sample.steps") sample.steps = static_cast<int>(to_long(key, value));
  else if (key == "sample.seed") sample.seed = to_u64(key, value);
  else if (key == "sample.sampler") sample.sampler = parse_sampler(value);
  else if (key == "sample.clip_latent") sample.clip_latent = to_bool(key, value);
  else if (key == "eval.ssim_window") eval.ssim_window = static_cast<int>(to_long(key, value));
  else if (key == "eval.image_size") eval.image_size = static_cast<int>(to_long(key, value));
  else if (key == "check.max_loss_ratio") max_loss_ratio = to_double(key, value);
  else if (key == "check.max_sample_l1") max_sample_l1 = to_double(key, value);
  else if (key == "check.initial_window") initial_window = static_cast<int>(to_long(key, value));
  else if (key == "check.final_window") final_window = static_cast<int>(to_long(key, value));
  else throw InvalidConfig("unknown recipe key '" + key + "'");
}

std::string ExperimentRecipe::to_text() const {
  std::ostringstream s;
  s << "name = " << name << "\n";
  s << "dataset.preset = " << dataset.preset << "\n";
  s << "dataset.styles = " << dataset.styles << "\n";
  s << "dataset.glyphs = " << dataset.glyphs << "\n";
  s << "dataset.split = " << num(dataset.split) << "\n";
  s << "dataset.seed = " << dataset.seed << "\n";
  s << "dataset.canvas = " << dataset.canvas << "\n";
  for (const auto& k : TrainConfig::keys()) s << "train." << k << " = " << train.get(k) << "\n";
  s << "sample.steps = " << sample.steps << "\n";
  s << "sample.seed = " << sample.seed << "\n";
  s << "sample.sampler = " << to_string(sample.sampler) << "\n";
  s << "sample.clip_latent = " << (sample.clip_latent ? "true" : "false") << "\n";
  s << "eval.ssim_window = " << eval.ssim_window << "\n";
  s << "eval.image_size = " << eval.image_size << "\n";
  s << "check.max_loss_ratio = " << num(max_loss_ratio) << "\n";
  s << "check.max_sample_l1 = " << num(max_sample_l1) << "\n";
  s << "check.initial_window = " << initial_window << "\n";
  s << "check.final_window = " << final_window << "\n";
  return s.str();
}

ExperimentRecipe ExperimentRecipe::parse(const std::string& text) {
  ExperimentRecipe r;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("recipe line " + std::to_string(line_no) + " has no '='");
    r.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  r.train.validate();
  return r;
}

ExperimentRecipe ExperimentRecipe::load(const fs::path& file) { return parse(read_text(file)); }

synth::Dataset build_recipe_dataset(const DatasetRecipe& recipe, const fs::path& dir) {
  synth::DatasetOptions o;
  o.charset = synth::load_charset(recipe.preset);
  if (recipe.glyphs > 0 && static_cast<std::size_t>(recipe.glyphs) < o.charset.size()) {
    o.charset.resize(static_cast<std::size_t>(recipe.glyphs));
  }
  o.n_styles = recipe.styles;
  o.seed = recipe.seed;
  o.split = recipe.split;
  o.canvas = recipe.canvas;
  o.out_dir = dir;
  return synth::build_dataset(o);
}

synth::Manifest generate_set(const Model& model, const synth::Manifest& gt, const fs::path& out_dir,
                             const SampleOptions& options, const Log& log) {
  const int size = model.config().image_size;
  synth::Manifest gen;
  gen.root = out_dir;
  std::size_t done = 0;
  for (const auto& r : gt.records) {
    const Image lg = resize_nearest(read_png(gt.resolve(r.path_lg)), size);
    const Image lr = resize_nearest(read_png(gt.resolve(r.path_lr)), size);
    synth::ManifestRecord out = r;
    out.path_x0 = "images/" + r.id + ".png";
    out.path_lg = fs::absolute(gt.resolve(r.path_lg)).string();
    out.path_lr = fs::absolute(gt.resolve(r.path_lr)).string();
    write_png(out_dir / out.path_x0, model.sample(lg, lr, r.prompt, options));
    gen.records.push_back(out);
    if (++done % 10 == 0) say(log, "generated " + std::to_string(done) + "/" + std::to_string(gt.records.size()));
  }
  synth::write_manifest(out_dir / "manifest.tsv", gen.records);
  return gen;
}

namespace {

void write_trace(const fs::path& file, const std::vector<StepRecord>& trace) {
  std::string text = "# step\tL_df\tL_fl\tL_total\talpha_bar_mean\n";
  for (const auto& r : trace) text += format_trace_line(r) + "\n";
  write_text(file, text);
}

/// Trains to completion, then writes the loss trace and a checkpoint into `dir`.
std::vector<StepRecord> train_logged(Model& model, const std::vector<synth::GlyphSample>& samples,
                                     const fs::path& dir, const Log& log) {
  Trainer trainer(model, samples);
  const long total = trainer.total_steps();
  const long every = std::max(1L, total / 10);
  auto trace = trainer.run(-1, [&](const StepRecord& r) {
    if ((r.step + 1) % every == 0) {
      std::ostringstream s;
      s << "step " << r.step + 1 << "/" << total << " loss " << std::setprecision(4) << r.l_total;
      say(log, s.str());
    }
  });
  write_trace(dir / "loss_trace.tsv", trace);
  save_checkpoint(dir / "model.ckpt", model, trainer.optimizer(), trainer.step_count());
  return trace;
}

}  // namespace

RunResult train_and_evaluate(const TrainConfig& config, const synth::Dataset& data, const ExperimentRecipe& recipe,
                             const fs::path& dir, const Log& log) {
  config.validate();
  fs::create_directories(dir);
  config.save(dir / "config.txt");
  RunResult result;
  result.config = config;
  Model model(config, vocab_for(data.all));
  result.trace = train_logged(model, synth::load_samples(data.train, config.image_size), dir, log);
  const synth::Manifest gen = generate_set(model, data.test, dir / "gen", recipe.sample, log);
  EvalConfig eval = recipe.eval;
  if (eval.image_size == 0) eval.image_size = config.image_size;
  result.report = evaluate_pairs(gen, data.test, eval, default_feature_extractor());
  write_text(dir / "report.txt", result.report.to_text());
  return result;
}

std::vector<AblationRow> ablation_rows() {
  using D = std::vector<std::pair<std::string, std::string>>;
  return {
      {"baseline", D{{"use_ci", "false"}, {"use_ct", "false"}, {"use_lfl", "false"}}, false},
      {"+c_i", D{{"use_ci", "true"}, {"use_ct", "false"}, {"use_lfl", "false"}}, false},
      {"+c_t", D{{"use_ci", "false"}, {"use_ct", "true"}, {"use_lfl", "false"}}, false},
      {"+c_i+c_t", D{{"use_ci", "true"}, {"use_ct", "true"}, {"use_lfl", "false"}}, false},
      {"+all_lambda0.5", D{{"use_ci", "true"}, {"use_ct", "true"}, {"use_lfl", "true"}, {"lambda", "0.5"}}, false},
      {"+all_lambda1.0", D{{"use_ci", "true"}, {"use_ct", "true"}, {"use_lfl", "true"}, {"lambda", "1"}}, true},
      {"+all_lambda1.5", D{{"use_ci", "true"}, {"use_ct", "true"}, {"use_lfl", "true"}, {"lambda", "1.5"}}, false},
  };
}

TrainConfig apply_row(const TrainConfig& base, const AblationRow& row) {
  TrainConfig c = base;
  for (const auto& [k, v] : row.delta) c.set(k, v);
  return c;
}

namespace {

fs::path row_dir(const fs::path& workdir, const AblationRow& row, std::uint64_t seed) {
  return workdir / row.name / ("seed" + std::to_string(seed));
}

}  // namespace

std::vector<AblationResult> run_ablation_sweep(const ExperimentRecipe& recipe, const std::vector<std::uint64_t>& seeds,
                                               const fs::path& workdir, const Log& log) {
  if (seeds.empty()) throw InvalidConfig("ablation sweep needs at least one seed");
  fs::create_directories(workdir);
  write_text(workdir / "recipe.txt", recipe.to_text());
  const synth::Dataset data = build_recipe_dataset(recipe.dataset, workdir / "data");
  std::vector<AblationResult> results;
  for (const AblationRow& row : ablation_rows()) {
    for (std::uint64_t seed : seeds) {
      TrainConfig config = apply_row(recipe.train, row);
      config.seed = seed;
      say(log, "row " + row.name + " seed " + std::to_string(seed));
      RunResult run = train_and_evaluate(config, data, recipe, row_dir(workdir, row, seed), log);
      results.push_back({row, seed, run.report});
    }
  }
  write_text(workdir / "summary.txt", summary_table(results));
  return results;
}

std::vector<AblationResult> load_ablation_results(const std::vector<std::uint64_t>& seeds, const fs::path& workdir) {
  std::vector<AblationResult> results;
  for (const AblationRow& row : ablation_rows()) {
    for (std::uint64_t seed : seeds) {
      results.push_back({row, seed, EvalReport::parse(read_text(row_dir(workdir, row, seed) / "report.txt"))});
    }
  }
  return results;
}

std::string summary_table(const std::vector<AblationResult>& results) {
  struct Acc {
    AblationRow row;
    double l1 = 0, ssim = 0, psnr = 0, fid = 0;
    int n = 0;
  };
  std::vector<Acc> rows;
  for (const auto& r : results) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const Acc& a) { return a.row.name == r.row.name; });
    if (it == rows.end()) {
      rows.push_back({r.row});
      it = rows.end() - 1;
    }
    it->l1 += r.report.l1;
    it->ssim += r.report.ssim;
    it->psnr += r.report.psnr;
    it->fid += r.report.fid;
    ++it->n;
  }
  auto flag = [](const AblationRow& row, const std::string& key, const TrainConfig& base) {
    return apply_row(base, row).get(key) == "true" ? "x" : "-";
  };
  const TrainConfig base;
  std::ostringstream s;
  s << "row\tc_i\tc_t\tL_fl\tlambda\tL1\tSSIM\tPSNR\tFID\tseeds\n";
  for (const Acc& a : rows) {
    const TrainConfig c = apply_row(base, a.row);
    s << a.row.name << (a.row.reference ? " (ref)" : "") << '\t' << flag(a.row, "use_ci", base) << '\t'
      << flag(a.row, "use_ct", base) << '\t' << flag(a.row, "use_lfl", base) << '\t';
    if (c.use_lfl) s << std::setprecision(2) << std::fixed << c.lambda;
    else s << "-";
    s << std::setprecision(4) << std::fixed << '\t' << a.l1 / a.n << '\t' << a.ssim / a.n << '\t' << a.psnr / a.n
      << '\t';
    if (std::isnan(a.fid)) s << "n/a";
    else s << a.fid / a.n;
    s << '\t' << a.n << "\n";
    s.unsetf(std::ios::floatfield);
  }
  return s.str();
}

std::string OverfitReport::to_text() const {
  std::ostringstream s;
  s << std::setprecision(6);
  s << "steps: " << trace.size() << "\n";
  s << "initial_loss: " << initial_loss << "\n";
  s << "final_loss: " << final_loss << "\n";
  s << "loss_ratio: " << loss_ratio() << " (limit " << max_loss_ratio << ") " << (loss_ok() ? "PASS" : "FAIL")
    << "\n";
  s << "sample_l1: " << sample_l1 << " (limit " << max_sample_l1 << ") " << (sample_ok() ? "PASS" : "FAIL") << "\n";
  s << "result: " << (passed() ? "PASS" : "FAIL") << "\n";
  return s.str();
}

OverfitReport run_overfit_probe(const ExperimentRecipe& recipe, std::uint64_t seed, const fs::path& workdir,
                                const ProbeOptions& options, const Log& log) {
  TrainConfig config = recipe.train;
  config.seed = seed;
  config.validate();
  fs::create_directories(workdir);
  write_text(workdir / "recipe.txt", recipe.to_text());
  config.save(workdir / "config.txt");
  DatasetRecipe ds = recipe.dataset;
  ds.split = 1.0;
  const synth::Dataset data = build_recipe_dataset(ds, workdir / "data");
  const auto samples = synth::load_samples(data.train, config.image_size);

  OverfitReport report;
  report.max_loss_ratio = recipe.max_loss_ratio;
  report.max_sample_l1 = recipe.max_sample_l1;
  {
    Model model(config, vocab_for(data.all));
    report.trace = train_logged(model, samples, workdir, log);
  }
  const auto n = static_cast<long>(report.trace.size());
  const long first = std::min<long>(recipe.initial_window, n), last = std::min<long>(recipe.final_window, n);
  if (first == 0) throw InvalidConfig("overfit probe ran no training steps");
  for (long i = 0; i < first; ++i) report.initial_loss += report.trace[static_cast<std::size_t>(i)].l_total / first;
  for (long i = n - last; i < n; ++i) report.final_loss += report.trace[static_cast<std::size_t>(i)].l_total / last;

  if (options.corrupt_checkpoint) {
    std::fstream f(workdir / "model.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = static_cast<std::streamoff>(f.tellg());
    f.seekg(size / 2);
    char byte = 0;
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x5A);
    f.seekp(size / 2);
    f.write(&byte, 1);
  }
  const Checkpoint ck = load_checkpoint(workdir / "model.ckpt");
  const synth::Manifest gen = generate_set(*ck.model, data.train, workdir / "gen", recipe.sample, log);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Image img = resize_nearest(read_png(gen.resolve(gen.records[i].path_x0)), config.image_size);
    report.sample_l1 += l1(img, samples[i].x0) / static_cast<double>(samples.size());
  }
  write_text(workdir / "report.txt", report.to_text());
  return report;
}

}  // namespace anyglyph::repro

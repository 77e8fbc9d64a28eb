// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "anyglyph/repro.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace anyglyph;
using testsupport::max_abs_diff;
using testsupport::uniform;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 1
Outcome inverse_identity() {
  Stopwatch clock;
  const NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
  Rng rng(2024);
  std::uniform_int_distribution<int> step(1, sched.T);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Tensor z0 = randn({4, 8, 8}, rng), eps = randn({4, 8, 8}, rng);
    const int t = step(rng);
    worst = std::max(worst, max_abs_diff(coarse_denoise(forward_diffuse(z0, t, eps, sched), eps, t, sched), z0));
  }
  const double s = clock.seconds();
  return {worst < 1e-5 && s < 10.0, "max error " + fmt(worst) + ", " + fmt(s) + " s"};
}

// 2
Outcome schedule_correctness() {
  const NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
  bool decreasing = true;
  double worst = 0, prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    worst = std::max(worst, std::abs(sched.alpha_bar_at(t) - prod) / prod);
    if (t > 1 && !(sched.alpha_bar_at(t) < sched.alpha_bar_at(t - 1))) decreasing = false;
  }
  const double last = sched.alpha_bar_at(1000);
  const bool ok = decreasing && std::abs(last - 4.04e-5) <= 1e-6 && worst < 1e-12;
  return {ok, "alpha_bar_T " + fmt(last, 6) + ", oracle rel. error " + fmt(worst) +
                  (decreasing ? ", strictly decreasing" : ", NOT decreasing")};
}

// 3
Outcome gradient_suite() {
  Stopwatch clock;
  std::vector<std::pair<std::string, double>> errs;

  {
    ParamStore store;
    FfemConfig cfg;
    cfg.channels = 8;
    cfg.factor = 2;
    cfg.latent_channels = 12;
    const Ffem ffem(store, cfg, 4);
    const Image lg = uniform({3, 8, 8}, 1), lr = uniform({3, 8, 8}, 2);
    errs.emplace_back("ffem glyph", testsupport::check_param_grads(
                                        [&](Tape& t) { return ag::mean(ag::square(ffem.glyph_block(t, t.constant(lg)))); },
                                        store.group("ffem.glyph."), 3).rel_error);
    errs.emplace_back("ffem reference",
                      testsupport::check_param_grads(
                          [&](Tape& t) { return ag::mean(ag::square(ffem.reference_block(t, t.constant(lr)))); },
                          store.group("ffem.reference."), 3).rel_error);
    errs.emplace_back("ffem fused", testsupport::check_param_grads(
                                        [&](Tape& t) {
                                          return ag::mean(ag::square(ffem(t, t.constant(lg), t.constant(lr))));
                                        },
                                        store.all(), 2).rel_error);
  }
  for (InjectionMode mode : {InjectionMode::input_add, InjectionMode::control_branch}) {
    ParamStore store;
    PredictorConfig cfg;
    cfg.latent_channels = 3;
    cfg.base_channels = 8;
    cfg.cond_dim = 6;
    cfg.num_tokens = 4;
    cfg.injection = mode;
    const NoisePredictor net(store, cfg, 4);
    Rng rng(5);
    for (Parameter* p : store.group("control.proj")) init_normal(*p, 0.1, rng);
    const Tensor zt = randn({3, 8, 8}, rng), za = randn({3, 8, 8}, rng), c = randn({4, 6}, rng);
    auto f = [&](Tape& t) { return ag::mean(net(t, t.constant(zt), t.constant(za), t.constant(c), 7)); };
    errs.emplace_back(std::string("predictor ") + to_string(mode),
                      testsupport::check_param_grads(f, store.all(), 1).rel_error);
  }
  {
    const FeatureExtractor& phi = default_feature_extractor();
    const Image lg = uniform({3, 8, 8}, 14), lr = uniform({3, 8, 8}, 15), x = uniform({3, 8, 8}, 16);
    errs.emplace_back("content loss", testsupport::check_input_grad(
                                          [&](Tape& t, const Var& v) { return content_loss(t, phi, v, t.constant(lg)); },
                                          x, 24).rel_error);
    errs.emplace_back("style loss", testsupport::check_input_grad(
                                        [&](Tape& t, const Var& v) { return style_loss(t, phi, v, t.constant(lr)); }, x,
                                        24).rel_error);
    errs.emplace_back("feature-level loss",
                      testsupport::check_input_grad(
                          [&](Tape& t, const Var& v) {
                            return feature_level_loss(t, phi, v, t.constant(lg), t.constant(lr), 0.6);
                          },
                          x, 24).rel_error);
  }
  const double s = clock.seconds();
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, e] : errs) {
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  }
  return {worst < 1e-4 && s < 60.0,
          std::to_string(errs.size()) + " checks, worst " + fmt(worst) + " (" + worst_name + "), " + fmt(s) + " s"};
}

// 4
Outcome metric_oracles() {
  double ssim_err = 0;
  for (int i = 0; i < 20; ++i) {
    const Image a = uniform({3, 16, 16}, 300 + i), b = uniform({3, 16, 16}, 400 + i);
    ssim_err = std::max(ssim_err, std::abs(ssim(a, b) - testsupport::brute_ssim(a, b, 11)));
  }
  Eigen::VectorXd mu_a(4), mu_b(4), sd_a(4), sd_b(4);
  mu_a << 0, 1, -1, 0.5;
  mu_b << 0.5, 0, -1, 2;
  sd_a << 1, 0.5, 2, 1;
  sd_b << 2, 0.5, 1, 1.5;
  const double analytic = (mu_a - mu_b).squaredNorm() + (sd_a - sd_b).squaredNorm();
  const Eigen::MatrixXd fa = testsupport::gaussian_set(10000, mu_a, sd_a, 7);
  const double fid_rel = std::abs(fid(fa, testsupport::gaussian_set(10000, mu_b, sd_b, 8)) - analytic) / analytic;
  const double fid_same = fid(fa, fa);

  double closed = 0;
  for (int i = 0; i < 20; ++i) {
    const Image a = uniform({3, 16, 16}, 500 + i), b = uniform({3, 16, 16}, 600 + i);
    long double abs_sum = 0, sq_sum = 0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      const long double d = (long double)a[k] - b[k];
      abs_sum += std::abs(d);
      sq_sum += d * d;
    }
    const double n = static_cast<double>(a.size());
    closed = std::max(closed, std::abs(l1(a, b) - static_cast<double>(abs_sum) / n));
    closed = std::max(closed, std::abs(psnr(a, b) - 10.0 * std::log10(n / static_cast<double>(sq_sum))));
  }
  const bool ok = ssim_err < 1e-8 && fid_rel < 0.05 && fid_same < 1e-6 && closed < 1e-8;
  return {ok, "ssim " + fmt(ssim_err) + ", fid rel. " + fmt(fid_rel) + ", fid(same) " + fmt(fid_same) +
                  ", l1/psnr " + fmt(closed)};
}

std::vector<synth::GlyphSample> tiny_samples(int n, int size) {
  synth::DatasetOptions o;
  o.charset = synth::charset_preset("latin26");
  o.charset.resize(static_cast<std::size_t>(n));
  o.canvas = 32;
  o.seed = 3;
  testsupport::TempDir dir("accept-samples");
  o.out_dir = dir.path();
  return synth::load_samples(synth::build_dataset(o).train, size);
}

TrainConfig desk_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.batch = 2;
  c.T = 100;
  c.beta_start = 1e-3;
  c.beta_end = 0.2;
  c.image_size = 16;
  c.codec_mode = CodecMode::fixed;
  c.codec_factor = 2;
  c.latent_channels = 12;
  c.base_channels = 16;
  c.ffem_channels = 16;
  c.cond_dim = 32;
  c.seed = 5;
  return c;
}

Vocab latin_vocab() { return Vocab::build(synth::charset_preset("latin26")); }

// 5
Outcome loss_composition() {
  TrainConfig with = desk_config();
  with.lambda = 0.0;
  TrainConfig without = with;
  without.use_lfl = false;
  const auto samples = tiny_samples(4, 16);
  Model ma(with, latin_vocab()), mb(without, latin_vocab());
  Trainer ta(ma, samples), tb(mb, samples);
  double residual = 0;
  int compared = 0;
  for (long step = 0; step < 3; ++step) {
    ta.compute_gradients(step);
    tb.compute_gradients(step);
    const auto pa = ma.params().all(), pb = mb.params().all();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (pa[i]->grad.size() == 0 && pb[i]->grad.size() == 0) continue;
      if (pa[i]->grad.size() != pb[i]->grad.size()) return {false, "gradient sets differ for " + pa[i]->name};
      residual = std::max(residual, max_abs_diff(pa[i]->grad, pb[i]->grad));
      ++compared;
    }
  }
  const FeatureExtractor& phi = default_feature_extractor();
  const Image x = uniform({3, 16, 16}, 1), lg = uniform({3, 16, 16}, 2), lr = uniform({3, 16, 16}, 3);
  const double unit = feature_level_loss(phi, x, lg, lr, 1.0);
  double linear = 0;
  for (double ab : {1e-4, 0.01, 0.25, 0.5, 0.9, 0.999}) {
    linear = std::max(linear, std::abs(feature_level_loss(phi, x, lg, lr, ab) - ab * unit) / (ab * unit));
  }
  return {residual < 1e-9 && compared > 0 && linear < 1e-12,
          "lambda=0 residual " + fmt(residual) + " over " + std::to_string(compared) + " tensors, linearity " +
              fmt(linear)};
}

// 6
Outcome shape_laws() {
  int checked = 0;
  std::string bad;
  for (int size : {16, 32, 64, 128}) {
    for (CodecMode mode : {CodecMode::fixed, CodecMode::learned}) {
      TrainConfig c = desk_config();
      c.image_size = size;
      c.codec_mode = mode;
      c.codec_factor = mode == CodecMode::fixed ? 2 : 4;
      c.latent_channels = mode == CodecMode::fixed ? 12 : 4;
      if (size % (2 * c.codec_factor)) continue;
      const Model m(c, latin_vocab());
      const Image lg = uniform({3, size, size}, 1), lr = uniform({3, size, size}, 2);
      const Tensor z_a = m.ffem().encode(lg, lr);
      const Tensor z_t = forward_diffuse(m.codec().encode(lg), 10, Tensor(m.codec().latent_dims(size, size)),
                                         m.schedule());
      if (z_a.dims() != z_t.dims()) bad += " z_a@" + std::to_string(size);
      ++checked;
    }
  }
  TrainConfig c = desk_config();
  const Model m(c, latin_vocab());
  const Image lr = uniform({3, 16, 16}, 4);
  Tape tape;
  const Var ci = m.vtfem().encode_reference(tape, lr);
  const Var ct = m.vtfem().encode_prompt(tape, synth::make_prompt(U'Q', "s0003"));
  const Var cc = m.vtfem().condition(tape, lr, synth::make_prompt(U'Q', "s0003"));
  const std::vector<int> want{c.num_tokens, c.cond_dim};
  if (ci.value().dims() != want || ct.value().dims() != want || cc.value().dims() != want) bad += " condition";
  const Tensor sum = combine(ci.value(), ct.value());
  Tensor expect(want);
  for (Eigen::Index i = 0; i < expect.size(); ++i) expect[i] = ci.value()[i] + ct.value()[i];
  if (max_abs_diff(sum, expect) != 0.0 || max_abs_diff(cc.value(), expect) != 0.0) bad += " combine";
  return {bad.empty(), std::to_string(checked) + " resolution/codec pairs, condition " + std::to_string(want[0]) +
                           "x" + std::to_string(want[1]) + (bad.empty() ? "" : "; mismatches:" + bad)};
}

// 7
Outcome ablation(const fs::path& root, const fs::path& work) {
  Stopwatch clock;
  const auto recipe = repro::ExperimentRecipe::load(root / "recipes" / "ablation-korean-mini.recipe");
  const fs::path dir = work / "ablation";
  fs::remove_all(dir);
  const auto results = repro::run_ablation_sweep(recipe, {0}, dir, [](const std::string& m) {
    std::cerr << "  [ablation] " << m << std::endl;
  });
  std::set<std::string> allowed{"use_ci", "use_ct", "use_lfl", "lambda"};
  std::string bad;
  const TrainConfig baseline = repro::apply_row(recipe.train, repro::ablation_rows()[0]);
  for (const auto& r : results) {
    TrainConfig stored = TrainConfig::load(dir / r.row.name / "seed0" / "config.txt");
    for (const auto& k : TrainConfig::keys()) {
      if (k != "seed" && !allowed.count(k) && stored.get(k) != baseline.get(k)) bad += " " + r.row.name + ":" + k;
    }
    if (!fs::exists(dir / r.row.name / "seed0" / "report.txt")) bad += " " + r.row.name + ":report";
  }
  const double hours = clock.seconds() / 3600.0;
  const bool ok = results.size() == 7 && bad.empty() && hours < 12.0;
  std::cerr << slurp(dir / "summary.txt");
  return {ok, std::to_string(results.size()) + " reports, " + fmt(hours * 60.0) + " min" +
                  (bad.empty() ? "" : "; unexpected deltas:" + bad)};
}

// 8
Outcome overfit(const fs::path& root, const fs::path& work) {
  Stopwatch clock;
  const auto recipe = repro::ExperimentRecipe::load(root / "recipes" / "overfit.recipe");
  const fs::path dir = work / "overfit";
  fs::remove_all(dir);
  const auto rep = repro::run_overfit_probe(recipe, 0, dir, {}, [](const std::string& m) {
    std::cerr << "  [overfit] " << m << std::endl;
  });
  // Without the feature loss the denoising loss alone must still collapse.
  auto plain = recipe;
  plain.train.lambda = 0.0;
  fs::remove_all(work / "overfit_lambda0");
  const auto rep0 = repro::run_overfit_probe(plain, 0, work / "overfit_lambda0", {}, [](const std::string& m) {
    std::cerr << "  [overfit lambda=0] " << m << std::endl;
  });
  return {rep.passed() && rep0.loss_ok(),
          "loss ratio " + fmt(rep.loss_ratio()) + " (< " + fmt(rep.max_loss_ratio) + "), DDIM L1 " +
              fmt(rep.sample_l1) + " (< " + fmt(rep.max_sample_l1) + "), lambda=0 loss ratio " +
              fmt(rep0.loss_ratio()) + ", " + fmt(clock.seconds() / 60) + " min"};
}

// 9
Outcome dataset_determinism(const fs::path& work) {
  synth::DatasetOptions o;
  o.charset = synth::charset_preset("latin26");
  o.n_styles = 4;
  o.seed = 7;
  o.split = 0.5;
  o.canvas = 64;
  const fs::path a = work / "synth_a", b = work / "synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  o.out_dir = a;
  const auto da = synth::build_dataset(o);
  o.out_dir = b;
  synth::build_dataset(o);
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    if (slurp(e.path()) != slurp(b / fs::relative(e.path(), a))) ++differ;
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file();
  const auto check = synth::validate_manifest(da.all);
  const bool ok = differ == 0 && files == files_b && check.ok() && check.style_consistent == check.samples &&
                  check.no_leakage == check.samples && check.samples == 104;
  return {ok, std::to_string(files) + " files, " + std::to_string(differ) + " differ; " +
                  std::to_string(check.style_consistent) + "/" + std::to_string(check.samples) +
                  " style-consistent, " + std::to_string(check.no_leakage) + "/" + std::to_string(check.samples) +
                  " leak-free"};
}

// 10
Outcome checkpoint_resume(const fs::path& work) {
  TrainConfig c = desk_config();
  c.steps = 20;
  const auto samples = tiny_samples(6, 16);
  Model straight(c, latin_vocab());
  Trainer ts(straight, samples);
  const auto full = ts.run();

  Model first(c, latin_vocab());
  Trainer tf(first, samples);
  tf.run(10);
  const fs::path file = work / "resume" / "mid.ckpt";
  save_checkpoint(file, first, tf.optimizer(), tf.step_count());
  Checkpoint ck = load_checkpoint(file);
  Trainer tr(*ck.model, samples);
  resume(tr, ck);
  const auto rest = tr.run();
  if (rest.size() != 10) return {false, "resumed run took " + std::to_string(rest.size()) + " steps"};
  double worst = 0;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const StepRecord &a = rest[i], &b = full[10 + i];
    if (a.step != b.step) return {false, "step numbers differ"};
    for (double d : {a.l_df - b.l_df, a.l_fl - b.l_fl, a.l_total - b.l_total, a.alpha_bar_mean - b.alpha_bar_mean}) {
      worst = std::max(worst, std::abs(d));
    }
  }
  return {worst < 1e-6, "10 resumed steps, max trace difference " + fmt(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string root = ANYGLYPH_SOURCE_DIR;
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--root", root, "Source tree (for recipes/)");
  app.add_option("--workdir", work, "Scratch directory for experiment outputs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"diffusion inverse identity", inverse_identity},
      {"schedule correctness", schedule_correctness},
      {"gradient suite", gradient_suite},
      {"metric oracles", metric_oracles},
      {"loss composition", loss_composition},
      {"conditioning shape laws", shape_laws},
      {"ablation sweep", [&] { return ablation(root, work); }},
      {"overfit probe", [&] { return overfit(root, work); }},
      {"dataset determinism", [&] { return dataset_determinism(work); }},
      {"checkpoint round-trip", [&] { return checkpoint_resume(work); }},
  };
  fs::create_directories(work);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first << " (" << o.detail
              << ")" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

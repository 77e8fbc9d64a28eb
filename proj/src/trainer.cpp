#include "anyglyph/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace anyglyph {

std::string format_trace_line(const StepRecord& r) {
  std::ostringstream s;
  s << std::setprecision(17) << r.step << '\t' << r.l_df << '\t';
  if (std::isnan(r.l_fl)) s << "nan";
  else s << r.l_fl;
  s << '\t' << r.l_total << '\t' << r.alpha_bar_mean;
  return s.str();
}

StepRecord parse_trace_line(const std::string& line) {
  std::istringstream in(line);
  StepRecord r;
  std::string fl;
  if (!(in >> r.step >> r.l_df >> fl >> r.l_total >> r.alpha_bar_mean)) {
    throw IOFailure("malformed loss trace line: " + line);
  }
  r.l_fl = fl == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(fl);
  return r;
}

std::vector<StepRecord> read_trace(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IOFailure("cannot open " + file.string());
  std::vector<StepRecord> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] != '#') out.push_back(parse_trace_line(line));
  }
  return out;
}

Vocab vocab_for(const synth::Manifest& m) {
  std::set<synth::Codepoint> chars;
  for (const auto& r : m.records) {
    for (synth::Codepoint c : synth::utf8_decode(r.prompt)) chars.insert(c);
    chars.insert(r.codepoint);
  }
  return Vocab::build({chars.begin(), chars.end()});
}

Trainer::Trainer(Model& model, std::vector<synth::GlyphSample> data) : model_(model), data_(std::move(data)) {
  if (data_.empty()) throw DatasetEmpty("training set is empty");
  const TrainConfig& cfg = model_.config();
  for (auto& s : data_) {
    s.x0 = resize_nearest(s.x0, cfg.image_size);
    s.lg = resize_nearest(s.lg, cfg.image_size);
    s.lr = resize_nearest(s.lr, cfg.image_size);
  }
  if (!model_.codec_ready()) {
    std::vector<Image> images;
    for (const auto& s : data_) images.push_back(s.x0);
    CodecTrainOptions opt;
    opt.steps = cfg.codec_steps;
    opt.batch = cfg.batch;
    opt.lr = cfg.codec_lr;
    opt.seed = mix_seed(cfg.seed, {0xC0DE});
    opt.validation = 0;
    train_codec(model_.codec(), model_.params(), images, opt);
    model_.set_codec_ready(true);
  }
  for (const auto& s : data_) latents_.push_back(model_.codec().encode(s.x0));
  adam_ = Adam({cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
}

long Trainer::steps_per_epoch() const {
  const long b = model_.config().batch;
  return (static_cast<long>(data_.size()) + b - 1) / b;
}

long Trainer::total_steps() const {
  const TrainConfig& cfg = model_.config();
  return cfg.steps > 0 ? cfg.steps : static_cast<long>(cfg.epochs) * steps_per_epoch();
}

double Trainer::learning_rate(long step) const {
  const TrainConfig& cfg = model_.config();
  if (!cfg.cosine_lr) return cfg.lr;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps()));
  return 0.5 * cfg.lr * (1.0 + std::cos(M_PI * progress));
}

std::vector<std::size_t> Trainer::batch_indices(long step) const {
  const long per_epoch = steps_per_epoch();
  const long epoch = step / per_epoch, pos = step % per_epoch;
  std::vector<std::size_t> order(data_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(model_.config().seed, {static_cast<std::uint64_t>(epoch), 0xE90C}));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t b = static_cast<std::size_t>(model_.config().batch);
  const std::size_t from = static_cast<std::size_t>(pos) * b;
  const std::size_t to = std::min(order.size(), from + b);
  return {order.begin() + static_cast<std::ptrdiff_t>(from), order.begin() + static_cast<std::ptrdiff_t>(to)};
}

StepRecord Trainer::compute_gradients(long step) {
  const TrainConfig& cfg = model_.config();
  const NoiseSchedule& sched = model_.schedule();
  const FeatureExtractor& phi = default_feature_extractor();
  const auto batch = batch_indices(step);
  const double inv = 1.0 / static_cast<double>(batch.size());
  const bool with_lfl = cfg.use_lfl && step % cfg.lfl_stride == 0;

  model_.params().zero_grad();
  StepRecord rec;
  rec.step = step;
  rec.l_fl = with_lfl ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> bad;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const synth::GlyphSample& s = data_[batch[b]];
    const Tensor& z0 = latents_[batch[b]];
    Rng rng(mix_seed(cfg.seed, {static_cast<std::uint64_t>(step), b, 0x7A}));
    const int t = std::uniform_int_distribution<int>(1, sched.T)(rng);
    const Tensor eps = randn(z0.dims(), rng);
    const double ab = sched.alpha_bar_at(t);

    Tape tape;
    Var z_t = tape.constant(forward_diffuse(z0, t, eps, sched));
    Var lg = tape.constant(s.lg), lr = tape.constant(s.lr);
    Var z_a = model_.ffem()(tape, lg, lr);
    Var c = model_.vtfem().condition(tape, s.lr, s.prompt);
    Var eps_hat = model_.predictor()(tape, z_t, z_a, c, t);
    Var l_df = diffusion_loss(tape.constant(eps), eps_hat);
    Var total = l_df;
    if (with_lfl) {
      Var z0_hat = coarse_denoise(z_t, eps_hat, t, sched, cfg.eq6_literal);
      Var x_hat = model_.codec().decode(tape, z0_hat, true);
      Var l_fl = feature_level_loss(tape, phi, x_hat, lg, lr, ab);
      total = total_loss(l_df, l_fl, cfg.lambda);
      rec.l_fl += l_fl.value()[0] * inv;
    }
    const double value = total.value()[0];
    if (!std::isfinite(value)) {
      bad.push_back(s.id);
      continue;
    }
    rec.l_df += l_df.value()[0] * inv;
    rec.l_total += value * inv;
    rec.alpha_bar_mean += ab * inv;
    tape.backward(ag::scale(total, inv));
  }
  if (!bad.empty()) {
    model_.params().zero_grad();
    throw NonFiniteLoss(step, bad);
  }
  return rec;
}

StepRecord Trainer::step() {
  StepRecord rec = compute_gradients(step_);
  auto params = model_.params().all();
  const double norm = clip_grad_norm(params, model_.config().grad_clip);
  if (!std::isfinite(norm)) {
    std::vector<std::string> ids;
    for (std::size_t i : batch_indices(step_)) ids.push_back(data_[i].id);
    model_.params().zero_grad();
    throw NonFiniteLoss(step_, ids);
  }
  adam_.config().lr = learning_rate(step_);
  adam_.step(params);
  model_.params().zero_grad();
  ++step_;
  model_.set_trained(true);
  return rec;
}

std::vector<StepRecord> Trainer::run(long max_steps, const std::function<void(const StepRecord&)>& on_step) {
  std::vector<StepRecord> out;
  const long end = max_steps < 0 ? total_steps() : std::min(total_steps(), step_ + max_steps);
  while (step_ < end) {
    out.push_back(step());
    if (on_step) on_step(out.back());
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'A', 'G', 'C', 'K', 'P', 'T', '\r', '\n'};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void doubles(const double* d, std::size_t n) {
    const auto* p = reinterpret_cast<const char*>(d);
    buf_.insert(buf_.end(), p, p + n * sizeof(double));
  }
  void tensor(const Tensor& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.dims()) pod<std::int32_t>(d);
    doubles(t.ptr(), static_cast<std::size_t>(t.size()));
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : p_(data), end_(data + size) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(p_, p_ + n);
    p_ += n;
    return s;
  }
  Tensor tensor() {
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) throw CorruptCheckpoint("implausible tensor rank");
    std::vector<int> dims;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = pod<std::int32_t>();
      if (d < 0) throw CorruptCheckpoint("negative tensor dimension");
      dims.push_back(d);
    }
    const auto n = static_cast<std::size_t>(Tensor::count(dims));
    need(n * sizeof(double));
    Tensor t(dims);
    std::memcpy(t.ptr(), p_, n * sizeof(double));
    p_ += n * sizeof(double);
    return t;
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CorruptCheckpoint("checkpoint payload is truncated");
  }
  const char* p_;
  const char* end_;
};

std::uint32_t checksum(const std::vector<char>& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const Model& model, const Adam& optimizer, long step) {
  Writer w;
  w.str(model.config().to_text());
  const NoiseSchedule& s = model.schedule();
  w.pod<std::int32_t>(s.T);
  w.doubles(s.beta.data(), s.beta.size());
  w.doubles(s.alpha_bar.data(), s.alpha_bar.size());
  w.str(model.vocab().serialize());
  w.pod<std::int64_t>(step);
  w.pod<std::uint64_t>(mix_seed(model.config().seed, {static_cast<std::uint64_t>(step)}));
  w.pod<std::uint8_t>(model.codec_ready());
  w.pod<std::uint8_t>(model.trained());

  const auto params = model.params().all();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.str(p->name);
    w.pod<std::uint8_t>(p->trainable);
    w.tensor(p->value);
  }
  w.pod<std::int64_t>(optimizer.steps());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(optimizer.moments().size()));
  for (const auto& [name, m] : optimizer.moments()) {
    w.str(name);
    w.tensor(m.m);
    w.tensor(m.v);
  }

  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IOFailure("cannot write checkpoint " + file.string());
    const auto& bytes = w.bytes();
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t size = bytes.size();
    const std::uint32_t crc = checksum(bytes);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&size), sizeof size);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
    if (!out) throw IOFailure("write failed for checkpoint " + file.string());
  }
  std::filesystem::rename(tmp, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IOFailure("cannot open checkpoint " + file.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader header(raw.data(), raw.size());
  const std::size_t header_size = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (raw.size() < header_size || std::memcmp(raw.data(), kMagic, sizeof kMagic) != 0) {
    throw CorruptCheckpoint(file.string() + " is not a checkpoint");
  }
  std::uint32_t version;
  std::uint64_t size;
  std::memcpy(&version, raw.data() + sizeof kMagic, sizeof version);
  std::memcpy(&size, raw.data() + sizeof kMagic + sizeof version, sizeof size);
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  if (raw.size() != header_size + size + sizeof(std::uint32_t)) {
    throw CorruptCheckpoint(file.string() + " is truncated or has trailing bytes");
  }
  const std::vector<char> payload(raw.begin() + static_cast<std::ptrdiff_t>(header_size),
                                  raw.begin() + static_cast<std::ptrdiff_t>(header_size + size));
  std::uint32_t crc;
  std::memcpy(&crc, raw.data() + header_size + size, sizeof crc);
  if (crc != checksum(payload)) throw CorruptCheckpoint(file.string() + " fails its checksum");

  Reader r(payload.data(), payload.size());
  const TrainConfig config = TrainConfig::parse(r.str());
  NoiseSchedule sched;
  sched.T = r.pod<std::int32_t>();
  if (sched.T != config.T) throw CorruptCheckpoint("schedule length disagrees with the config");
  sched.beta.resize(static_cast<std::size_t>(sched.T));
  sched.alpha_bar.resize(static_cast<std::size_t>(sched.T));
  for (double& b : sched.beta) b = r.pod<double>();
  for (double& a : sched.alpha_bar) a = r.pod<double>();
  Vocab vocab = Vocab::deserialize(r.str());

  Checkpoint ck;
  ck.step = r.pod<std::int64_t>();
  (void)r.pod<std::uint64_t>();
  const bool codec_ready = r.pod<std::uint8_t>() != 0;
  const bool trained = r.pod<std::uint8_t>() != 0;
  ck.model = std::make_unique<Model>(config, std::move(vocab));
  ck.model->set_schedule(std::move(sched));

  const auto n = r.pod<std::uint32_t>();
  auto& store = ck.model->params();
  if (n != store.all().size()) throw CorruptCheckpoint("parameter count disagrees with the config");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const bool trainable = r.pod<std::uint8_t>() != 0;
    Tensor value = r.tensor();
    Parameter* p = store.find(name);
    if (!p || !p->value.same_shape(value)) throw CorruptCheckpoint("unexpected parameter '" + name + "'");
    p->value = std::move(value);
    p->trainable = trainable;
  }
  ck.model->set_codec_ready(codec_ready);
  ck.model->set_trained(trained);

  ck.optimizer = Adam({config.lr, config.beta1, config.beta2, config.eps});
  ck.optimizer.set_steps(r.pod<std::int64_t>());
  const auto moments = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < moments; ++i) {
    const std::string name = r.str();
    Adam::Moments m;
    m.m = r.tensor();
    m.v = r.tensor();
    const Parameter* p = store.find(name);
    if (!p || !p->value.same_shape(m.m) || !p->value.same_shape(m.v)) {
      throw CorruptCheckpoint("optimizer state for unknown parameter '" + name + "'");
    }
    ck.optimizer.moments()[name] = std::move(m);
  }
  if (!r.done()) throw CorruptCheckpoint("checkpoint has unread bytes");
  return ck;
}

void resume(Trainer& trainer, const Checkpoint& ckpt) {
  trainer.optimizer() = ckpt.optimizer;
  trainer.set_step_count(ckpt.step);
}

}  // namespace anyglyph

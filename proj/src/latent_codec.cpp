#include "anyglyph/latent_codec.hpp"

#include <algorithm>
#include <cmath>

#include "anyglyph/optim.hpp"

namespace anyglyph {

const char* to_string(CodecMode m) { return m == CodecMode::fixed ? "fixed" : "learned"; }

CodecMode parse_codec_mode(const std::string& s) {
  if (s == "fixed") return CodecMode::fixed;
  if (s == "learned") return CodecMode::learned;
  throw InvalidConfig("codec mode must be 'fixed' or 'learned', got '" + s + "'");
}

namespace {

int log2_exact(int f) {
  int n = 0;
  while ((1 << n) < f) ++n;
  if ((1 << n) != f) throw InvalidConfig("codec factor must be a power of two, got " + std::to_string(f));
  return n;
}

// Index map for space-to-depth: latent[(c*f*f + dy*f + dx), y, x] = image[c, y*f+dy, x*f+dx].
std::vector<Eigen::Index> space_to_depth_index(int height, int width, int f) {
  const int h = height / f, w = width / f;
  std::vector<Eigen::Index> index(static_cast<std::size_t>(3) * height * width);
  std::size_t k = 0;
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < f; ++dy)
      for (int dx = 0; dx < f; ++dx)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            index[k++] = (Eigen::Index(c) * height + y * f + dy) * width + x * f + dx;
  return index;
}

std::vector<Eigen::Index> depth_to_space_index(int height, int width, int f) {
  const auto forward = space_to_depth_index(height, width, f);
  std::vector<Eigen::Index> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[static_cast<std::size_t>(forward[i])] = static_cast<Eigen::Index>(i);
  return inverse;
}

}  // namespace

LatentCodec::LatentCodec(ParamStore& store, const CodecConfig& config, std::uint64_t seed) : config_(config) {
  const int levels = log2_exact(config.factor);
  if (config.latent_channels < 1) throw InvalidConfig("latent_channels must be >= 1");
  if (config.mode == CodecMode::fixed) {
    if (config.latent_channels != 3 * config.factor * config.factor) {
      throw InvalidConfig("fixed codec needs latent_channels = 3 * factor^2 = " +
                          std::to_string(3 * config.factor * config.factor));
    }
    return;
  }
  Rng rng(mix_seed(seed, {0xC0DEC}));
  const int c = config.hidden;
  enc_.push_back(nn::Conv2d::make(store, "codec.enc.in", 3, c, 3, 1, rng));
  for (int l = 0; l < levels; ++l) {
    enc_.push_back(nn::Conv2d::make(store, "codec.enc.down" + std::to_string(l), c, c, 3, 2, rng));
    enc_.push_back(nn::Conv2d::make(store, "codec.enc.mix" + std::to_string(l), c, c, 3, 1, rng));
  }
  enc_.push_back(nn::Conv2d::make(store, "codec.enc.out", c, config.latent_channels, 3, 1, rng));

  dec_.push_back(nn::Conv2d::make(store, "codec.dec.in", config.latent_channels, c, 3, 1, rng));
  for (int l = 0; l < levels; ++l) {
    dec_.push_back(nn::Conv2d::make(store, "codec.dec.up" + std::to_string(l), c, c, 3, 1, rng));
    dec_.push_back(nn::Conv2d::make(store, "codec.dec.mix" + std::to_string(l), c, c, 3, 1, rng));
  }
  dec_.push_back(nn::Conv2d::make(store, "codec.dec.out", c, 3, 3, 1, rng));
}

void LatentCodec::check_image(const std::vector<int>& dims) const {
  if (dims.size() != 3 || dims[0] != 3) {
    throw ShapeMismatch("codec expects a {3, H, W} image, got " + Tensor::shape_string(dims));
  }
  const int f = config_.factor;
  if (dims[1] % f || dims[2] % f) {
    throw ShapeMismatch("image " + Tensor::shape_string(dims) + " is not divisible by codec factor " +
                        std::to_string(f));
  }
}

void LatentCodec::check_latent(const std::vector<int>& dims) const {
  if (dims.size() != 3 || dims[0] != config_.latent_channels) {
    throw ShapeMismatch("codec expects a {" + std::to_string(config_.latent_channels) + ", h, w} latent, got " +
                        Tensor::shape_string(dims));
  }
}

std::vector<int> LatentCodec::latent_dims(int height, int width) const {
  check_image({3, height, width});
  return {config_.latent_channels, height / config_.factor, width / config_.factor};
}

Var LatentCodec::encode(Tape& tape, const Var& x) const {
  check_image(x.dims());
  const int height = x.dim(1), width = x.dim(2);
  const auto out_dims = latent_dims(height, width);
  if (config_.mode == CodecMode::fixed) {
    Var z = ag::gather(x, space_to_depth_index(height, width, config_.factor), out_dims);
    return ag::add_scalar(ag::scale(z, 2.0), -1.0);
  }
  Var h = ag::add_scalar(ag::scale(x, 2.0), -1.0);
  h = enc_.front()(tape, h);
  for (std::size_t i = 1; i + 1 < enc_.size(); ++i) h = enc_[i](tape, ag::silu(h));
  return enc_.back()(tape, ag::silu(h));
}

Var LatentCodec::decode(Tape& tape, const Var& z, bool clamp) const {
  check_latent(z.dims());
  const int f = config_.factor;
  const int height = z.dim(1) * f, width = z.dim(2) * f;
  Var x;
  if (config_.mode == CodecMode::fixed) {
    Var v = ag::add_scalar(ag::scale(z, 0.5), 0.5);
    x = ag::gather(v, depth_to_space_index(height, width, f), {3, height, width});
  } else {
    Var h = dec_.front()(tape, z);
    for (std::size_t i = 1; i + 1 < dec_.size(); i += 2) {
      h = dec_[i](tape, ag::upsample_nearest2x(ag::silu(h)));
      h = dec_[i + 1](tape, ag::silu(h));
    }
    x = ag::add_scalar(ag::scale(dec_.back()(tape, ag::silu(h)), 0.5), 0.5);
  }
  return clamp ? ag::clamp(x, 0.0, 1.0) : x;
}

Tensor LatentCodec::encode(const Image& x) const {
  Tape tape;
  return encode(tape, tape.constant(x)).value();
}

Image LatentCodec::decode(const Tensor& z) const {
  Tape tape;
  return decode(tape, tape.constant(z)).value();
}

double reconstruction_l1(const LatentCodec& codec, const std::vector<Image>& images) {
  if (images.empty()) return 0.0;
  double total = 0.0;
  for (const Image& img : images) total += (codec.decode(codec.encode(img)).data() - img.data()).cwiseAbs().mean();
  return total / static_cast<double>(images.size());
}

CodecTrainReport train_codec(LatentCodec& codec, ParamStore& store, const std::vector<Image>& images,
                             const CodecTrainOptions& options) {
  if (!codec.has_parameters()) throw InvalidConfig("train_codec needs a learned codec");
  if (images.empty()) throw DatasetEmpty("no images to train the codec on");

  std::vector<Image> data;
  for (const Image& img : images) data.push_back(options.image_size > 0 ? resize_nearest(img, options.image_size) : img);
  const int held = std::min<int>(options.validation, static_cast<int>(data.size()) / 2);
  const std::vector<Image> validation(data.end() - held, data.end());
  data.resize(data.size() - static_cast<std::size_t>(held));

  CodecTrainReport report;
  report.validation_initial = reconstruction_l1(codec, validation);

  auto params = store.group("codec.");
  Adam adam({options.lr, 0.9, 0.999, 1e-8});
  Rng rng(mix_seed(options.seed, {0xC0DEC, 1}));
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const int batch = std::max(1, options.batch);
  for (int step = 0; step < options.steps; ++step) {
    store.zero_grad();
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      const Image& x = data[pick(rng)];
      Tape tape;
      Var in = tape.constant(x);
      Var l = ag::l1(codec.decode(tape, codec.encode(tape, in), false), in);
      loss += l.value()[0] / batch;
      tape.backward(ag::scale(l, 1.0 / batch));
    }
    clip_grad_norm(params, 1.0);
    adam.step(params);
    report.loss_trace.push_back(loss);
  }
  report.validation_final = reconstruction_l1(codec, validation);
  store.zero_grad();
  return report;
}

}  // namespace anyglyph

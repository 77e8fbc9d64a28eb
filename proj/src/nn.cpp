#include "anyglyph/nn.hpp"

#include <cmath>

namespace anyglyph {

std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts) {
  // splitmix64 finaliser applied after each salt
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (std::uint64_t s : salts) h = mix(h ^ mix(s));
  return h;
}

Tensor randn(std::vector<int> dims, Rng& rng) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

Parameter& ParamStore::create(const std::string& name, std::vector<int> dims, bool trainable) {
  if (by_name_.count(name)) throw InvalidConfig("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(std::move(dims));
  p->trainable = trainable;
  Parameter& ref = *p;
  by_name_.emplace(name, p.get());
  params_.push_back(std::move(p));
  return ref;
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParamStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw InvalidConfig("unknown parameter: " + name);
  return *p;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::group(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad = Tensor();
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (Parameter* p : group(prefix)) p->trainable = trainable;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void init_normal(Parameter& p, double std, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = std * normal(rng);
}

namespace nn {

Conv2d Conv2d::make(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride, Rng& rng,
                    double init_scale) {
  Conv2d c;
  c.weight = &store.create(name + ".w", {cout, cin, k, k});
  c.bias = &store.create(name + ".b", {cout});
  c.stride = stride;
  c.pad = k / 2;
  if (init_scale != 0.0) init_normal(*c.weight, init_scale / std::sqrt(double(cin * k * k)), rng);
  return c;
}

Var Conv2d::operator()(Tape& tape, const Var& x) const {
  return ag::conv2d(x, tape.param(*weight), tape.param(*bias), stride, pad);
}

Linear Linear::make(ParamStore& store, const std::string& name, int in, int out, Rng& rng, double init_scale,
                    bool trainable) {
  Linear l;
  l.weight = &store.create(name + ".w", {in, out}, trainable);
  l.bias = &store.create(name + ".b", {out}, trainable);
  if (init_scale != 0.0) init_normal(*l.weight, init_scale / std::sqrt(double(in)), rng);
  return l;
}

Var Linear::operator()(Tape& tape, const Var& x) const {
  return ag::add_row_bias(ag::matmul(x, tape.param(*weight)), tape.param(*bias));
}

GroupNorm GroupNorm::make(ParamStore& store, const std::string& name, int channels, int groups) {
  GroupNorm g;
  g.gamma = &store.create(name + ".gamma", {channels});
  g.beta = &store.create(name + ".beta", {channels});
  g.gamma->value.data().setOnes();
  g.groups = groups;
  while (channels % g.groups) --g.groups;
  return g;
}

Var GroupNorm::operator()(Tape& tape, const Var& x) const {
  return ag::group_norm(x, groups, tape.param(*gamma), tape.param(*beta));
}

LayerNorm LayerNorm::make(ParamStore& store, const std::string& name, int dim, bool trainable) {
  LayerNorm l;
  l.gamma = &store.create(name + ".gamma", {dim}, trainable);
  l.beta = &store.create(name + ".beta", {dim}, trainable);
  l.gamma->value.data().setOnes();
  return l;
}

Var LayerNorm::operator()(Tape& tape, const Var& x) const {
  return ag::layer_norm(x, tape.param(*gamma), tape.param(*beta));
}

ResBlock ResBlock::make(ParamStore& store, const std::string& name, int cin, int cout, int time_dim, Rng& rng) {
  ResBlock r;
  r.norm1 = GroupNorm::make(store, name + ".norm1", cin, 8);
  r.conv1 = Conv2d::make(store, name + ".conv1", cin, cout, 3, 1, rng);
  if (time_dim > 0) {
    r.has_time = true;
    r.time_proj = Linear::make(store, name + ".time", time_dim, cout, rng);
  }
  r.norm2 = GroupNorm::make(store, name + ".norm2", cout, 8);
  r.conv2 = Conv2d::make(store, name + ".conv2", cout, cout, 3, 1, rng);
  if (cin != cout) {
    r.has_skip = true;
    r.skip = Conv2d::make(store, name + ".skip", cin, cout, 1, 1, rng);
  }
  return r;
}

Var ResBlock::operator()(Tape& tape, const Var& x, const Var& temb) const {
  Var h = conv1(tape, ag::silu(norm1(tape, x)));
  if (has_time && temb.valid()) {
    Var proj = time_proj(tape, ag::silu(temb));
    h = ag::add_channel_bias(h, ag::reshape(proj, {h.dim(0)}));
  }
  h = conv2(tape, ag::silu(norm2(tape, h)));
  Var s = has_skip ? skip(tape, x) : x;
  return s + h;
}

Var attention(const Var& q, const Var& k, const Var& v) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Var scores = ag::scale(ag::matmul(q, k, false, true), inv);
  return ag::matmul(ag::softmax_rows(scores), v);
}

Var to_tokens(const Var& x) {
  const int c = x.dim(0);
  const int n = static_cast<int>(x.value().size() / c);
  return ag::transpose(ag::reshape(x, {c, n}));
}

Var from_tokens(const Var& tokens, int h, int w) {
  const int c = tokens.dim(1);
  return ag::reshape(ag::transpose(tokens), {c, h, w});
}

CrossAttention CrossAttention::make(ParamStore& store, const std::string& name, int channels, int context_dim,
                                    Rng& rng) {
  CrossAttention a;
  a.norm = GroupNorm::make(store, name + ".norm", channels, 8);
  a.q = Linear::make(store, name + ".q", channels, channels, rng);
  a.k = Linear::make(store, name + ".k", context_dim, channels, rng);
  a.v = Linear::make(store, name + ".v", context_dim, channels, rng);
  a.out = Linear::make(store, name + ".out", channels, channels, rng);
  return a;
}

Var CrossAttention::operator()(Tape& tape, const Var& x, const Var& context) const {
  const int h = x.dim(1), w = x.dim(2);
  Var tokens = nn::to_tokens(norm(tape, x));
  Var attended = attention(q(tape, tokens), k(tape, context), v(tape, context));
  return x + from_tokens(out(tape, attended), h, w);
}

TransformerLayer TransformerLayer::make(ParamStore& store, const std::string& name, int dim, Rng& rng,
                                        bool trainable) {
  TransformerLayer t;
  t.ln1 = LayerNorm::make(store, name + ".ln1", dim, trainable);
  t.q = Linear::make(store, name + ".q", dim, dim, rng, 1.0, trainable);
  t.k = Linear::make(store, name + ".k", dim, dim, rng, 1.0, trainable);
  t.v = Linear::make(store, name + ".v", dim, dim, rng, 1.0, trainable);
  t.out = Linear::make(store, name + ".out", dim, dim, rng, 1.0, trainable);
  t.ln2 = LayerNorm::make(store, name + ".ln2", dim, trainable);
  t.fc1 = Linear::make(store, name + ".fc1", dim, 2 * dim, rng, 1.0, trainable);
  t.fc2 = Linear::make(store, name + ".fc2", 2 * dim, dim, rng, 1.0, trainable);
  return t;
}

Var TransformerLayer::operator()(Tape& tape, const Var& x) const {
  Var h = ln1(tape, x);
  Var a = x + out(tape, attention(q(tape, h), k(tape, h), v(tape, h)));
  return a + fc2(tape, ag::silu(fc1(tape, ln2(tape, a))));
}

Tensor sinusoidal_embedding(double position, int dim) {
  Tensor e({1, dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
    e[i] = std::sin(position * freq);
    e[half + i] = std::cos(position * freq);
  }
  return e;
}

}  // namespace nn
}  // namespace anyglyph

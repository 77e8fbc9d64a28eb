#include "anyglyph/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace anyglyph {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return s.str();
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw InvalidConfig("bad value '" + value + "' for " + key);
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw InvalidConfig("bad value '" + value + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw InvalidConfig("bad boolean '" + value + "' for " + key);
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class T>
Field field(T TrainConfig::*member) {
  Field f;
  f.set = [member](TrainConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, double>) {
      c.*member = parse_double("value", v);
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool("value", v);
    } else if constexpr (std::is_same_v<T, InjectionMode>) {
      c.*member = parse_injection_mode(v);
    } else if constexpr (std::is_same_v<T, CodecMode>) {
      c.*member = parse_codec_mode(v);
    } else {
      c.*member = parse_number<T>("value", v);
    }
  };
  f.get = [member](const TrainConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, double>) {
      return format_double(c.*member);
    } else if constexpr (std::is_same_v<T, bool>) {
      return c.*member ? "true" : "false";
    } else if constexpr (std::is_same_v<T, InjectionMode> || std::is_same_v<T, CodecMode>) {
      return to_string(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"lr", field(&TrainConfig::lr)},
      {"batch", field(&TrainConfig::batch)},
      {"epochs", field(&TrainConfig::epochs)},
      {"lambda", field(&TrainConfig::lambda)},
      {"T", field(&TrainConfig::T)},
      {"image_size", field(&TrainConfig::image_size)},
      {"seed", field(&TrainConfig::seed)},
      {"use_ci", field(&TrainConfig::use_ci)},
      {"use_ct", field(&TrainConfig::use_ct)},
      {"use_lfl", field(&TrainConfig::use_lfl)},
      {"injection_mode", field(&TrainConfig::injection_mode)},
      {"beta1", field(&TrainConfig::beta1)},
      {"beta2", field(&TrainConfig::beta2)},
      {"eps", field(&TrainConfig::eps)},
      {"steps", field(&TrainConfig::steps)},
      {"beta_start", field(&TrainConfig::beta_start)},
      {"beta_end", field(&TrainConfig::beta_end)},
      {"eq6_literal", field(&TrainConfig::eq6_literal)},
      {"lfl_stride", field(&TrainConfig::lfl_stride)},
      {"grad_clip", field(&TrainConfig::grad_clip)},
      {"cosine_lr", field(&TrainConfig::cosine_lr)},
      {"checkpoint_every", field(&TrainConfig::checkpoint_every)},
      {"codec_mode", field(&TrainConfig::codec_mode)},
      {"codec_factor", field(&TrainConfig::codec_factor)},
      {"latent_channels", field(&TrainConfig::latent_channels)},
      {"codec_hidden", field(&TrainConfig::codec_hidden)},
      {"codec_steps", field(&TrainConfig::codec_steps)},
      {"codec_lr", field(&TrainConfig::codec_lr)},
      {"base_channels", field(&TrainConfig::base_channels)},
      {"ffem_channels", field(&TrainConfig::ffem_channels)},
      {"cond_dim", field(&TrainConfig::cond_dim)},
      {"num_tokens", field(&TrainConfig::num_tokens)},
      {"freeze_text_encoder", field(&TrainConfig::freeze_text_encoder)},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return names;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) {
    std::string valid;
    for (const auto& k : keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw InvalidConfig("unknown config key '" + key + "'; valid keys: " + valid);
  }
  try {
    f->set(*this, value);
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(std::string(e.what()) + " (key '" + key + "')");
  }
}

std::string TrainConfig::get(const std::string& key) const {
  const Field* f = find_field(key);
  if (!f) throw InvalidConfig("unknown config key '" + key + "'");
  return f->get(*this);
}

void TrainConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidConfig("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw InvalidConfig(msg);
  };
  need(lr > 0, "lr must be > 0");
  need(batch >= 1, "batch must be >= 1");
  need(epochs >= 0, "epochs must be >= 0");
  need(lambda >= 0, "lambda must be >= 0");
  need(T >= 1, "T must be >= 1");
  need(steps >= 0, "steps must be >= 0");
  need(lfl_stride >= 1, "lfl_stride must be >= 1");
  need(grad_clip > 0, "grad_clip must be > 0");
  need(image_size >= 16, "image_size must be >= 16");
  need(base_channels >= 1 && ffem_channels >= 1 && cond_dim >= 1 && num_tokens >= 1,
       "channel and token counts must be positive");
  need(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0, "bad Adam hyperparameters");
  if (image_size % (codec_factor * 2)) {
    throw InvalidConfig("image_size must be divisible by 2 * codec_factor = " + std::to_string(2 * codec_factor));
  }
  (void)schedule();
  codec();
}

std::string TrainConfig::to_text() const {
  std::string s;
  for (const auto& [name, f] : fields()) s += name + " = " + f.get(*this) + "\n";
  return s;
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IOFailure("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void TrainConfig::save(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IOFailure("cannot write config " + file.string());
  out << to_text();
}

NoiseSchedule TrainConfig::schedule() const { return make_schedule(T, beta_start, beta_end); }

CodecConfig TrainConfig::codec() const {
  if (codec_mode == CodecMode::fixed) {
    CodecConfig c = CodecConfig::fixed(codec_factor);
    if (latent_channels != c.latent_channels) {
      throw InvalidConfig("fixed codec with factor " + std::to_string(codec_factor) + " needs latent_channels = " +
                          std::to_string(c.latent_channels));
    }
    return c;
  }
  return CodecConfig{codec_factor, latent_channels, CodecMode::learned, codec_hidden};
}

}  // namespace anyglyph

#include "anyglyph/glyph_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#include "anyglyph/nn.hpp"
#include "stb_truetype.h"

extern "C" {
extern const unsigned char anyglyph_bundled_sans_ttf[];
extern const unsigned long anyglyph_bundled_sans_ttf_size;
}

namespace anyglyph::synth {

namespace {

constexpr std::u32string_view kLatin26 = U"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
constexpr std::u32string_view kChineseMini =
    U"一二三四五六七八九十百千萬人大小中上下山水火木金土日月天地風雲雨雪花草鳥魚馬牛羊犬心手口目耳足力刀"
    U"文字書學生先明白黑紅長高左右東西南北春夏秋冬年時分家國王子女父母兄弟友好愛美永光石田川林森竹米貝車門電";
constexpr std::u32string_view kKoreanMini =
    U"가각간갈감강개거건걸검것게겨결경계고공과관광교구국군권그근글금기길김나남내너년노는느니다단달담대더데도동되된두드들등디따";

struct FontFace {
  std::vector<unsigned char> bytes;
  const unsigned char* data = nullptr;
  stbtt_fontinfo info{};
};

const FontFace& font_face(const std::string& font_id) {
  static std::mutex mu;
  static std::map<std::string, std::unique_ptr<FontFace>> cache;
  std::lock_guard lock(mu);
  if (auto it = cache.find(font_id); it != cache.end()) return *it->second;

  auto face = std::make_unique<FontFace>();
  std::filesystem::path override_path;
  if (const char* dir = std::getenv("ANYGLYPH_CACHE")) {
    override_path = std::filesystem::path(dir) / "fonts" / (font_id + ".ttf");
  }
  if (!override_path.empty() && std::filesystem::exists(override_path)) {
    std::ifstream in(override_path, std::ios::binary);
    face->bytes.assign(std::istreambuf_iterator<char>(in), {});
    face->data = face->bytes.data();
  } else if (font_id == kDefaultFont) {
    face->data = anyglyph_bundled_sans_ttf;
  } else {
    throw InvalidConfig("unknown font id '" + font_id + "'");
  }
  if (!stbtt_InitFont(&face->info, face->data, stbtt_GetFontOffsetForIndex(face->data, 0))) {
    throw IOFailure("cannot parse font '" + font_id + "'");
  }
  return *cache.emplace(font_id, std::move(face)).first->second;
}

double channel(std::uint8_t v) { return v / 255.0; }

struct Color {
  double r, g, b;
};

Color to_color(Rgb c) { return {channel(c.r), channel(c.g), channel(c.b)}; }

Color lerp(const Color& a, const Color& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  auto byte = [](double u) { return static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0)); };
  return {byte(r + m), byte(g + m), byte(b + m)};
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Smooth lattice noise in [0, 1] with `cell` pixel spacing.
class ValueNoise {
 public:
  ValueNoise(std::uint64_t seed, double cell) : seed_(seed), cell_(std::max(1.0, cell)) {}

  double operator()(double x, double y) const {
    const double fx = x / cell_, fy = y / cell_;
    const long ix = static_cast<long>(std::floor(fx)), iy = static_cast<long>(std::floor(fy));
    const double tx = smooth(fx - ix), ty = smooth(fy - iy);
    const double a = lattice(ix, iy), b = lattice(ix + 1, iy);
    const double c = lattice(ix, iy + 1), d = lattice(ix + 1, iy + 1);
    return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  double lattice(long x, long y) const {
    const std::uint64_t h = mix_seed(seed_, {static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y)});
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
  }

  std::uint64_t seed_;
  double cell_;
};

}  // namespace

StyleParams identity_style() {
  StyleParams s;
  s.style_id = "identity";
  s.fill = {{0, 0, 0}, {0, 0, 0}, GradientDirection::vertical};
  s.outline = {{0, 0, 0}, 0};
  s.texture = {};
  s.background = {255, 255, 255};
  return s;
}

std::string style_id_for(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%04d", index);
  return buf;
}

StyleParams make_style(const std::string& style_id, std::uint64_t global_seed) {
  Rng rng(mix_seed(global_seed, {fnv1a(style_id)}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  StyleParams s;
  s.style_id = style_id;

  const bool dark_on_light = u(rng) < 0.7;
  const double bg_v = dark_on_light ? 0.85 + 0.15 * u(rng) : 0.05 + 0.15 * u(rng);
  s.background = hsv_to_rgb(u(rng), 0.25 * u(rng), bg_v);

  auto fill_color = [&] {
    const double v = dark_on_light ? 0.15 + 0.4 * u(rng) : 0.75 + 0.25 * u(rng);
    return hsv_to_rgb(u(rng), 0.5 + 0.5 * u(rng), v);
  };
  s.fill.from = fill_color();
  s.fill.to = u(rng) < 0.5 ? fill_color() : s.fill.from;
  s.fill.direction = static_cast<GradientDirection>(static_cast<int>(u(rng) * 3.0) % 3);

  const int widths[] = {0, 0, 2, 4};
  s.outline.width = widths[static_cast<int>(u(rng) * 4.0) % 4];
  s.outline.color = hsv_to_rgb(u(rng), 0.6 + 0.4 * u(rng), dark_on_light ? 0.5 + 0.4 * u(rng) : 0.3 + 0.3 * u(rng));

  s.texture.kind = static_cast<TextureKind>(static_cast<int>(u(rng) * 4.0) % 4);
  s.texture.scale = 0.08 + 0.2 * u(rng);
  s.texture.strength = s.texture.kind == TextureKind::none ? 0.0 : 0.2 + 0.3 * u(rng);
  s.texture.seed = rng();
  s.texture.color = hsv_to_rgb(u(rng), 0.3 * u(rng), dark_on_light ? 0.5 + 0.3 * u(rng) : 0.2 + 0.3 * u(rng));
  return s;
}

bool font_has_glyph(const std::string& font_id, Codepoint c) {
  return stbtt_FindGlyphIndex(&font_face(font_id).info, static_cast<int>(c)) != 0;
}

double foreground_fraction(const Image& glyph) {
  require_rgb(glyph, "foreground_fraction");
  const Eigen::Index plane = glyph.size() / 3;
  Eigen::Index fg = 0;
  for (Eigen::Index i = 0; i < plane; ++i) {
    if (glyph[i] < 1.0 || glyph[plane + i] < 1.0 || glyph[2 * plane + i] < 1.0) ++fg;
  }
  return static_cast<double>(fg) / static_cast<double>(plane);
}

Image render_glyph(const GlyphSpec& spec) {
  if (spec.canvas < 16) throw CanvasTooSmall("canvas " + std::to_string(spec.canvas) + " < 16");
  const FontFace& face = font_face(spec.font_id);
  const int glyph = stbtt_FindGlyphIndex(&face.info, static_cast<int>(spec.codepoint));
  if (glyph == 0) {
    throw UnrenderableCodepoint("font '" + spec.font_id + "' has no glyph for U+" + codepoint_hex(spec.codepoint));
  }

  const int canvas = spec.canvas;
  float scale = stbtt_ScaleForMappingEmToPixels(&face.info, 0.8f * static_cast<float>(canvas));
  int x0, y0, x1, y1;
  stbtt_GetGlyphBitmapBox(&face.info, glyph, scale, scale, &x0, &y0, &x1, &y1);
  const float limit = 0.9f * static_cast<float>(canvas);
  if (x1 - x0 > limit || y1 - y0 > limit) {
    scale *= limit / static_cast<float>(std::max(x1 - x0, y1 - y0) + 1);
    stbtt_GetGlyphBitmapBox(&face.info, glyph, scale, scale, &x0, &y0, &x1, &y1);
  }
  const int bw = x1 - x0, bh = y1 - y0;
  if (bw <= 0 || bh <= 0) {
    throw UnrenderableCodepoint("glyph U+" + codepoint_hex(spec.codepoint) + " renders blank");
  }
  std::vector<unsigned char> coverage(static_cast<std::size_t>(bw) * bh, 0);
  stbtt_MakeGlyphBitmap(&face.info, coverage.data(), bw, bh, bw, scale, scale, glyph);

  Image img = make_image(canvas, canvas, 1.0, 1.0, 1.0);
  const int ox = (canvas - bw) / 2, oy = (canvas - bh) / 2;
  for (int y = 0; y < bh; ++y) {
    for (int x = 0; x < bw; ++x) {
      const int cy = oy + y, cx = ox + x;
      if (cy < 0 || cy >= canvas || cx < 0 || cx >= canvas) continue;
      const double v = 1.0 - coverage[static_cast<std::size_t>(y) * bw + x] / 255.0;
      for (int c = 0; c < 3; ++c) img.at(c, cy, cx) = v;
    }
  }
  const double fg = foreground_fraction(img);
  if (fg < 0.01 || fg > 0.9) {
    throw UnrenderableCodepoint("glyph U+" + codepoint_hex(spec.codepoint) + " foreground fraction " +
                                std::to_string(fg) + " outside [0.01, 0.9]");
  }
  return img;
}

Image apply_style(const Image& glyph, const StyleParams& style, std::uint64_t seed) {
  require_rgb(glyph, "apply_style");
  const int h = glyph.dim(1), w = glyph.dim(2);
  // Coverage: 1 on the glyph, 0 on the background.
  Eigen::ArrayXXd cover(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      cover(y, x) = std::clamp(1.0 - (glyph.at(0, y, x) + glyph.at(1, y, x) + glyph.at(2, y, x)) / 3.0, 0.0, 1.0);

  Eigen::ArrayXXd halo = Eigen::ArrayXXd::Zero(h, w);
  if (style.outline.width > 0) {
    const int r = std::max(1, static_cast<int>(std::lround(style.outline.width * h / 128.0)));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double m = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            if (dx * dx + dy * dy > r * r) continue;
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w) m = std::max(m, cover(yy, xx));
          }
        halo(y, x) = m;
      }
  }

  const Texture& tex = style.texture;
  const double feature = std::max(1.0, tex.scale * h);
  const ValueNoise noise(mix_seed(tex.seed, {seed}), feature);
  const double phase = static_cast<double>(mix_seed(tex.seed, {seed, 1}) % 1000) / 1000.0;
  auto texture_at = [&](int x, int y) -> double {
    switch (tex.kind) {
      case TextureKind::value_noise: return noise(x, y);
      case TextureKind::stripes: return 0.5 + 0.5 * std::sin(2.0 * M_PI * ((x + y) / feature + phase));
      case TextureKind::dots: {
        const double fx = std::fmod(x / feature + phase, 1.0) - 0.5, fy = std::fmod(y / feature + phase, 1.0) - 0.5;
        return fx * fx + fy * fy < 0.09 ? 1.0 : 0.0;
      }
      case TextureKind::none: break;
    }
    return 0.0;
  };

  const Color bg = to_color(style.background), outline = to_color(style.outline.color);
  const Color from = to_color(style.fill.from), to = to_color(style.fill.to), tex_color = to_color(tex.color);
  Image out({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double t = 0.0;
      switch (style.fill.direction) {
        case GradientDirection::vertical: t = h > 1 ? double(y) / (h - 1) : 0.0; break;
        case GradientDirection::horizontal: t = w > 1 ? double(x) / (w - 1) : 0.0; break;
        case GradientDirection::diagonal: t = (h + w > 2) ? double(x + y) / (h + w - 2) : 0.0; break;
      }
      Color fill = lerp(from, to, t);
      if (tex.kind != TextureKind::none) fill = lerp(fill, tex_color, tex.strength * texture_at(x, y));
      Color px = bg;
      if (style.outline.width > 0) px = lerp(px, outline, halo(y, x));
      px = lerp(px, fill, cover(y, x));
      out.at(0, y, x) = std::clamp(px.r, 0.0, 1.0);
      out.at(1, y, x) = std::clamp(px.g, 0.0, 1.0);
      out.at(2, y, x) = std::clamp(px.b, 0.0, 1.0);
    }
  }
  return out;
}

std::string make_prompt(Codepoint c, const std::string& style_id) {
  return "render glyph \"" + utf8_encode(c) + "\" in style " + style_id;
}

std::string utf8_encode(Codepoint c) {
  std::string s;
  const auto u = static_cast<std::uint32_t>(c);
  if (u < 0x80) {
    s += static_cast<char>(u);
  } else if (u < 0x800) {
    s += static_cast<char>(0xC0 | (u >> 6));
    s += static_cast<char>(0x80 | (u & 0x3F));
  } else if (u < 0x10000) {
    s += static_cast<char>(0xE0 | (u >> 12));
    s += static_cast<char>(0x80 | ((u >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (u & 0x3F));
  } else {
    s += static_cast<char>(0xF0 | (u >> 18));
    s += static_cast<char>(0x80 | ((u >> 12) & 0x3F));
    s += static_cast<char>(0x80 | ((u >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (u & 0x3F));
  }
  return s;
}

std::string utf8_encode(const std::vector<Codepoint>& cps) {
  std::string s;
  for (Codepoint c : cps) s += utf8_encode(c);
  return s;
}

std::vector<Codepoint> utf8_decode(const std::string& s) {
  std::vector<Codepoint> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    int len = 1;
    std::uint32_t cp = b;
    if (b >= 0xF0) len = 4, cp = b & 0x07;
    else if (b >= 0xE0) len = 3, cp = b & 0x0F;
    else if (b >= 0xC0) len = 2, cp = b & 0x1F;
    if (i + len > s.size()) throw InvalidConfig("truncated UTF-8 sequence");
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back(static_cast<Codepoint>(cp));
    i += static_cast<std::size_t>(len);
  }
  return out;
}

std::string codepoint_hex(Codepoint c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(c));
  return buf;
}

Codepoint parse_codepoint_hex(const std::string& hex) {
  std::size_t used = 0;
  const unsigned long v = std::stoul(hex, &used, 16);
  if (used != hex.size()) throw InvalidConfig("bad codepoint hex '" + hex + "'");
  return static_cast<Codepoint>(v);
}

std::vector<std::string> preset_names() { return {"latin26", "chinese-mini", "korean-mini"}; }

std::vector<Codepoint> charset_preset(const std::string& name) {
  std::u32string_view src;
  if (name == "latin26") src = kLatin26;
  else if (name == "chinese-mini") src = kChineseMini;
  else if (name == "korean-mini") src = kKoreanMini;
  else throw InvalidConfig("unknown charset preset '" + name + "'");
  return {src.begin(), src.end()};
}

std::vector<Codepoint> load_charset(const std::string& file_or_preset) {
  const auto presets = preset_names();
  if (std::find(presets.begin(), presets.end(), file_or_preset) != presets.end()) {
    return charset_preset(file_or_preset);
  }
  std::ifstream in(file_or_preset, std::ios::binary);
  if (!in) throw IOFailure("cannot open charset file '" + file_or_preset + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::vector<Codepoint> out;
  std::set<Codepoint> seen;
  for (Codepoint c : utf8_decode(ss.str())) {
    if (c == U' ' || c == U'\n' || c == U'\r' || c == U'\t' || c == 0xFEFF) continue;
    if (seen.insert(c).second) out.push_back(c);
  }
  return out;
}

std::vector<std::string> Manifest::style_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (std::find(ids.begin(), ids.end(), r.style_id) == ids.end()) ids.push_back(r.style_id);
  }
  return ids;
}

std::string format_manifest_line(const ManifestRecord& r) {
  return r.id + '\t' + codepoint_hex(r.codepoint) + '\t' + r.style_id + '\t' + r.path_x0 + '\t' + r.path_lg + '\t' +
         r.path_lr + '\t' + r.prompt;
}

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRecord>& records) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IOFailure("cannot write manifest " + file.string());
  for (const auto& r : records) out << format_manifest_line(r) << '\n';
  if (!out) throw IOFailure("write failed for manifest " + file.string());
}

Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IOFailure("cannot open manifest " + file.string());
  Manifest m;
  m.root = file.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int k = 0; k < 6; ++k) {
      const std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) break;
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));
    if (fields.size() != 7) {
      throw IOFailure(file.string() + ":" + std::to_string(lineno) + ": expected 7 tab-separated fields");
    }
    ManifestRecord r;
    r.id = fields[0];
    r.codepoint = parse_codepoint_hex(fields[1]);
    r.style_id = fields[2];
    r.path_x0 = fields[3];
    r.path_lg = fields[4];
    r.path_lr = fields[5];
    r.prompt = fields[6];
    m.records.push_back(std::move(r));
  }
  return m;
}

std::vector<GlyphSample> load_samples(const Manifest& m, int size) {
  std::vector<GlyphSample> out;
  out.reserve(m.records.size());
  auto load = [&](const std::string& rel) {
    Image img = read_png(m.resolve(rel));
    return size > 0 ? resize_nearest(img, size) : img;
  };
  for (const auto& r : m.records) {
    out.push_back({r.id, r.codepoint, r.style_id, load(r.path_x0), load(r.path_lg), load(r.path_lr), r.prompt});
  }
  return out;
}

Dataset build_dataset(const DatasetOptions& options) {
  if (options.charset.empty()) throw EmptyCharset("charset is empty");
  if (options.charset.size() < 2) throw EmptyCharset("charset needs at least two characters for references");
  if (options.n_styles < 1) throw InvalidConfig("n_styles must be >= 1");
  if (!(options.split >= 0.0 && options.split <= 1.0)) throw InvalidConfig("split must lie in [0, 1]");

  const auto& out = options.out_dir;
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IOFailure("cannot create " + out.string() + ": " + ec.message());

  std::vector<Image> glyphs;
  std::vector<std::string> glyph_paths;
  for (Codepoint c : options.charset) {
    glyphs.push_back(render_glyph({c, options.font_id, options.canvas}));
    glyph_paths.push_back("glyphs/" + codepoint_hex(c) + ".png");
    write_png(out / glyph_paths.back(), glyphs.back());
  }

  const int n_train = static_cast<int>(std::lround(options.n_styles * options.split));
  Dataset ds;
  const int n = static_cast<int>(options.charset.size());
  for (int s = 0; s < options.n_styles; ++s) {
    const std::string sid = style_id_for(s);
    const StyleParams style = make_style(sid, options.seed);
    std::vector<std::string> x0_paths;
    for (int ci = 0; ci < n; ++ci) {
      x0_paths.push_back("styles/" + sid + "/" + codepoint_hex(options.charset[ci]) + ".png");
      write_png(out / x0_paths.back(), apply_style(glyphs[ci], style, options.seed));
    }
    for (int ci = 0; ci < n; ++ci) {
      Rng rng(mix_seed(options.seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(ci), 0x5EF}));
      std::uniform_int_distribution<int> pick(0, n - 2);
      int ref = pick(rng);
      if (ref >= ci) ++ref;
      ManifestRecord r;
      r.id = sid + "_" + codepoint_hex(options.charset[ci]);
      r.codepoint = options.charset[ci];
      r.style_id = sid;
      r.path_x0 = x0_paths[ci];
      r.path_lg = glyph_paths[ci];
      r.path_lr = x0_paths[ref];
      r.prompt = make_prompt(options.charset[ci], sid);
      (s < n_train ? ds.train : ds.test).records.push_back(r);
      ds.all.records.push_back(std::move(r));
    }
  }
  write_manifest(out / "manifest.tsv", ds.all.records);
  write_manifest(out / "train.tsv", ds.train.records);
  write_manifest(out / "test.tsv", ds.test.records);
  ds.all.root = ds.train.root = ds.test.root = out;
  return ds;
}

ManifestCheck validate_manifest(const Manifest& m, bool check_images) {
  ManifestCheck check;
  std::map<std::string, const ManifestRecord*> by_x0;
  for (const auto& r : m.records) by_x0[r.path_x0] = &r;
  for (const auto& r : m.records) {
    ++check.samples;
    auto it = by_x0.find(r.path_lr);
    if (it == by_x0.end()) {
      check.problems.push_back(r.id + ": reference " + r.path_lr + " is not a sample of this manifest");
    } else {
      if (it->second->style_id == r.style_id) ++check.style_consistent;
      else check.problems.push_back(r.id + ": reference style " + it->second->style_id + " != " + r.style_id);
      if (it->second->codepoint != r.codepoint) ++check.no_leakage;
      else check.problems.push_back(r.id + ": reference shows the target character");
    }
    if (check_images) {
      try {
        const Image x0 = read_png(m.resolve(r.path_x0));
        const Image lg = read_png(m.resolve(r.path_lg));
        const Image lr = read_png(m.resolve(r.path_lr));
        if (x0.same_shape(lg) && x0.same_shape(lr) && x0.dim(1) == x0.dim(2)) ++check.valid_images;
        else check.problems.push_back(r.id + ": image shapes differ");
      } catch (const Error& e) {
        check.problems.push_back(r.id + ": " + e.what());
      }
    }
  }
  return check;
}

}  // namespace anyglyph::synth

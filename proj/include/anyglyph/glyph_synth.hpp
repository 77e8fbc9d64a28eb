#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anyglyph/image.hpp"

namespace anyglyph::synth {

using Codepoint = char32_t;

inline constexpr const char* kDefaultFont = "bundled-sans";

struct GlyphSpec {
  Codepoint codepoint = U'A';
  std::string font_id = kDefaultFont;
  int canvas = 128;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

enum class GradientDirection { vertical, horizontal, diagonal };

/// Solid colour when `from == to`, otherwise a 2-stop linear gradient.
struct Fill {
  Rgb from;
  Rgb to;
  GradientDirection direction = GradientDirection::vertical;
};

/// `width` is in pixels at a 128 px canvas and scales with the canvas.
struct Outline {
  Rgb color;
  int width = 0;
};

enum class TextureKind { none, value_noise, stripes, dots };

/// Procedural modulation of the fill towards `color`. `scale` is the feature
/// size as a fraction of the canvas.
struct Texture {
  TextureKind kind = TextureKind::none;
  double scale = 0.2;
  double strength = 0.0;
  std::uint64_t seed = 0;
  Rgb color;
};

struct StyleParams {
  std::string style_id;
  Fill fill;
  Outline outline;
  Texture texture;
  Rgb background{255, 255, 255};
};

/// Black fill on white, no outline or texture.
StyleParams identity_style();

/// Pure function of (style_id, global_seed).
StyleParams make_style(const std::string& style_id, std::uint64_t global_seed);

/// "s0007" for index 7.
std::string style_id_for(int index);

/// Black glyph centred on a white canvas.
/// Throws UnrenderableCodepoint (missing or blank glyph, <1% foreground) and CanvasTooSmall (<16 px).
Image render_glyph(const GlyphSpec& spec);

/// Fraction of pixels that differ from the white background.
double foreground_fraction(const Image& glyph);

/// Recolours a rendered glyph: background, then outline, then textured fill.
Image apply_style(const Image& glyph, const StyleParams& style, std::uint64_t seed);

/// `render glyph "<char>" in style <style_id>`
std::string make_prompt(Codepoint c, const std::string& style_id);

std::string utf8_encode(Codepoint c);
std::string utf8_encode(const std::vector<Codepoint>& cps);
std::vector<Codepoint> utf8_decode(const std::string& s);

/// Uppercase hex, at least four digits ("0041").
std::string codepoint_hex(Codepoint c);
Codepoint parse_codepoint_hex(const std::string& hex);

/// Names accepted by charset_preset().
std::vector<std::string> preset_names();
/// latin26, chinese-mini (100 ideographs), korean-mini (60 syllables).
std::vector<Codepoint> charset_preset(const std::string& name);
/// A preset name, or a UTF-8 file whose non-whitespace codepoints (deduplicated, in order) form the charset.
std::vector<Codepoint> load_charset(const std::string& file_or_preset);

bool font_has_glyph(const std::string& font_id, Codepoint c);

struct ManifestRecord {
  std::string id;
  Codepoint codepoint = 0;
  std::string style_id;
  std::string path_x0;
  std::string path_lg;
  std::string path_lr;
  std::string prompt;
};

/// Line-delimited sample list. Paths are relative to `root`.
struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::vector<std::string> style_ids() const;
};

Manifest read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRecord>& records);
std::string format_manifest_line(const ManifestRecord& r);

/// One training example loaded into memory.
struct GlyphSample {
  std::string id;
  Codepoint codepoint = 0;
  std::string style_id;
  Image x0;  ///< styled target
  Image lg;  ///< uniform-font source glyph
  Image lr;  ///< styled reference of another character
  std::string prompt;
};

/// Loads every record, resizing images to `size` x `size` (0 keeps the stored size).
std::vector<GlyphSample> load_samples(const Manifest& m, int size = 0);

struct DatasetOptions {
  std::vector<Codepoint> charset;
  int n_styles = 1;
  std::uint64_t seed = 0;
  /// Fraction of styles assigned to the training split.
  double split = 1.0;
  std::filesystem::path out_dir;
  int canvas = 128;
  std::string font_id = kDefaultFont;
};

struct Dataset {
  Manifest all;
  Manifest train;
  Manifest test;
};

/// Writes glyphs/, styles/<style_id>/, manifest.tsv, train.tsv and test.tsv under out_dir.
Dataset build_dataset(const DatasetOptions& options);

struct ManifestCheck {
  std::size_t samples = 0;
  std::size_t style_consistent = 0;
  std::size_t no_leakage = 0;
  std::size_t valid_images = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Checks every record: x0 and lr come from the same style, lr is a different
/// character, and all three images load as canvas-sized RGB.
ManifestCheck validate_manifest(const Manifest& m, bool check_images = true);

}  // namespace anyglyph::synth

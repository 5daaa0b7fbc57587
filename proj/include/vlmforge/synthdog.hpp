#pragma once

// Synthetic OCR conversations: Wikipedia-style snippets typeset with
// randomized font, size, placement and slight rotation onto natural-image
// backgrounds. The assistant answer is always the exact rendered string.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "vlmforge/corpus.hpp"
#include "vlmforge/errors.hpp"
#include "vlmforge/font.hpp"
#include "vlmforge/rng.hpp"
#include "vlmforge/templates.hpp"

namespace vlmforge {

class MissingGlyphError : public Error {
 public:
  MissingGlyphError(std::size_t font, std::vector<char32_t> missing);
  std::size_t font;
  std::vector<char32_t> missing;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

class ContrastError : public Error {
 public:
  using Error::Error;
};

// One document per line; blank lines are skipped.
struct SnippetCorpus {
  std::vector<std::string> documents;
  static SnippetCorpus load(const std::filesystem::path& path);
};

struct LengthRange {
  std::size_t min_words = 2;
  std::size_t max_words = 8;
};

// A window of consecutive whitespace-separated words from one document,
// joined by single spaces. Bytes inside words are preserved. Throws
// ConfigError when the corpus is empty or no document is long enough.
std::string sample_snippet(const SnippetCorpus& corpus, Rng& rng, LengthRange length);

struct SynthConfig {
  double font_size_min = 14.0;  // points, rendered at 1 px per point
  double font_size_max = 48.0;
  double rotation_max_deg = 3.0;
  int regions_min = 1;
  int regions_max = 4;
  double wrap_min_fraction = 0.4;  // of image width
  double wrap_max_fraction = 0.9;
  int min_contrast = 60;  // luminance gap, 0-255
  int placement_tries = 20;
  int sample_tries = 8;
  LengthRange snippet_words{2, 8};
  double pl_ratio = 0.5;
  std::size_t jobs = 1;

  void validate() const;
};

struct RenderStyle {
  std::size_t font = 0;
  double size_pt = 24.0;
  int x = 0;  // top-left of the unrotated text box, pixels
  int y = 0;
  int wrap_width = 200;
  double rotation_deg = 0.0;
  int text_luminance = 0;
  bool dark_on_light = true;
};

struct TextRegion {
  std::string text;
  RenderStyle style;
};

// Corner points of a rendered region, after rotation, in image coordinates.
struct RegionGeometry {
  std::array<cv::Point2d, 4> corners;
  cv::Rect bounds;  // axis-aligned, integer, inclusive of all corners
};

struct RenderedPage {
  cv::Mat image;  // 8UC3, BGR, same size as the background
  std::string ground_truth;
  std::vector<RegionGeometry> regions;
};

class FontSet {
 public:
  // Every *.ttf / *.otf in `dir`, sorted by file name.
  static FontSet load(const std::filesystem::path& dir);
  static FontSet from_files(std::vector<std::filesystem::path> files);

  std::size_t size() const { return files_.size(); }
  const std::filesystem::path& file(std::size_t i) const { return files_.at(i); }
  const FontCoverage& coverage(std::size_t i) const { return coverage_.at(i); }
  std::vector<std::size_t> fonts_covering(std::string_view text) const;

 private:
  std::vector<std::filesystem::path> files_;
  std::vector<FontCoverage> coverage_;
};

// Wraps one FreeType face per font. Not thread-safe; use one per worker.
class TextRenderer {
 public:
  explicit TextRenderer(const FontSet& fonts);
  ~TextRenderer();
  TextRenderer(TextRenderer&&) noexcept;
  TextRenderer& operator=(TextRenderer&&) noexcept;

  // Grayscale coverage mask of `text` word-wrapped to wrap_width, plus the
  // tight box around the ink. Throws MissingGlyphError.
  struct Patch {
    cv::Mat mask;  // 8UC1
    cv::Rect ink;
  };
  Patch rasterize(const std::string& text, std::size_t font, double size_pt, int wrap_width);

  // Where the patch would land for `style` on an image of `size`.
  static RegionGeometry place(const Patch& patch, const RenderStyle& style);

  // Renders the regions in order; ground truth joins their texts with '\n'.
  // Throws MissingGlyphError, PlacementError (out of bounds or overlapping)
  // or ContrastError.
  RenderedPage render_page(std::span<const TextRegion> regions, const cv::Mat& background, int min_contrast);

  const FontSet& fonts() const { return *fonts_; }

 private:
  struct Faces;
  const FontSet* fonts_;
  std::unique_ptr<Faces> faces_;
};

// Mean BT.601 luminance of `image` inside `rect` (clipped to the image).
double mean_luminance(const cv::Mat& image, cv::Rect rect);

// Text luminance for a background luminance: dark text on light backgrounds
// and light text on dark ones, at least `min_contrast` away.
std::pair<int, bool> sample_text_luminance(double background_luminance, int min_contrast, Rng& rng);

class BackgroundPool {
 public:
  static BackgroundPool load(const std::filesystem::path& dir);
  static BackgroundPool from_images(std::vector<cv::Mat> images);

  std::size_t size() const;
  cv::Mat get(std::size_t i) const;  // throws IoError when unreadable

 private:
  std::vector<std::filesystem::path> files_;
  std::vector<cv::Mat> images_;
};

struct SynthEvent {
  std::size_t sample = 0;
  std::string kind;  // missing_glyph | placement_retry | sample_retry | background_reuse
  std::string detail;
};

struct OcrSample {
  cv::Mat image;
  std::string ground_truth;
  std::string instruction;
  std::string language;
  std::size_t background = 0;
};

// Deterministic in (seed, index): every sample draws from its own stream.
OcrSample generate_ocr_sample(std::size_t index, std::uint64_t seed, const std::string& language,
                              const BackgroundPool& backgrounds,
                              const std::map<std::string, SnippetCorpus>& corpora,
                              const InstructionTemplates& templates, const SynthConfig& config,
                              TextRenderer& renderer, std::vector<SynthEvent>& events);

// Polish for exactly round(n * pl_ratio) evenly spread indices.
std::string language_for_index(std::size_t index, std::size_t n, double pl_ratio);

struct OcrDataset {
  std::vector<Conversation> conversations;
  std::vector<SynthEvent> events;
};

// Generates n conversations (category ocr, one human/assistant pair) and
// writes each image to <out_dir>/images/<sha256>.png. The image_ref of each
// conversation is relative to out_dir.
OcrDataset make_ocr_dataset(std::size_t n, const BackgroundPool& backgrounds,
                            const std::map<std::string, SnippetCorpus>& corpora,
                            const InstructionTemplates& templates, const FontSet& fonts,
                            std::uint64_t seed, const SynthConfig& config,
                            const std::filesystem::path& out_dir);

}  // namespace vlmforge

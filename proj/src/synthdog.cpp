#include "vlmforge/synthdog.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <opencv2/freetype.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vlmforge/digest.hpp"
#include "vlmforge/io.hpp"
#include "vlmforge/parallel.hpp"

namespace vlmforge {

namespace {

std::string codepoints_to_string(const std::vector<char32_t>& cps) {
  std::string out;
  char buf[16];
  for (char32_t cp : cps) {
    std::snprintf(buf, sizeof buf, "%sU+%04X", out.empty() ? "" : " ", static_cast<unsigned>(cp));
    out += buf;
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

cv::Mat to_bgr(const cv::Mat& image) {
  cv::Mat out;
  if (image.type() == CV_8UC3) return image;
  if (image.type() == CV_8UC1) {
    cv::cvtColor(image, out, cv::COLOR_GRAY2BGR);
  } else if (image.type() == CV_8UC4) {
    cv::cvtColor(image, out, cv::COLOR_BGRA2BGR);
  } else {
    throw ConfigError("unsupported background pixel format");
  }
  return out;
}

// Maps patch coordinates to image coordinates for a style.
cv::Matx23d placement_matrix(const cv::Rect& ink, const RenderStyle& style) {
  const double theta = style.rotation_deg * CV_PI / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double cx = ink.x + ink.width / 2.0;
  const double cy = ink.y + ink.height / 2.0;
  const double tx = style.x + ink.width / 2.0;
  const double ty = style.y + ink.height / 2.0;
  return {c, -s, tx - c * cx + s * cy, s, c, ty - s * cx - c * cy};
}

bool inside(const cv::Rect& r, const cv::Size& size) {
  return r.x >= 0 && r.y >= 0 && r.x + r.width <= size.width && r.y + r.height <= size.height;
}

}  // namespace

MissingGlyphError::MissingGlyphError(std::size_t f, std::vector<char32_t> m)
    : Error("font " + std::to_string(f) + " lacks glyphs: " + codepoints_to_string(m)),
      font(f),
      missing(std::move(m)) {}

SnippetCorpus SnippetCorpus::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  SnippetCorpus c;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) c.documents.push_back(line);
  }
  return c;
}

std::string sample_snippet(const SnippetCorpus& corpus, Rng& rng, LengthRange length) {
  if (corpus.documents.empty()) throw ConfigError("snippet corpus is empty");
  if (length.min_words == 0 || length.max_words < length.min_words) {
    throw ConfigError("invalid snippet length range");
  }
  std::vector<std::size_t> eligible;
  std::vector<std::vector<std::string>> words(corpus.documents.size());
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    words[i] = split_words(corpus.documents[i]);
    if (words[i].size() >= length.min_words) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw ConfigError("no corpus document has at least " + std::to_string(length.min_words) + " words");
  }
  const auto& doc = words[eligible[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))]];
  const std::size_t max_len = std::min(length.max_words, doc.size());
  const auto len = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(length.min_words), static_cast<std::int64_t>(max_len)));
  const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(doc.size() - len)));
  std::string out;
  for (std::size_t i = start; i < start + len; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += doc[i];
  }
  return out;
}

void SynthConfig::validate() const {
  if (!(font_size_min > 0 && font_size_max >= font_size_min)) throw ConfigError("invalid font size range");
  if (!(rotation_max_deg >= 0 && rotation_max_deg < 45)) throw ConfigError("invalid rotation range");
  if (regions_min < 1 || regions_max < regions_min) throw ConfigError("invalid region count range");
  if (!(wrap_min_fraction > 0 && wrap_max_fraction <= 1 && wrap_min_fraction <= wrap_max_fraction)) {
    throw ConfigError("invalid wrap width range");
  }
  if (min_contrast < 0 || min_contrast > 127) throw ConfigError("min_contrast must lie in [0, 127]");
  if (placement_tries < 1 || sample_tries < 1) throw ConfigError("retry counts must be positive");
  if (!(pl_ratio >= 0 && pl_ratio <= 1)) throw ConfigError("pl_ratio must lie in [0, 1]");
}

FontSet FontSet::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("fonts directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (entry.is_regular_file() && (ext == ".ttf" || ext == ".otf")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return from_files(std::move(files));
}

FontSet FontSet::from_files(std::vector<std::filesystem::path> files) {
  if (files.empty()) throw ConfigError("font set is empty");
  FontSet set;
  set.files_ = std::move(files);
  for (const auto& f : set.files_) set.coverage_.push_back(FontCoverage::from_file(f));
  return set;
}

std::vector<std::size_t> FontSet::fonts_covering(std::string_view text) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < coverage_.size(); ++i) {
    if (coverage_[i].covers_text(text)) out.push_back(i);
  }
  return out;
}

struct TextRenderer::Faces {
  std::vector<cv::Ptr<cv::freetype::FreeType2>> faces;
};

TextRenderer::TextRenderer(const FontSet& fonts) : fonts_(&fonts), faces_(std::make_unique<Faces>()) {
  for (std::size_t i = 0; i < fonts.size(); ++i) {
    auto ft = cv::freetype::createFreeType2();
    ft->loadFontData(fonts.file(i).string(), 0);
    faces_->faces.push_back(std::move(ft));
  }
}

TextRenderer::~TextRenderer() = default;
TextRenderer::TextRenderer(TextRenderer&&) noexcept = default;
TextRenderer& TextRenderer::operator=(TextRenderer&&) noexcept = default;

TextRenderer::Patch TextRenderer::rasterize(const std::string& text, std::size_t font, double size_pt,
                                            int wrap_width) {
  if (font >= fonts_->size()) throw ConfigError("font index out of range");
  if (auto missing = fonts_->coverage(font).missing(text); !missing.empty()) {
    throw MissingGlyphError(font, std::move(missing));
  }
  auto& face = *faces_->faces[font];
  const int height = std::max(1, static_cast<int>(std::lround(size_pt)));
  auto width_of = [&](const std::string& s) {
    int baseline = 0;
    return face.getTextSize(s, height, -1, &baseline).width;
  };

  std::vector<std::string> lines;
  for (const auto& word : split_words(text)) {
    if (!lines.empty() && width_of(lines.back() + " " + word) <= wrap_width) {
      lines.back() += " " + word;
    } else {
      lines.push_back(word);
    }
  }
  if (lines.empty()) throw PlacementError("nothing to render");

  int max_width = 0;
  for (const auto& l : lines) max_width = std::max(max_width, width_of(l));
  const int pad = height;
  const int line_height = static_cast<int>(std::lround(height * 1.35));
  cv::Mat canvas(static_cast<int>(lines.size()) * line_height + 2 * pad, max_width + 2 * pad, CV_8UC3,
                 cv::Scalar::all(0));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    face.putText(canvas, lines[i], {pad, pad + static_cast<int>(i) * line_height}, height,
                 cv::Scalar::all(255), -1, cv::LINE_AA, false);
  }
  Patch p;
  cv::extractChannel(canvas, p.mask, 0);
  p.ink = cv::boundingRect(p.mask);
  if (p.ink.empty()) throw PlacementError("text rendered no ink");
  return p;
}

RegionGeometry TextRenderer::place(const Patch& patch, const RenderStyle& style) {
  const auto m = placement_matrix(patch.ink, style);
  const cv::Rect& r = patch.ink;
  const cv::Point2d src[4] = {{double(r.x), double(r.y)},
                              {double(r.x + r.width), double(r.y)},
                              {double(r.x + r.width), double(r.y + r.height)},
                              {double(r.x), double(r.y + r.height)}};
  RegionGeometry g;
  double x0 = 1e18, y0 = 1e18, x1 = -1e18, y1 = -1e18;
  for (int i = 0; i < 4; ++i) {
    const cv::Point2d p{m(0, 0) * src[i].x + m(0, 1) * src[i].y + m(0, 2),
                        m(1, 0) * src[i].x + m(1, 1) * src[i].y + m(1, 2)};
    g.corners[i] = p;
    x0 = std::min(x0, p.x), y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x), y1 = std::max(y1, p.y);
  }
  const int ix0 = static_cast<int>(std::floor(x0)) - 1;
  const int iy0 = static_cast<int>(std::floor(y0)) - 1;
  const int ix1 = static_cast<int>(std::ceil(x1)) + 1;
  const int iy1 = static_cast<int>(std::ceil(y1)) + 1;
  g.bounds = cv::Rect(ix0, iy0, ix1 - ix0, iy1 - iy0);
  return g;
}

RenderedPage TextRenderer::render_page(std::span<const TextRegion> regions, const cv::Mat& background,
                                       int min_contrast) {
  if (background.empty()) throw ConfigError("empty background image");
  const cv::Mat bg = to_bgr(background);
  RenderedPage page;
  page.image = bg.clone();
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const TextRegion& region = regions[i];
    const Patch patch = rasterize(region.text, region.style.font, region.style.size_pt, region.style.wrap_width);
    RegionGeometry geom = place(patch, region.style);
    if (!inside(geom.bounds, bg.size())) throw PlacementError("text box leaves the image");
    for (const auto& other : page.regions) {
      if ((other.bounds & geom.bounds).area() > 0) throw PlacementError("text boxes overlap");
    }
    const double bg_lum = mean_luminance(bg, geom.bounds);
    if (std::abs(region.style.text_luminance - bg_lum) < min_contrast) {
      throw ContrastError("luminance gap " + std::to_string(std::abs(region.style.text_luminance - bg_lum)) +
                          " below " + std::to_string(min_contrast));
    }

    cv::Mat alpha;
    cv::warpAffine(patch.mask, alpha, cv::Mat(placement_matrix(patch.ink, region.style)), bg.size(),
                   cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(0));
    const int lum = region.style.text_luminance;
    for (int y = geom.bounds.y; y < geom.bounds.y + geom.bounds.height; ++y) {
      const auto* a = alpha.ptr<std::uint8_t>(y);
      auto* px = page.image.ptr<cv::Vec3b>(y);
      for (int x = geom.bounds.x; x < geom.bounds.x + geom.bounds.width; ++x) {
        if (a[x] == 0) continue;
        for (int c = 0; c < 3; ++c) {
          px[x][c] = static_cast<std::uint8_t>((px[x][c] * (255 - a[x]) + lum * a[x] + 127) / 255);
        }
      }
    }
    if (!page.ground_truth.empty() || i > 0) page.ground_truth.push_back('\n');
    page.ground_truth += region.text;
    page.regions.push_back(std::move(geom));
  }
  return page;
}

double mean_luminance(const cv::Mat& image, cv::Rect rect) {
  const cv::Mat bgr = to_bgr(image);
  rect &= cv::Rect(0, 0, bgr.cols, bgr.rows);
  if (rect.empty()) return 0.0;
  const cv::Scalar m = cv::mean(bgr(rect));
  return 0.114 * m[0] + 0.587 * m[1] + 0.299 * m[2];
}

std::pair<int, bool> sample_text_luminance(double background_luminance, int min_contrast, Rng& rng) {
  if (background_luminance >= 127.5) {
    const int hi = static_cast<int>(std::floor(background_luminance - min_contrast));
    return {static_cast<int>(rng.uniform_int(0, std::max(0, std::min(hi, 80)))), true};
  }
  const int lo = static_cast<int>(std::ceil(background_luminance + min_contrast));
  return {static_cast<int>(rng.uniform_int(std::min(255, std::max(lo, 175)), 255)), false};
}

BackgroundPool BackgroundPool::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("backgrounds directory not found: " + dir.string());
  BackgroundPool pool;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (entry.is_regular_file() && (ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp")) {
      pool.files_.push_back(entry.path());
    }
  }
  std::sort(pool.files_.begin(), pool.files_.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return pool;
}

BackgroundPool BackgroundPool::from_images(std::vector<cv::Mat> images) {
  BackgroundPool pool;
  pool.images_ = std::move(images);
  return pool;
}

std::size_t BackgroundPool::size() const { return images_.empty() ? files_.size() : images_.size(); }

cv::Mat BackgroundPool::get(std::size_t i) const {
  if (!images_.empty()) return to_bgr(images_.at(i));
  cv::Mat img = cv::imread(files_.at(i).string(), cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot decode background " + files_.at(i).string());
  return img;
}

std::string language_for_index(std::size_t index, std::size_t n, double pl_ratio) {
  if (n == 0) return "pl";
  const auto n_pl = static_cast<std::uint64_t>(std::llround(static_cast<double>(n) * pl_ratio));
  const std::uint64_t before = index * n_pl / n;
  const std::uint64_t after = (index + 1) * n_pl / n;
  return after > before ? "pl" : "en";
}

OcrSample generate_ocr_sample(std::size_t index, std::uint64_t seed, const std::string& language,
                              const BackgroundPool& backgrounds,
                              const std::map<std::string, SnippetCorpus>& corpora,
                              const InstructionTemplates& templates, const SynthConfig& config,
                              TextRenderer& renderer, std::vector<SynthEvent>& events) {
  const auto corpus_it = corpora.find(language);
  if (corpus_it == corpora.end()) throw ConfigError("no snippet corpus for language '" + language + "'");
  if (backgrounds.size() == 0) throw ConfigError("background pool is empty");
  const FontSet& fonts = renderer.fonts();
  Rng rng(derive_seed(seed, index));
  auto pick = [&rng](std::size_t n) {
    return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
  };

  for (int attempt = 0; attempt < config.sample_tries; ++attempt) {
    const std::size_t bg_index = pick(backgrounds.size());
    const cv::Mat bg = backgrounds.get(bg_index);
    const int regions_wanted = static_cast<int>(rng.uniform_int(config.regions_min, config.regions_max));
    std::vector<TextRegion> regions;
    std::vector<cv::Rect> taken;
    for (int r = 0; r < regions_wanted; ++r) {
      const std::string text = sample_snippet(corpus_it->second, rng, config.snippet_words);
      std::size_t font = pick(fonts.size());
      bool placed = false;
      for (int t = 0; t < config.placement_tries && !placed; ++t) {
        RenderStyle style;
        style.font = font;
        style.size_pt = rng.uniform_real(config.font_size_min, config.font_size_max);
        style.wrap_width = static_cast<int>(
            bg.cols * rng.uniform_real(config.wrap_min_fraction, config.wrap_max_fraction));
        style.rotation_deg = rng.uniform_real(-config.rotation_max_deg, config.rotation_max_deg);
        TextRenderer::Patch patch;
        try {
          patch = renderer.rasterize(text, font, style.size_pt, style.wrap_width);
        } catch (const MissingGlyphError& e) {
          const auto covering = fonts.fonts_covering(text);
          events.push_back({index, "missing_glyph",
                            e.what() + std::string(covering.empty() ? "; no font covers snippet" : "; resampled font")});
          if (covering.empty()) break;
          font = covering[pick(covering.size())];
          continue;
        }
        if (patch.ink.width + 4 > bg.cols || patch.ink.height + 4 > bg.rows) continue;
        style.x = static_cast<int>(rng.uniform_int(2, bg.cols - patch.ink.width - 2));
        style.y = static_cast<int>(rng.uniform_int(2, bg.rows - patch.ink.height - 2));
        const RegionGeometry geom = TextRenderer::place(patch, style);
        if (!inside(geom.bounds, bg.size())) continue;
        if (std::any_of(taken.begin(), taken.end(),
                        [&](const cv::Rect& o) { return (o & geom.bounds).area() > 0; })) {
          continue;
        }
        const auto [lum, dark] = sample_text_luminance(mean_luminance(bg, geom.bounds), config.min_contrast, rng);
        style.text_luminance = lum;
        style.dark_on_light = dark;
        regions.push_back({text, style});
        taken.push_back(geom.bounds);
        placed = true;
      }
      if (!placed) events.push_back({index, "placement_retry", "region " + std::to_string(r) + " not placed"});
    }
    if (regions.empty()) {
      events.push_back({index, "sample_retry", "no region could be placed"});
      continue;
    }
    // Reading order: top to bottom, then left to right.
    std::vector<std::size_t> order(regions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::pair(taken[a].y, taken[a].x) < std::pair(taken[b].y, taken[b].x);
    });
    std::vector<TextRegion> ordered;
    for (auto i : order) ordered.push_back(regions[i]);
    try {
      RenderedPage page = renderer.render_page(ordered, bg, config.min_contrast);
      OcrSample sample;
      sample.image = std::move(page.image);
      sample.ground_truth = std::move(page.ground_truth);
      sample.instruction = templates.pick(language, rng);
      sample.language = language;
      sample.background = bg_index;
      return sample;
    } catch (const Error& e) {
      events.push_back({index, "sample_retry", e.what()});
    }
  }
  throw ConfigError("sample " + std::to_string(index) + ": no valid page after " +
                    std::to_string(config.sample_tries) + " attempts; backgrounds may be too small");
}

OcrDataset make_ocr_dataset(std::size_t n, const BackgroundPool& backgrounds,
                            const std::map<std::string, SnippetCorpus>& corpora,
                            const InstructionTemplates& templates, const FontSet& fonts,
                            std::uint64_t seed, const SynthConfig& config,
                            const std::filesystem::path& out_dir) {
  config.validate();
  OcrDataset out;
  if (n == 0) return out;
  if (backgrounds.size() == 0) throw ConfigError("background pool is empty");
  const auto images_dir = out_dir / "images";
  std::filesystem::create_directories(images_dir);
  if (n > backgrounds.size()) {
    out.events.push_back({0, "background_reuse",
                          std::to_string(n) + " samples over " + std::to_string(backgrounds.size()) +
                              " backgrounds; drawing with replacement"});
  }

  std::vector<std::optional<Conversation>> slots(n);
  std::vector<std::vector<SynthEvent>> sample_events(n);
  std::mutex pool_mu;
  std::vector<std::unique_ptr<TextRenderer>> idle;
  parallel_for(n, config.jobs, [&](std::size_t i) {
    std::unique_ptr<TextRenderer> renderer;
    {
      std::lock_guard lock(pool_mu);
      if (!idle.empty()) {
        renderer = std::move(idle.back());
        idle.pop_back();
      }
    }
    if (!renderer) renderer = std::make_unique<TextRenderer>(fonts);

    const std::string lang = language_for_index(i, n, config.pl_ratio);
    OcrSample sample = generate_ocr_sample(i, seed, lang, backgrounds, corpora, templates, config, *renderer,
                                           sample_events[i]);
    std::vector<std::uint8_t> png;
    cv::imencode(".png", sample.image, png);
    const std::string_view bytes(reinterpret_cast<const char*>(png.data()), png.size());
    const std::string name = sha256_hex(bytes) + ".png";
    const auto target = images_dir / name;
    if (!std::filesystem::exists(target)) {
      auto tmp = target;
      tmp += ".tmp" + std::to_string(i);
      {
        std::ofstream f(tmp, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("cannot write " + tmp.string());
      }
      std::filesystem::rename(tmp, target);
    }

    char id[64];
    std::snprintf(id, sizeof id, "synthdog-%s-%08zu", lang.c_str(), i);
    Conversation c;
    c.id = id;
    c.image_ref = "images/" + name;
    c.source = "synthdog-" + lang;
    c.language = lang;
    c.category = Category::ocr;
    c.turns.push_back(Turn::make(Speaker::human, std::string(kImageToken) + "\n" + sample.instruction));
    c.turns.push_back(Turn::make(Speaker::assistant, sample.ground_truth));
    slots[i] = std::move(c);

    std::lock_guard lock(pool_mu);
    idle.push_back(std::move(renderer));
  });
  for (std::size_t i = 0; i < n; ++i) {
    out.conversations.push_back(std::move(*slots[i]));
    for (auto& e : sample_events[i]) out.events.push_back(std::move(e));
  }
  return out;
}

}  // namespace vlmforge

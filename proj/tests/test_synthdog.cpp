#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fixtures.hpp"
#include "vlmforge/digest.hpp"
#include "vlmforge/ingest.hpp"
#include "vlmforge/synthdog.hpp"

namespace vlmforge {
namespace {

using testing::TempDir;

FontSet test_fonts() { return FontSet::load(testing::data_dir() / "fonts"); }

cv::Mat flat(int luminance, int w = 320, int h = 240) {
  return cv::Mat(h, w, CV_8UC3, cv::Scalar(luminance, luminance, luminance));
}

TextRegion region(std::string text, int x, int y, int lum, double size = 20) {
  TextRegion r;
  r.text = std::move(text);
  r.style.font = 0;
  r.style.size_pt = size;
  r.style.x = x;
  r.style.y = y;
  r.style.wrap_width = 200;
  r.style.text_luminance = lum;
  r.style.dark_on_light = lum < 128;
  return r;
}

TEST(Snippet, WindowOfConsecutiveWords) {
  SnippetCorpus corpus{{"jeden dwa trzy cztery pięć sześć", "krótki"}};
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto s = sample_snippet(corpus, rng, {2, 4});
    EXPECT_NE(corpus.documents[0].find(s), std::string::npos) << s;
    const auto words = std::count(s.begin(), s.end(), ' ') + 1;
    EXPECT_GE(words, 2);
    EXPECT_LE(words, 4);
  }
  EXPECT_THROW(sample_snippet(SnippetCorpus{}, rng, {2, 4}), ConfigError);
  EXPECT_THROW(sample_snippet(SnippetCorpus{{"one"}}, rng, {2, 4}), ConfigError);
}

TEST(Fonts, LoadedSortedWithCoverage) {
  const auto fonts = test_fonts();
  ASSERT_EQ(fonts.size(), 2u);
  EXPECT_EQ(fonts.file(0).filename(), "DejaVuSans.ttf");
  EXPECT_EQ(fonts.fonts_covering("Zażółć gęślą jaźń").size(), 2u);
  EXPECT_TRUE(fonts.fonts_covering("漢字").empty());
}

TEST(Render, GroundTruthJoinsRegionTexts) {
  const auto fonts = test_fonts();
  TextRenderer renderer(fonts);
  const auto bg = flat(220);
  const std::vector<TextRegion> regions{region("Zażółć gęślą", 10, 10, 20), region("jaźń", 10, 150, 30)};
  const auto page = renderer.render_page(regions, bg, 60);
  EXPECT_EQ(page.ground_truth, "Zażółć gęślą\njaźń");
  ASSERT_EQ(page.regions.size(), 2u);
  EXPECT_EQ(page.image.size(), bg.size());
  EXPECT_EQ(page.image.type(), CV_8UC3);
  // Ink is present inside each region and nowhere outside them.
  cv::Mat diff;
  cv::absdiff(page.image, bg, diff);
  for (const auto& g : page.regions) {
    EXPECT_GT(cv::sum(diff(g.bounds & cv::Rect(0, 0, bg.cols, bg.rows)))[0], 0.0);
    diff(g.bounds & cv::Rect(0, 0, bg.cols, bg.rows)).setTo(0);
  }
  EXPECT_EQ(cv::countNonZero(diff.reshape(1)), 0);
}

TEST(Render, RejectsBadLayouts) {
  const auto fonts = test_fonts();
  TextRenderer renderer(fonts);
  const auto bg = flat(220);
  EXPECT_THROW(renderer.render_page(std::vector<TextRegion>{region("daleko", 310, 10, 20)}, bg, 60), PlacementError);
  EXPECT_THROW(renderer.render_page(std::vector<TextRegion>{region("raz", 10, 10, 20), region("dwa", 12, 12, 20)},
                                    bg, 60),
               PlacementError);
  EXPECT_THROW(renderer.render_page(std::vector<TextRegion>{region("szary", 10, 10, 200)}, bg, 60), ContrastError);
  try {
    renderer.render_page(std::vector<TextRegion>{region("漢", 10, 10, 20)}, bg, 60);
    ADD_FAILURE() << "expected MissingGlyphError";
  } catch (const MissingGlyphError& e) {
    EXPECT_EQ(e.missing, std::vector<char32_t>{U'漢'});
    EXPECT_NE(std::string(e.what()).find("U+6F22"), std::string::npos);
  }
}

TEST(Render, RotationKeepsCornersInsideBounds) {
  const auto fonts = test_fonts();
  TextRenderer renderer(fonts);
  auto patch = renderer.rasterize("obrócony tekst", 0, 24, 300);
  RenderStyle s;
  s.x = 50;
  s.y = 60;
  s.rotation_deg = 3.0;
  const auto g = TextRenderer::place(patch, s);
  for (const auto& c : g.corners) {
    EXPECT_GE(c.x, g.bounds.x);
    EXPECT_GE(c.y, g.bounds.y);
    EXPECT_LE(c.x, g.bounds.x + g.bounds.width);
    EXPECT_LE(c.y, g.bounds.y + g.bounds.height);
  }
}

TEST(Contrast, TextLuminanceRespectsGap) {
  Rng rng(5);
  for (double bg : {0.0, 40.0, 127.0, 128.0, 200.0, 255.0}) {
    for (int i = 0; i < 50; ++i) {
      const auto [lum, dark] = sample_text_luminance(bg, 60, rng);
      EXPECT_GE(std::abs(lum - bg), 60.0) << bg;
      EXPECT_EQ(dark, bg >= 127.5);
      EXPECT_GE(lum, 0);
      EXPECT_LE(lum, 255);
    }
  }
  EXPECT_DOUBLE_EQ(mean_luminance(flat(100), cv::Rect(0, 0, 10, 10)), 100.0);
}

TEST(Language, ExactPolishShareEvenlySpread) {
  for (std::size_t n : {1u, 7u, 100u, 1000u}) {
    for (double ratio : {0.0, 0.3, 0.5, 1.0}) {
      std::size_t pl = 0;
      for (std::size_t i = 0; i < n; ++i) pl += language_for_index(i, n, ratio) == "pl";
      EXPECT_EQ(pl, static_cast<std::size_t>(std::llround(n * ratio))) << n << " " << ratio;
    }
  }
}

TEST(Config, Validates) {
  SynthConfig c;
  c.font_size_min = 50;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig{};
  c.pl_ratio = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

class Dataset : public ::testing::Test {
 protected:
  void SetUp() override {
    backgrounds = BackgroundPool::from_images(testing::make_backgrounds(6, 320, 240, 1));
    corpora["pl"] = testing::make_corpus("pl", 40, 2);
    corpora["en"] = testing::make_corpus("en", 40, 3);
  }
  BackgroundPool backgrounds = BackgroundPool::from_images({});
  std::map<std::string, SnippetCorpus> corpora;
  FontSet fonts = test_fonts();
  InstructionTemplates templates = InstructionTemplates::default_ocr();
};

TEST_F(Dataset, DeterministicAndSelfConsistent) {
  TempDir a("synth"), b("synth");
  SynthConfig cfg;
  cfg.jobs = 2;
  const auto da = make_ocr_dataset(30, backgrounds, corpora, templates, fonts, 42, cfg, a.path());
  cfg.jobs = 1;
  const auto db = make_ocr_dataset(30, backgrounds, corpora, templates, fonts, 42, cfg, b.path());
  EXPECT_EQ(canonical_digest(da.conversations), canonical_digest(db.conversations));
  ASSERT_EQ(da.conversations.size(), 30u);
  std::size_t pl = 0;
  TextRenderer renderer(fonts);
  for (std::size_t i = 0; i < 30; ++i) {
    const auto& c = da.conversations[i];
    EXPECT_TRUE(validate_conversation(c).empty());
    EXPECT_EQ(c.category, Category::ocr);
    pl += c.language == "pl";
    std::vector<SynthEvent> events;
    const auto s = generate_ocr_sample(i, 42, c.language, backgrounds, corpora, templates, cfg, renderer, events);
    EXPECT_EQ(c.turns[1].text, s.ground_truth);
    const auto file = a.path() / *c.image_ref;
    EXPECT_EQ(sha256_file(file) + ".png", file.filename().string());
    const cv::Mat decoded = cv::imread(file.string(), cv::IMREAD_COLOR);
    EXPECT_EQ(cv::norm(decoded, s.image, cv::NORM_INF), 0.0);
  }
  EXPECT_EQ(pl, 15u);
  const auto dc = make_ocr_dataset(30, backgrounds, corpora, templates, fonts, 43, cfg, b.path());
  EXPECT_NE(canonical_digest(dc.conversations), canonical_digest(da.conversations));
  bool reuse = false;
  for (const auto& e : da.events) reuse |= e.kind == "background_reuse";
  EXPECT_TRUE(reuse);
}

TEST_F(Dataset, UncoverableCorpusFailsLoudly) {
  TempDir dir("synth");
  std::map<std::string, SnippetCorpus> bad{{"pl", SnippetCorpus{{"漢字 漢字 漢字 漢字"}}},
                                           {"en", SnippetCorpus{{"漢字 漢字 漢字 漢字"}}}};
  EXPECT_THROW(make_ocr_dataset(2, backgrounds, bad, templates, fonts, 1, SynthConfig{}, dir.path()), ConfigError);
}

}  // namespace
}  // namespace vlmforge

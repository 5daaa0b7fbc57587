#include "fixtures.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "vlmforge/rng.hpp"

namespace vlmforge::testing {

namespace fs = std::filesystem;
using nlohmann::json;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("vlmforge-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path data_dir() { return fs::path(VLMFORGE_TEST_DATA_DIR); }

namespace {

constexpr std::array kEnglishWords = {"the",   "dog",    "runs",  "across", "a",      "green",  "field",
                                      "under", "bright", "sky",   "with",   "two",    "red",    "balls",
                                      "near",  "old",    "house", "where",  "people", "walk",   "slowly",
                                      "river", "bridge", "city",  "street", "light",  "window", "table"};

constexpr std::array kPolishWords = {"pies",   "biegnie", "przez",  "zieloną", "łąkę",   "pod",     "jasnym",
                                     "niebem", "z",       "dwiema", "piłkami", "obok",   "starego", "domu",
                                     "gdzie",  "ludzie",  "idą",    "powoli",  "rzeka",  "most",    "miasto",
                                     "ulica",  "światło", "okno",   "stół",    "żółty",  "źródło",  "ćma"};

const std::map<std::string, std::string>& dictionary() {
  static const std::map<std::string, std::string> d = [] {
    std::map<std::string, std::string> m;
    for (std::size_t i = 0; i < kEnglishWords.size(); ++i) m[kEnglishWords[i]] = kPolishWords[i];
    return m;
  }();
  return d;
}

std::string pick_words(Rng& rng, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += kEnglishWords[rng.uniform_int(0, kEnglishWords.size() - 1)];
  }
  return out;
}

}  // namespace

std::vector<Conversation> make_conversations(std::size_t n, std::uint64_t seed, const std::string& source,
                                             const std::string& language, Category category) {
  std::vector<Conversation> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    Conversation c;
    char id[32];
    std::snprintf(id, sizeof id, "conv-%05zu", i);
    c.id = id;
    c.source = source;
    c.language = language;
    c.category = category;
    const bool image = rng.uniform_int(0, 2) != 0;
    if (image) c.image_ref = "images/" + c.id + ".jpg";
    const auto pairs = rng.uniform_int(1, 4);
    for (std::int64_t p = 0; p < pairs; ++p) {
      std::string q = "what is " + pick_words(rng, rng.uniform_int(2, 6)) + "?";
      if (image && p == 0) q = (rng.bernoulli(0.5) ? "<image>\n" + q : q + "\n<image>");
      c.turns.push_back(Turn::make(Speaker::human, q));
      c.turns.push_back(Turn::make(Speaker::assistant, pick_words(rng, rng.uniform_int(1, 12)) + "."));
    }
    out.push_back(std::move(c));
  }
  return out;
}

double fixture_score(const std::string& source, const std::string& hypothesis) {
  return static_cast<double>(fnv1a64(source + "\x1f" + hypothesis) % 1001) / 1000.0;
}

std::string dictionary_translate(const std::string& text) {
  const bool drop_token = fnv1a64(text) % 7 == 0;
  std::string out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = dictionary().find(word);
    out += it == dictionary().end() ? word : it->second;
    word.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.compare(i, kImageToken.size(), kImageToken) == 0) {
      flush();
      if (!drop_token) out += kImageToken;
      i += kImageToken.size() - 1;
      continue;
    }
    const char c = text[i];
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word += c;
    } else {
      flush();
      out += c;
    }
  }
  flush();
  return out;
}

std::vector<McItem> make_mc_items(std::size_t n) {
  std::vector<McItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    McItem item;
    char id[32];
    std::snprintf(id, sizeof id, "mc-%03zu", i);
    item.id = id;
    item.question = "Pytanie " + std::to_string(i) + ": co widać na obrazku?";
    item.options = {{'A', "pies"}, {'B', "kot"}, {'C', "koń"}, {'D', "ptak"}};
    item.answer = static_cast<char>('A' + i % 4);
    item.language_variant = LanguageVariant::target;
    items.push_back(std::move(item));
  }
  return items;
}

std::string scripted_mc_output(std::size_t index, char answer) {
  static constexpr std::array<std::size_t, 6> kWrong = {3, 9, 14, 22, 27, 31};
  static constexpr std::array<std::size_t, 3> kNoLetter = {38, 44, 49};
  const std::size_t k = index % 50;
  const std::string right(1, answer);
  const std::string wrong(1, static_cast<char>('A' + (answer - 'A' + 1) % 4));
  if (std::find(kNoLetter.begin(), kNoLetter.end(), k) != kNoLetter.end()) {
    return k % 2 ? "Nie potrafię odpowiedzieć na to pytanie." : "Trudno powiedzieć, obraz jest nieczytelny.";
  }
  const bool ok = std::find(kWrong.begin(), kWrong.end(), k) == kWrong.end();
  const std::string& l = ok ? right : wrong;
  switch (k % 7) {
    case 0: return l;
    case 1: return l + ".";
    case 2: return "(" + l + ")";
    case 3: return "Odpowiedź: " + l;
    case 4: return "The answer is " + l;
    case 5: return l + ") to poprawna odpowiedź";
    default: return "Prawidłowa odpowiedź to " + l + ", ponieważ widać to na obrazku.";
  }
}

std::vector<cv::Mat> make_backgrounds(std::size_t n, int width, int height, std::uint64_t seed) {
  std::vector<cv::Mat> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    const bool light = i % 2 == 0;
    const int base = light ? static_cast<int>(rng.uniform_int(190, 235)) : static_cast<int>(rng.uniform_int(20, 60));
    cv::Mat img(height, width, CV_8UC3);
    const int tint = static_cast<int>(rng.uniform_int(-15, 15));
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const int g = base + (x * 12) / width - 6 + static_cast<int>(rng.uniform_int(-4, 4));
        img.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<uchar>(g + tint), cv::saturate_cast<uchar>(g),
                                            cv::saturate_cast<uchar>(g - tint));
      }
    }
    out.push_back(img);
  }
  return out;
}

SnippetCorpus make_corpus(const std::string& language, std::size_t documents, std::uint64_t seed) {
  SnippetCorpus corpus;
  Rng rng(seed);
  for (std::size_t d = 0; d < documents; ++d) {
    std::string doc;
    const auto words = rng.uniform_int(6, 30);
    for (std::int64_t w = 0; w < words; ++w) {
      if (w) doc += ' ';
      if (language == "pl") {
        doc += kPolishWords[rng.uniform_int(0, kPolishWords.size() - 1)];
      } else {
        doc += kEnglishWords[rng.uniform_int(0, kEnglishWords.size() - 1)];
      }
    }
    corpus.documents.push_back(doc);
  }
  return corpus;
}

fs::path make_toy_registry(const fs::path& dir, std::size_t per_source) {
  fs::create_directories(dir / "data");
  auto reg = DatasetRegistry::load(dir / "registry.json");
  std::uint64_t seed = 100;
  auto add = [&](const std::string& name, const std::string& lang, Category cat) {
    const auto rel = fs::path("data") / (name + ".jsonl");
    write_conversations(make_conversations(per_source, seed++, name, lang, cat), dir / rel);
    reg.register_source(name, rel, cat, lang);
  };
  for (Category cat : {Category::general, Category::ocr, Category::knowledge, Category::counting}) {
    const std::string c(to_string(cat));
    add(c + "-pl-a", "pl", cat);
    add(c + "-pl-b", "pl", cat);
    add(c + "-en", "en", cat);
  }
  add("pretrain-en", "en", Category::pretrain);
  reg.save(dir / "registry.json");
  return dir / "registry.json";
}

json make_pool_json(const std::string& id, std::size_t comparisons, std::size_t tasks, std::size_t calibration) {
  json pool{{"id", id}, {"comparisons", json::array()}, {"tasks", json::array()}, {"calibration", json::array()}};
  for (std::size_t c = 0; c < comparisons; ++c) {
    pool["comparisons"].push_back(
        {{"id", "cmp-" + std::to_string(c)}, {"model_x", "alpha-" + std::to_string(c)},
         {"model_y", "beta-" + std::to_string(c)}});
  }
  for (std::size_t t = 0; t < tasks; ++t) {
    char tid[32];
    std::snprintf(tid, sizeof tid, "t-%04zu", t);
    pool["tasks"].push_back({{"id", tid},
                             {"comparison", "cmp-" + std::to_string(t % comparisons)},
                             {"item_id", "item-" + std::to_string(t / comparisons)},
                             {"image", "https://example.org/img/" + std::to_string(t / comparisons) + ".jpg"},
                             {"caption_left", "Lewy opis numer " + std::to_string(t)},
                             {"caption_right", "Prawy opis numer " + std::to_string(t)}});
  }
  for (std::size_t k = 0; k < calibration; ++k) {
    pool["calibration"].push_back({{"id", "cal-" + std::to_string(k)},
                                   {"item_id", "cal-item-" + std::to_string(k)},
                                   {"image", "https://example.org/cal/" + std::to_string(k) + ".jpg"},
                                   {"caption_left", "Kalibracja lewa " + std::to_string(k)},
                                   {"caption_right", "Kalibracja prawa " + std::to_string(k)}});
  }
  return pool;
}

}  // namespace vlmforge::testing

#pragma once

// Deterministic fixture builders shared by the unit and acceptance tests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "vlmforge/adapt.hpp"
#include "vlmforge/corpus.hpp"
#include "vlmforge/ingest.hpp"
#include "vlmforge/synthdog.hpp"

namespace vlmforge::testing {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::filesystem::path data_dir();  // tests/data in the source tree

// Valid conversations with 1-4 QA pairs; about two thirds carry an image
// token in the first human turn.
std::vector<Conversation> make_conversations(std::size_t n, std::uint64_t seed, const std::string& source = "fixture",
                                             const std::string& language = "en",
                                             Category category = Category::general);

// Deterministic stand-in QE score in [0, 1].
double fixture_score(const std::string& source, const std::string& hypothesis);

// Returns the input unchanged.
class EchoTranslator : public Translator {
 public:
  std::string translate(const std::string& text, const std::string&, const std::string&) override { return text; }
};

class ConstantScorer : public Scorer {
 public:
  explicit ConstantScorer(double value) : value_(value) {}
  double score(const std::string&, const std::string&) override { return value_; }

 private:
  double value_;
};

// Word-for-word substitution into pseudo-Polish; drops the image token from
// roughly one text in seven so repair paths get exercised.
std::string dictionary_translate(const std::string& text);

// 50 Polish MC items over 4 options, answers cycling A-D.
std::vector<McItem> make_mc_items(std::size_t n);

// Reply of the scripted MC model for item `index` of make_mc_items: 41 of
// every 50 are correct in assorted surface forms, 6 pick a wrong letter and
// 3 give no letter at all.
std::string scripted_mc_output(std::size_t index, char answer);
inline constexpr std::size_t kScriptedCorrectPer50 = 41;

// Gradient-and-noise backgrounds alternating between light and dark.
std::vector<cv::Mat> make_backgrounds(std::size_t n, int width, int height, std::uint64_t seed);

// Documents of random words drawn from a fixed Polish or English vocabulary.
SnippetCorpus make_corpus(const std::string& language, std::size_t documents, std::uint64_t seed);

// Pool document with `comparisons` model pairs and `tasks` tasks spread
// over them, plus `calibration` calibration tasks.
// Registry at <dir>/registry.json over `per_source` conversations in each of
// two Polish and one English source per instruction category, plus one
// pretrain source.
std::filesystem::path make_toy_registry(const std::filesystem::path& dir, std::size_t per_source);

nlohmann::json make_pool_json(const std::string& id, std::size_t comparisons, std::size_t tasks,
                              std::size_t calibration);

}  // namespace vlmforge::testing

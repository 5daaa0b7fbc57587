#pragma once

// Multiple-choice benchmark evaluation by direct generation plus rule-based
// letter extraction, and the per-question issue ledger kept while adapting a
// benchmark to another language.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmforge/client.hpp"
#include "vlmforge/corpus.hpp"

namespace vlmforge {

// Question, one "X. option" line per option, then the direct-answer
// directive for the item's language variant.
std::string build_prompt(const McItem& item);

enum class ExtractionRule { whole_output, letter_punct, cue_word };
inline constexpr int kExtractionRuleCount = 3;

struct Extraction {
  std::optional<char> letter;
  std::optional<ExtractionRule> rule;
};

// Applies the first `rules` rules of the cascade in order:
//   1. the whole (trimmed) output is one letter, optionally bracketed or
//      followed by punctuation: "B", "B.", "(C)";
//   2. the first letter immediately followed by '.', ')' or ':' that starts
//      a token: "Odpowiedź: C." -> C;
//   3. a letter after an answer cue ("answer", "odpowiedź", "odp"), matched
//      case-insensitively: "The answer is D" -> D.
// Only uppercase letters in `valid_letters` are ever returned.
Extraction extract(std::string_view raw, std::string_view valid_letters, int rules = kExtractionRuleCount);
std::optional<char> extract_choice(std::string_view raw, std::string_view valid_letters);

struct McResult {
  std::string item_id;
  std::string raw_output;
  std::optional<char> extracted;
  bool correct = false;
  bool matched = false;
  std::string error;  // transport failure note, empty otherwise

  bool operator==(const McResult&) const = default;
};

nlohmann::json to_json(const McResult& r);
McResult mc_result_from_json(const nlohmann::json& j);

struct BenchmarkSummary {
  std::uint64_t total = 0;
  std::uint64_t correct = 0;
  std::uint64_t matched = 0;
  std::uint64_t unmatched = 0;
  std::uint64_t transport_failures = 0;
  long long accuracy_hundredths = 0;  // percent, half-up
  std::string variant;
  std::string model;
  std::string timestamp;
  double temperature = 0.0;

  std::string accuracy_percent() const;
  nlohmann::json to_json() const;
};

BenchmarkSummary summarize(std::span<const McResult> results, std::string variant, std::string model);

struct BenchmarkOptions {
  std::string model;
  std::size_t jobs = 4;
  RetryPolicy retry;
  std::filesystem::path image_base;  // relative image refs resolve here
};

struct BenchmarkRun {
  std::vector<McResult> results;  // in item order
  BenchmarkSummary summary;
};

// Throws ContractError on an empty or invalid item list.
BenchmarkRun run_benchmark(std::span<const McItem> items, ChatClient& client, const BenchmarkOptions& options);

// Per-item results JSONL and <results>.summary.json next to it.
void write_benchmark(const BenchmarkRun& run, const std::filesystem::path& results_path);

struct LedgerAuditEntry {
  std::string timestamp;
  std::string item_id;
  IssueCode code;
  std::optional<IssueCode> previous;
  std::string note;
};

struct LedgerSummary {
  std::uint64_t total_questions = 0;
  std::map<IssueCode, std::uint64_t> counts;
  std::uint64_t inaccuracy_count = 0;  // 1a-1i
  std::uint64_t foreign_count = 0;     // 2a-2b
  long long inaccuracy_hundredths = 0;
  long long foreign_hundredths = 0;
  std::optional<std::string> discrepancy;

  std::string inaccuracy_percent() const;
  std::string foreign_percent() const;
  nlohmann::json to_json() const;
};

// One category per question; recording again overwrites and extends the
// audit trail. Persisted as a single JSON document.
class IssueLedger {
 public:
  IssueLedger() = default;
  explicit IssueLedger(std::set<std::string> known_ids) : known_(std::move(known_ids)) {}

  static IssueLedger load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Throws NotFoundError for an id outside the benchmark.
  void record(const std::string& item_id, IssueCode code, std::string note);

  // An externally reported inaccuracy percentage to check the counts against.
  void set_reported_inaccuracy(std::optional<long long> hundredths) { reported_inaccuracy_ = hundredths; }

  LedgerSummary summary() const;
  const std::map<std::string, IssueCategory>& items() const { return items_; }
  const std::vector<LedgerAuditEntry>& audit() const { return audit_; }
  const std::set<std::string>& known_ids() const { return known_; }

 private:
  std::set<std::string> known_;
  std::map<std::string, IssueCategory> items_;
  std::vector<LedgerAuditEntry> audit_;
  std::optional<long long> reported_inaccuracy_;
};

}  // namespace vlmforge

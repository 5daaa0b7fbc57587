#pragma once

// Pairwise caption comparisons judged by language or vision-language models.
//
// Two protocols:
//   no_tie_two_orders       every task is judged twice, once with model x in
//                           slot A and once with model y in slot A; the
//                           judge must pick "a" or "b".
//   tie_allowed_randomized  one request per task with a seeded A/B
//                           assignment; a single reply rates content and
//                           language, each "a", "b" or "remis" (tie).

#include <cstdint>
#include <filesystem>
#include <functional>
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

namespace detail {
struct EmbeddedPrompt {
  const char* name;
  int version;
  const char* text;
};
extern const EmbeddedPrompt kEmbeddedPrompts[];
extern const std::size_t kEmbeddedPromptCount;
}  // namespace detail

enum class Protocol { no_tie_two_orders, tie_allowed_randomized };
std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view s);  // throws ConfigError

// A judge prompt with {response_a} and {response_b} slots.
struct PromptTemplate {
  std::string name;
  int version = 1;
  std::string text;

  // Single pass: slot markers inside the captions are not expanded.
  std::string render(std::string_view response_a, std::string_view response_b) const;
};

// Built-in prompts: no_tie_llm, no_tie_vlm, tie_allowed_vlm.
const PromptTemplate& builtin_prompt(std::string_view name);
// <dir>/<name>.v<N>.txt, highest N wins.
PromptTemplate load_prompt(const std::filesystem::path& dir, std::string_view name);

struct PromptSet {
  PromptTemplate no_tie_linguistic = builtin_prompt("no_tie_llm");
  PromptTemplate no_tie_content = builtin_prompt("no_tie_vlm");
  PromptTemplate tie_allowed = builtin_prompt("tie_allowed_vlm");

  static PromptSet from_dir(const std::filesystem::path& dir);
};

struct CaptionSet {
  std::map<std::string, std::string> captions;   // item id -> caption
  std::map<std::string, std::string> image_refs; // item id -> image, when known
};

// JSONL {"id","caption"} with an optional "image".
CaptionSet read_captions(const std::filesystem::path& path);

// One task per item id, sorted by id; assignment left_is_a with
// probability 1/2 from a stream seeded by `seed`. Throws ContractError listing
// every id present on only one side.
std::vector<PairwiseTask> make_tasks(const CaptionSet& x, const CaptionSet& y, std::uint64_t seed,
                                     Criterion criterion, bool tie_allowed);

// k ids drawn uniformly without replacement, returned sorted.
std::vector<std::string> sample_ids(std::vector<std::string> ids, std::size_t k, std::uint64_t seed);

// Strict reply parsing: exactly one JSON object holding exactly the expected
// keys. Empty on any deviation.
struct NoTieReply {
  Choice best;
  std::string justification;
};
struct TieReply {
  Choice content;     // best_description
  Choice linguistic;  // lang_comparison
  std::string justification;
};
std::optional<NoTieReply> parse_no_tie_reply(std::string_view reply);
std::optional<TieReply> parse_tie_reply(std::string_view reply);

struct JudgeOptions {
  std::string model;
  std::string judge_id;
  RetryPolicy retry;
  std::filesystem::path image_base;
  PromptSet prompts;
};

// The request sent for a task: text-only for the linguistic no-tie judge,
// with the image otherwise. Exposed for auditing.
ChatRequest no_tie_request(const PairwiseTask& task, PromptOrder order, const JudgeOptions& options);
ChatRequest tie_request(const PairwiseTask& task, const JudgeOptions& options);

// Two independent requests; the first has model x in slot A.
std::pair<Verdict, Verdict> judge_no_tie(const PairwiseTask& task, ChatClient& judge, const JudgeOptions& options);

// Verdicts for (content, linguistic) from one reply.
std::pair<Verdict, Verdict> judge_with_tie(const PairwiseTask& task, ChatClient& judge, const JudgeOptions& options);

// One verdict as stored, with enough context to de-anonymize it.
struct VerdictRecord {
  std::string item_id;
  Criterion criterion = Criterion::content;
  Assignment assignment = Assignment::left_is_a;  // slot mapping used for this verdict
  Verdict verdict;

  std::optional<Winner> winner() const;
};

nlohmann::json to_json(const VerdictRecord& r);
VerdictRecord verdict_record_from_json(const nlohmann::json& j);

struct ArenaRun {
  std::string model_x;
  std::string model_y;
  Protocol protocol = Protocol::no_tie_two_orders;
  Criterion criterion = Criterion::content;  // ignored by the tie protocol, which rates both
  std::string judge_id;
  std::vector<PairwiseTask> tasks;
  std::vector<VerdictRecord> verdicts;  // task order, then prompt order

  // Throws ContractError when verdict counts or tie use break the protocol.
  void check() const;
};

struct ArenaOptions {
  JudgeOptions judge;
  std::size_t jobs = 4;
};

ArenaRun run_arena(std::string model_x, std::string model_y, std::vector<PairwiseTask> tasks, Protocol protocol,
                   ChatClient& judge, const ArenaOptions& options);

struct PreferenceReport {
  std::uint64_t win_x = 0;
  std::uint64_t win_y = 0;
  std::uint64_t tie = 0;
  std::uint64_t parse_failures = 0;
  std::uint64_t issued = 0;

  std::uint64_t effective() const { return win_x + win_y + tie; }
  long long preference_rate_x() const;  // hundredths of a percent
  long long preference_rate_y() const;
  long long tie_rate() const;
  long long win_tie_rate_x() const;

  // The same comparisons seen from model y's side.
  PreferenceReport swapped() const;
  nlohmann::json to_json() const;
  bool operator==(const PreferenceReport&) const = default;
};

// Counts verdicts of one criterion. Throws ContractError when no verdict is
// effective.
PreferenceReport preference_rate(std::span<const VerdictRecord> verdicts, Criterion criterion);
PreferenceReport preference_rate(const ArenaRun& run, Criterion criterion);

void write_arena(const ArenaRun& run, const std::filesystem::path& verdicts_path);

// Case-insensitive occurrences of any name in any text, as "text#i: name".
std::vector<std::string> anonymization_scan(std::span<const std::string> texts, const std::set<std::string>& names);

}  // namespace vlmforge

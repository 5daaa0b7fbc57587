#pragma once

// Shared domain types: conversations, benchmark items, pairwise tasks and
// verdicts. Everything here is a plain value type.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vlmforge {

inline constexpr std::string_view kImageToken = "<image>";

enum class Speaker { human, assistant };
enum class Category { general, ocr, knowledge, counting, pretrain };

std::string_view to_string(Speaker s);
std::string_view to_string(Category c);
Category parse_category(std::string_view s);  // throws ConfigError

std::size_t count_image_tokens(std::string_view text);

struct Turn {
  Speaker speaker = Speaker::human;
  std::string text;
  bool has_image_token = false;

  static Turn make(Speaker speaker, std::string text);

  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::string id;
  std::optional<std::string> image_ref;
  std::vector<Turn> turns;
  std::string source;
  std::string language;
  Category category = Category::general;

  bool operator==(const Conversation&) const = default;
};

enum class ViolationKind {
  empty_id,
  too_few_turns,
  odd_length,
  ordering,
  empty_text,
  image_flag_mismatch,
  multiple_image_tokens,
};

std::string_view to_string(ViolationKind k);

struct Violation {
  ViolationKind kind;
  std::optional<std::size_t> turn_index;

  std::string describe() const;
  bool operator==(const Violation&) const = default;
};

// Empty iff every per-record Conversation invariant holds. Id uniqueness is a
// dataset property and is checked by the reader.
std::vector<Violation> validate_conversation(const Conversation& c);

struct QAPair {
  std::size_t index = 0;
  Turn question;
  Turn answer;
  std::optional<std::string> question_translated;
  std::optional<std::string> answer_translated;
  std::optional<double> qe_question;
  std::optional<double> qe_answer;

  bool scored() const { return qe_question.has_value() && qe_answer.has_value(); }
  bool operator==(const QAPair&) const = default;
};

// Recipe for an instruction mixture. Balance is adapted (pl) : original (en).
struct MixtureSpec {
  std::map<Category, std::uint64_t> targets;
  std::uint64_t balance_adapted = 85;
  std::uint64_t balance_original = 15;
  std::uint64_t seed = 0;
  std::map<std::string, double> source_weights;
  std::string adapted_language = "pl";
  std::string original_language = "en";

  void validate() const;  // throws ConfigError
  bool operator==(const MixtureSpec&) const = default;
};

enum class LanguageVariant { source, target };
std::string_view to_string(LanguageVariant v);
LanguageVariant parse_variant(std::string_view s);  // accepts source|target|en|pl

enum class IssueCode { c1a, c1b, c1c, c1d, c1e, c1f, c1g, c1h, c1i, c2a, c2b };
inline constexpr IssueCode kAllIssueCodes[] = {
    IssueCode::c1a, IssueCode::c1b, IssueCode::c1c, IssueCode::c1d,
    IssueCode::c1e, IssueCode::c1f, IssueCode::c1g, IssueCode::c1h,
    IssueCode::c1i, IssueCode::c2a, IssueCode::c2b};

std::string_view to_string(IssueCode c);
IssueCode parse_issue_code(std::string_view s);  // throws ConfigError
// 1a-1i: inaccurate or flawed question; 2a-2b: rooted in a foreign context.
bool is_inaccuracy(IssueCode c);

struct IssueCategory {
  IssueCode code;
  std::string note;
  bool operator==(const IssueCategory&) const = default;
};

struct McItem {
  std::string id;
  std::string question;
  std::map<char, std::string> options;
  char answer = 'A';
  std::string image_ref;
  LanguageVariant language_variant = LanguageVariant::source;
  std::optional<IssueCategory> issue_tag;

  std::string valid_letters() const;
  bool operator==(const McItem&) const = default;
};

// Empty iff options are 2-4 consecutive letters from A and the answer is one
// of them.
std::vector<std::string> validate_mc_item(const McItem& item);

enum class Assignment { left_is_a, right_is_a };
enum class Criterion { linguistic, content };
enum class Choice { a, b, tie };
enum class PromptOrder { ab, ba, single };

std::string_view to_string(Assignment a);
std::string_view to_string(Criterion c);
std::string_view to_string(Choice c);
std::string_view to_string(PromptOrder o);
Assignment parse_assignment(std::string_view s);
Criterion parse_criterion(std::string_view s);
Choice parse_choice(std::string_view s);
PromptOrder parse_prompt_order(std::string_view s);

// An anonymised A/B comparison. caption_left always belongs to the first
// model of the comparison (model x) and caption_right to model y; the
// assignment records which of them is shown as "A".
struct PairwiseTask {
  std::string item_id;
  std::string image_ref;
  std::string caption_left;
  std::string caption_right;
  Assignment assignment = Assignment::left_is_a;
  Criterion criterion = Criterion::content;
  bool tie_allowed = false;

  const std::string& caption_a() const {
    return assignment == Assignment::left_is_a ? caption_left : caption_right;
  }
  const std::string& caption_b() const {
    return assignment == Assignment::left_is_a ? caption_right : caption_left;
  }
  bool operator==(const PairwiseTask&) const = default;
};

// `choice` is empty when the judge's reply could not be parsed.
struct Verdict {
  std::optional<Choice> choice;
  std::string justification;
  std::string judge_id;
  PromptOrder prompt_order = PromptOrder::single;
  std::string error;  // why no choice was obtained

  bool operator==(const Verdict&) const = default;
};

// A tie is only legal when the task allows it.
bool verdict_permitted(const PairwiseTask& task, const Verdict& verdict);

// Whose caption a choice favours, after undoing the A/B labelling.
enum class Winner { left, right, tie };
Winner resolve_winner(Assignment assignment, Choice choice);

}  // namespace vlmforge

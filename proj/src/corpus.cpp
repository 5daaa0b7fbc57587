#include "vlmforge/corpus.hpp"

#include <algorithm>
#include <cctype>

#include "vlmforge/errors.hpp"

namespace vlmforge {

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::string_view to_string(Speaker s) { return s == Speaker::human ? "human" : "assistant"; }

std::string_view to_string(Category c) {
  switch (c) {
    case Category::general: return "general";
    case Category::ocr: return "ocr";
    case Category::knowledge: return "knowledge";
    case Category::counting: return "counting";
    case Category::pretrain: return "pretrain";
  }
  return "general";
}

Category parse_category(std::string_view s) {
  for (Category c : {Category::general, Category::ocr, Category::knowledge, Category::counting,
                     Category::pretrain}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown category '" + std::string(s) + "'");
}

std::size_t count_image_tokens(std::string_view text) {
  std::size_t n = 0;
  for (auto pos = text.find(kImageToken); pos != std::string_view::npos;
       pos = text.find(kImageToken, pos + kImageToken.size())) {
    ++n;
  }
  return n;
}

Turn Turn::make(Speaker speaker, std::string text) {
  const bool has = count_image_tokens(text) > 0;
  return Turn{speaker, std::move(text), has};
}

std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::empty_id: return "empty_id";
    case ViolationKind::too_few_turns: return "too_few_turns";
    case ViolationKind::odd_length: return "odd_length";
    case ViolationKind::ordering: return "ordering";
    case ViolationKind::empty_text: return "empty_text";
    case ViolationKind::image_flag_mismatch: return "image_flag_mismatch";
    case ViolationKind::multiple_image_tokens: return "multiple_image_tokens";
  }
  return "unknown";
}

std::string Violation::describe() const {
  std::string out(to_string(kind));
  if (turn_index) out += " at turn " + std::to_string(*turn_index);
  return out;
}

std::vector<Violation> validate_conversation(const Conversation& c) {
  std::vector<Violation> out;
  if (blank(c.id)) out.push_back({ViolationKind::empty_id, std::nullopt});
  if (c.turns.size() < 2) out.push_back({ViolationKind::too_few_turns, std::nullopt});
  if (c.turns.size() % 2 != 0) out.push_back({ViolationKind::odd_length, std::nullopt});
  std::size_t image_turns = 0;
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    const Turn& t = c.turns[i];
    const Speaker expected = i % 2 == 0 ? Speaker::human : Speaker::assistant;
    if (t.speaker != expected) out.push_back({ViolationKind::ordering, i});
    if (blank(t.text)) out.push_back({ViolationKind::empty_text, i});
    const std::size_t tokens = count_image_tokens(t.text);
    if (t.has_image_token != (tokens > 0)) out.push_back({ViolationKind::image_flag_mismatch, i});
    if (tokens > 1) out.push_back({ViolationKind::multiple_image_tokens, i});
    if (tokens > 0) {
      ++image_turns;
      if (image_turns == 2) out.push_back({ViolationKind::multiple_image_tokens, i});
    }
  }
  return out;
}

void MixtureSpec::validate() const {
  if (balance_adapted == 0 || balance_original == 0) {
    throw ConfigError("mixture balance components must be positive");
  }
  for (const auto& [source, w] : source_weights) {
    if (!(w >= 0.0)) throw ConfigError("negative weight for source '" + source + "'");
  }
}

std::string_view to_string(LanguageVariant v) {
  return v == LanguageVariant::source ? "source" : "target";
}

LanguageVariant parse_variant(std::string_view s) {
  if (s == "source" || s == "en") return LanguageVariant::source;
  if (s == "target" || s == "pl") return LanguageVariant::target;
  throw ConfigError("unknown language variant '" + std::string(s) + "'");
}

std::string_view to_string(IssueCode c) {
  static constexpr std::string_view kNames[] = {"1a", "1b", "1c", "1d", "1e", "1f",
                                                "1g", "1h", "1i", "2a", "2b"};
  return kNames[static_cast<int>(c)];
}

IssueCode parse_issue_code(std::string_view s) {
  for (IssueCode c : kAllIssueCodes) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown issue category '" + std::string(s) + "'");
}

bool is_inaccuracy(IssueCode c) { return static_cast<int>(c) <= static_cast<int>(IssueCode::c1i); }

std::string McItem::valid_letters() const {
  std::string out;
  for (const auto& [letter, text] : options) out.push_back(letter);
  return out;
}

std::vector<std::string> validate_mc_item(const McItem& item) {
  std::vector<std::string> out;
  if (blank(item.id)) out.emplace_back("empty id");
  if (item.options.size() < 2 || item.options.size() > 4) {
    out.emplace_back("expected 2-4 options, got " + std::to_string(item.options.size()));
  }
  char expected = 'A';
  for (const auto& [letter, text] : item.options) {
    if (letter != expected) {
      out.emplace_back(std::string("option letters not consecutive from A: missing ") + expected);
      break;
    }
    ++expected;
  }
  if (!item.options.contains(item.answer)) {
    out.emplace_back(std::string("answer ") + item.answer + " is not an option");
  }
  return out;
}

std::string_view to_string(Assignment a) {
  return a == Assignment::left_is_a ? "left_is_a" : "right_is_a";
}
std::string_view to_string(Criterion c) {
  return c == Criterion::linguistic ? "linguistic" : "content";
}
std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::a: return "a";
    case Choice::b: return "b";
    case Choice::tie: return "tie";
  }
  return "tie";
}
std::string_view to_string(PromptOrder o) {
  switch (o) {
    case PromptOrder::ab: return "ab";
    case PromptOrder::ba: return "ba";
    case PromptOrder::single: return "single";
  }
  return "single";
}

Assignment parse_assignment(std::string_view s) {
  if (s == "left_is_a") return Assignment::left_is_a;
  if (s == "right_is_a") return Assignment::right_is_a;
  throw ConfigError("unknown assignment '" + std::string(s) + "'");
}
Criterion parse_criterion(std::string_view s) {
  if (s == "linguistic") return Criterion::linguistic;
  if (s == "content") return Criterion::content;
  throw ConfigError("unknown criterion '" + std::string(s) + "'");
}
Choice parse_choice(std::string_view s) {
  if (s == "a") return Choice::a;
  if (s == "b") return Choice::b;
  if (s == "tie") return Choice::tie;
  throw ConfigError("unknown choice '" + std::string(s) + "'");
}
PromptOrder parse_prompt_order(std::string_view s) {
  if (s == "ab") return PromptOrder::ab;
  if (s == "ba") return PromptOrder::ba;
  if (s == "single") return PromptOrder::single;
  throw ConfigError("unknown prompt order '" + std::string(s) + "'");
}

bool verdict_permitted(const PairwiseTask& task, const Verdict& verdict) {
  return !(verdict.choice == Choice::tie && !task.tie_allowed);
}

Winner resolve_winner(Assignment assignment, Choice choice) {
  if (choice == Choice::tie) return Winner::tie;
  const bool a = choice == Choice::a;
  const bool left_is_a = assignment == Assignment::left_is_a;
  return a == left_is_a ? Winner::left : Winner::right;
}

}  // namespace vlmforge

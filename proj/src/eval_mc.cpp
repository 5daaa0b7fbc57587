#include "vlmforge/eval_mc.hpp"

#include <algorithm>

#include "vlmforge/io.hpp"
#include "vlmforge/parallel.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

constexpr std::string_view kDirectivePl = "Odpowiedz wyłącznie literą wybranej odpowiedzi.";
constexpr std::string_view kDirectiveEn = "Answer with the option's letter from the given choices directly.";

bool is_word(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) || c == '_';
}

bool is_valid(char c, std::string_view valid) { return c >= 'A' && c <= 'Z' && valid.find(c) != std::string_view::npos; }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::optional<char> rule_whole(std::string_view raw, std::string_view valid) {
  std::string_view s = trim(raw);
  if (!s.empty() && (s.front() == '(' || s.front() == '[')) s.remove_prefix(1);
  if (s.empty() || !is_valid(s.front(), valid)) return std::nullopt;
  const char letter = s.front();
  s.remove_prefix(1);
  if (!s.empty() && (s.front() == ')' || s.front() == ']')) s.remove_prefix(1);
  if (!s.empty() && std::string_view(".:!,;").find(s.front()) != std::string_view::npos) s.remove_prefix(1);
  return s.empty() ? std::optional<char>(letter) : std::nullopt;
}

std::optional<char> rule_letter_punct(std::string_view s, std::string_view valid) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (!is_valid(s[i], valid)) continue;
    if (i > 0 && is_word(s[i - 1])) continue;
    if (s[i + 1] == '.' || s[i + 1] == ')' || s[i + 1] == ':') return s[i];
  }
  return std::nullopt;
}

std::string fold(std::string_view s) {
  std::string out(s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto u = static_cast<unsigned char>(out[i]);
    if (u < 0x80) {
      out[i] = static_cast<char>(std::tolower(u));
    } else if (u == 0xC5 && i + 1 < out.size() && static_cast<unsigned char>(out[i + 1]) == 0xB9) {
      out[++i] = static_cast<char>(0xBA);  // Ź -> ź
    }
  }
  return out;
}

std::optional<char> rule_cue(std::string_view s, std::string_view valid) {
  static constexpr std::string_view kCues[] = {"answer", "odpowiedź", "odpowiedz", "odp"};
  static constexpr std::string_view kFillers[] = {"is", "to", "jest"};
  constexpr std::string_view kSeparators = " \t\r\n:-=*\"'.";
  const std::string folded = fold(s);
  std::optional<std::pair<std::size_t, char>> best;
  for (auto cue : kCues) {
    for (std::size_t pos = folded.find(cue); pos != std::string::npos; pos = folded.find(cue, pos + 1)) {
      if (pos > 0 && is_word(folded[pos - 1])) continue;
      std::size_t i = pos + cue.size();
      if (i < folded.size() && is_word(folded[i])) continue;
      auto skip = [&] {
        while (i < folded.size() && kSeparators.find(folded[i]) != std::string_view::npos) ++i;
      };
      skip();
      for (auto f : kFillers) {
        if (folded.compare(i, f.size(), f) == 0 && (i + f.size() == folded.size() || !is_word(folded[i + f.size()]))) {
          i += f.size();
          skip();
          break;
        }
      }
      if (i < s.size() && (s[i] == '(' || s[i] == '[')) ++i;
      if (i < s.size() && is_valid(s[i], valid) && (i + 1 == s.size() || !is_word(s[i + 1]))) {
        if (!best || pos < best->first) best = std::pair{pos, s[i]};
        break;
      }
    }
  }
  return best ? std::optional<char>(best->second) : std::nullopt;
}

json optional_letter(const std::optional<char>& c) { return c ? json(std::string(1, *c)) : json(nullptr); }

}  // namespace

std::string build_prompt(const McItem& item) {
  std::string p = item.question;
  p += "\n";
  for (const auto& [letter, text] : item.options) {
    p += letter;
    p += ". ";
    p += text;
    p += "\n";
  }
  p += item.language_variant == LanguageVariant::target ? kDirectivePl : kDirectiveEn;
  return p;
}

Extraction extract(std::string_view raw, std::string_view valid_letters, int rules) {
  using Rule = std::optional<char> (*)(std::string_view, std::string_view);
  static constexpr Rule kRules[] = {rule_whole, rule_letter_punct, rule_cue};
  for (int r = 0; r < std::min(rules, kExtractionRuleCount); ++r) {
    if (auto c = kRules[r](raw, valid_letters)) return {c, static_cast<ExtractionRule>(r)};
  }
  return {};
}

std::optional<char> extract_choice(std::string_view raw, std::string_view valid_letters) {
  return extract(raw, valid_letters).letter;
}

json to_json(const McResult& r) {
  json j{{"correct", r.correct},
         {"extracted", optional_letter(r.extracted)},
         {"id", r.item_id},
         {"raw", r.raw_output},
         {"status", r.matched ? "matched" : "unmatched"}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

McResult mc_result_from_json(const json& j) {
  McResult r;
  r.item_id = j.at("id").get<std::string>();
  r.raw_output = j.at("raw").get<std::string>();
  if (const auto& e = j.at("extracted"); !e.is_null()) r.extracted = e.get<std::string>().at(0);
  r.correct = j.at("correct").get<bool>();
  r.matched = j.at("status").get<std::string>() == "matched";
  r.error = j.value("error", std::string());
  return r;
}

std::string BenchmarkSummary::accuracy_percent() const { return format_hundredths(accuracy_hundredths); }

json BenchmarkSummary::to_json() const {
  return json{{"accuracy", accuracy_percent()},
              {"correct", correct},
              {"matched", matched},
              {"model", model},
              {"temperature", temperature},
              {"timestamp", timestamp},
              {"total", total},
              {"transport_failures", transport_failures},
              {"unmatched", unmatched},
              {"variant", variant}};
}

BenchmarkSummary summarize(std::span<const McResult> results, std::string variant, std::string model) {
  BenchmarkSummary s;
  s.total = results.size();
  for (const auto& r : results) {
    s.correct += r.correct ? 1 : 0;
    s.matched += r.matched ? 1 : 0;
    s.transport_failures += r.error.empty() ? 0 : 1;
  }
  s.unmatched = s.total - s.matched;
  s.accuracy_hundredths = s.total ? percent_hundredths(s.correct, s.total) : 0;
  s.variant = std::move(variant);
  s.model = std::move(model);
  s.timestamp = utc_timestamp();
  return s;
}

BenchmarkRun run_benchmark(std::span<const McItem> items, ChatClient& client, const BenchmarkOptions& options) {
  if (items.empty()) throw ContractError("empty benchmark");
  for (const auto& item : items) {
    if (auto problems = validate_mc_item(item); !problems.empty()) {
      throw ContractError("invalid item " + item.id + ": " + problems.front());
    }
  }
  BenchmarkRun run;
  run.results.resize(items.size());
  parallel_for(items.size(), options.jobs, [&](std::size_t i) {
    const McItem& item = items[i];
    McResult& r = run.results[i];
    r.item_id = item.id;
    ChatRequest req;
    req.model = options.model;
    req.temperature = 0.0;
    ChatMessage m{"user", build_prompt(item), std::nullopt};
    if (!item.image_ref.empty()) m.image_url = image_content_url(item.image_ref, options.image_base);
    req.messages.push_back(std::move(m));
    try {
      r.raw_output = with_retry(options.retry, [&] { return client.complete(req); });
    } catch (const ServiceError& e) {
      r.error = e.what();
      return;
    }
    r.extracted = extract_choice(r.raw_output, item.valid_letters());
    r.matched = r.extracted.has_value();
    r.correct = r.matched && *r.extracted == item.answer;
  });
  const auto variant = items.front().language_variant == LanguageVariant::target ? "pl" : "en";
  run.summary = summarize(run.results, variant, options.model);
  return run;
}

void write_benchmark(const BenchmarkRun& run, const std::filesystem::path& results_path) {
  if (results_path.has_parent_path()) std::filesystem::create_directories(results_path.parent_path());
  std::string body;
  for (const auto& r : run.results) body += canonical_dump(to_json(r)) + "\n";
  write_file_atomic(results_path, body);
  auto summary_path = results_path;
  summary_path.replace_extension(".summary.json");
  write_json_file(summary_path, run.summary.to_json());
}

std::string LedgerSummary::inaccuracy_percent() const { return format_hundredths(inaccuracy_hundredths); }
std::string LedgerSummary::foreign_percent() const { return format_hundredths(foreign_hundredths); }

json LedgerSummary::to_json() const {
  json counts_j = json::object();
  for (auto code : kAllIssueCodes) {
    auto it = counts.find(code);
    counts_j[std::string(to_string(code))] = it == counts.end() ? 0 : it->second;
  }
  json j{{"counts", counts_j},
         {"foreign_context_count", foreign_count},
         {"foreign_context_percent", foreign_percent()},
         {"inaccuracy_count", inaccuracy_count},
         {"inaccuracy_percent", inaccuracy_percent()},
         {"total_questions", total_questions}};
  if (discrepancy) j["discrepancy"] = *discrepancy;
  return j;
}

IssueLedger IssueLedger::load(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  IssueLedger l;
  try {
    for (const auto& id : j.at("known_ids")) l.known_.insert(id.get<std::string>());
    for (const auto& [id, v] : j.at("items").items()) {
      l.items_[id] = IssueCategory{parse_issue_code(v.at("code").get<std::string>()), v.value("note", std::string())};
    }
    for (const auto& a : j.at("audit")) {
      LedgerAuditEntry e{a.at("timestamp").get<std::string>(), a.at("id").get<std::string>(),
                         parse_issue_code(a.at("code").get<std::string>()), std::nullopt,
                         a.value("note", std::string())};
      if (a.contains("previous") && !a["previous"].is_null()) e.previous = parse_issue_code(a["previous"].get<std::string>());
      l.audit_.push_back(std::move(e));
    }
    if (j.contains("reported_inaccuracy") && !j["reported_inaccuracy"].is_null()) {
      l.reported_inaccuracy_ = j["reported_inaccuracy"].get<long long>();
    }
  } catch (const json::exception& e) {
    throw ConfigError("invalid ledger " + path.string() + ": " + e.what());
  }
  return l;
}

void IssueLedger::save(const std::filesystem::path& path) const {
  json items = json::object();
  for (const auto& [id, c] : items_) items[id] = json{{"code", to_string(c.code)}, {"note", c.note}};
  json audit = json::array();
  for (const auto& a : audit_) {
    audit.push_back(json{{"code", to_string(a.code)},
                         {"id", a.item_id},
                         {"note", a.note},
                         {"previous", a.previous ? json(to_string(*a.previous)) : json(nullptr)},
                         {"timestamp", a.timestamp}});
  }
  json j{{"format", "vlmforge-ledger/1"},
         {"known_ids", known_},
         {"items", items},
         {"audit", audit},
         {"reported_inaccuracy", reported_inaccuracy_ ? json(*reported_inaccuracy_) : json(nullptr)}};
  write_json_file(path, j);
}

void IssueLedger::record(const std::string& item_id, IssueCode code, std::string note) {
  if (!known_.contains(item_id)) throw NotFoundError("unknown item id '" + item_id + "'");
  std::optional<IssueCode> previous;
  if (auto it = items_.find(item_id); it != items_.end()) previous = it->second.code;
  audit_.push_back({utc_timestamp(), item_id, code, previous, note});
  items_[item_id] = IssueCategory{code, std::move(note)};
}

LedgerSummary IssueLedger::summary() const {
  LedgerSummary s;
  s.total_questions = known_.size();
  for (const auto& [id, c] : items_) {
    ++s.counts[c.code];
    (is_inaccuracy(c.code) ? s.inaccuracy_count : s.foreign_count) += 1;
  }
  if (s.total_questions > 0) {
    s.inaccuracy_hundredths = percent_hundredths(s.inaccuracy_count, s.total_questions);
    s.foreign_hundredths = percent_hundredths(s.foreign_count, s.total_questions);
  }
  if (reported_inaccuracy_ && *reported_inaccuracy_ != s.inaccuracy_hundredths) {
    s.discrepancy = "category counts sum to " + std::to_string(s.inaccuracy_count) + " (" +
                    s.inaccuracy_percent() + "%), reported " + format_hundredths(*reported_inaccuracy_) + "%";
  }
  return s;
}

}  // namespace vlmforge

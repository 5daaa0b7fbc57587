#include "vlmforge/arena.hpp"

#include <algorithm>
#include <fstream>
#include <regex>

#include "vlmforge/io.hpp"
#include "vlmforge/parallel.hpp"
#include "vlmforge/rng.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

constexpr std::string_view kNoTieCorrection =
    "Twoja odpowiedź nie była poprawnym obiektem JSON. Zwróć DOKŁADNIE jeden obiekt JSON z kluczami "
    "best i justification_for_rating. Wartość \"best\" MUSI być dokładnie \"a\" lub \"b\".";
constexpr std::string_view kTieCorrection =
    "Twoja odpowiedź nie była poprawnym obiektem JSON. Zwróć DOKŁADNIE jeden obiekt JSON z kluczami "
    "best_description, lang_comparison i justification_for_rating. Wartości \"best_description\" i "
    "\"lang_comparison\" MUSZĄ być dokładnie: \"a\", \"b\" lub \"remis\".";

std::optional<json> parse_object(std::string_view reply, const std::set<std::string>& keys) {
  json j;
  try {
    j = json::parse(reply);
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (!j.is_object() || j.size() != keys.size()) return std::nullopt;
  for (const auto& k : keys) {
    if (!j.contains(k) || !j[k].is_string()) return std::nullopt;
  }
  return j;
}

std::optional<Choice> choice_value(const json& v, bool tie_allowed) {
  const auto s = v.get<std::string>();
  if (s == "a") return Choice::a;
  if (s == "b") return Choice::b;
  if (s == "remis" && tie_allowed) return Choice::tie;
  return std::nullopt;
}

ChatRequest base_request(const JudgeOptions& options, std::string prompt, const std::string* image_ref) {
  ChatRequest r;
  r.model = options.model;
  r.temperature = 0.0;
  ChatMessage m{"user", std::move(prompt), std::nullopt};
  if (image_ref && !image_ref->empty()) m.image_url = image_content_url(*image_ref, options.image_base);
  r.messages.push_back(std::move(m));
  return r;
}

// Sends the request, then at most one correction turn. Returns the parsed
// value or the reason it could not be obtained.
template <typename T, typename Parse>
std::pair<std::optional<T>, std::string> ask(ChatClient& judge, ChatRequest request, const RetryPolicy& retry,
                                             Parse parse, std::string_view correction) {
  std::string reply;
  try {
    reply = with_retry(retry, [&] { return judge.complete(request); });
    if (auto v = parse(reply)) return {v, {}};
    request.messages.push_back({"assistant", reply, std::nullopt});
    request.messages.push_back({"user", std::string(correction), std::nullopt});
    reply = with_retry(retry, [&] { return judge.complete(request); });
    if (auto v = parse(reply)) return {v, {}};
  } catch (const ServiceError& e) {
    return {std::nullopt, std::string("transport: ") + e.what()};
  }
  return {std::nullopt, "unparseable reply after reprompt: " + reply.substr(0, 200)};
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(Protocol p) {
  return p == Protocol::no_tie_two_orders ? "no_tie_two_orders" : "tie_allowed_randomized";
}

Protocol parse_protocol(std::string_view s) {
  if (s == "no_tie_two_orders" || s == "no-tie") return Protocol::no_tie_two_orders;
  if (s == "tie_allowed_randomized" || s == "tie") return Protocol::tie_allowed_randomized;
  throw ConfigError("unknown protocol '" + std::string(s) + "'");
}

std::string PromptTemplate::render(std::string_view response_a, std::string_view response_b) const {
  static constexpr std::string_view kA = "{response_a}";
  static constexpr std::string_view kB = "{response_b}";
  std::string out;
  std::string_view rest = text;
  while (true) {
    const auto pa = rest.find(kA);
    const auto pb = rest.find(kB);
    const auto p = std::min(pa, pb);
    if (p == std::string_view::npos) break;
    out.append(rest.substr(0, p));
    out.append(p == pa ? response_a : response_b);
    rest.remove_prefix(p + kA.size());
  }
  out.append(rest);
  return out;
}

const PromptTemplate& builtin_prompt(std::string_view name) {
  static const std::vector<PromptTemplate> prompts = [] {
    std::vector<PromptTemplate> v;
    for (std::size_t i = 0; i < detail::kEmbeddedPromptCount; ++i) {
      const auto& e = detail::kEmbeddedPrompts[i];
      v.push_back({e.name, e.version, e.text});
    }
    return v;
  }();
  const PromptTemplate* best = nullptr;
  for (const auto& p : prompts) {
    if (p.name == name && (!best || p.version > best->version)) best = &p;
  }
  if (!best) throw ConfigError("no built-in prompt named '" + std::string(name) + "'");
  return *best;
}

PromptTemplate load_prompt(const std::filesystem::path& dir, std::string_view name) {
  const std::regex pattern(std::string(name) + R"(\.v([0-9]+)\.txt)");
  std::optional<PromptTemplate> best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string file = entry.path().filename().string();
    if (!std::regex_match(file, m, pattern)) continue;
    const int version = std::stoi(m[1].str());
    if (!best || version > best->version) best = PromptTemplate{std::string(name), version, read_file(entry.path())};
  }
  if (!best) throw ConfigError("no prompt '" + std::string(name) + "' in " + dir.string());
  return *best;
}

PromptSet PromptSet::from_dir(const std::filesystem::path& dir) {
  PromptSet s;
  s.no_tie_linguistic = load_prompt(dir, "no_tie_llm");
  s.no_tie_content = load_prompt(dir, "no_tie_vlm");
  s.tie_allowed = load_prompt(dir, "tie_allowed_vlm");
  return s;
}

CaptionSet read_captions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  CaptionSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const auto id = j.at("id").get<std::string>();
      if (!set.captions.emplace(id, j.at("caption").get<std::string>()).second) {
        throw IngestError(path.string() + ":" + std::to_string(lineno) + ": duplicate id " + id);
      }
      if (j.contains("image") && j["image"].is_string()) set.image_refs[id] = j["image"].get<std::string>();
    } catch (const json::exception& e) {
      throw IngestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return set;
}

std::vector<PairwiseTask> make_tasks(const CaptionSet& x, const CaptionSet& y, std::uint64_t seed,
                                     Criterion criterion, bool tie_allowed) {
  std::vector<std::string> only_x, only_y;
  for (const auto& [id, _] : x.captions) {
    if (!y.captions.contains(id)) only_x.push_back(id);
  }
  for (const auto& [id, _] : y.captions) {
    if (!x.captions.contains(id)) only_y.push_back(id);
  }
  if (!only_x.empty() || !only_y.empty()) {
    std::string msg = "caption id mismatch;";
    if (!only_x.empty()) {
      msg += " only in x:";
      for (const auto& id : only_x) msg += " " + id;
    }
    if (!only_y.empty()) {
      msg += (only_x.empty() ? "" : ";") + std::string(" only in y:");
      for (const auto& id : only_y) msg += " " + id;
    }
    throw ContractError(msg);
  }
  Rng rng(seed);
  std::vector<PairwiseTask> tasks;
  for (const auto& [id, caption] : x.captions) {
    PairwiseTask t;
    t.item_id = id;
    if (auto it = x.image_refs.find(id); it != x.image_refs.end()) {
      t.image_ref = it->second;
    } else if (auto jt = y.image_refs.find(id); jt != y.image_refs.end()) {
      t.image_ref = jt->second;
    }
    t.caption_left = caption;
    t.caption_right = y.captions.at(id);
    t.assignment = rng.bernoulli(0.5) ? Assignment::left_is_a : Assignment::right_is_a;
    t.criterion = criterion;
    t.tie_allowed = tie_allowed;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

std::vector<std::string> sample_ids(std::vector<std::string> ids, std::size_t k, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (k > ids.size()) {
    throw ContractError("cannot sample " + std::to_string(k) + " of " + std::to_string(ids.size()) + " ids");
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                             static_cast<std::int64_t>(ids.size()) - 1));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::optional<NoTieReply> parse_no_tie_reply(std::string_view reply) {
  const auto j = parse_object(reply, {"best", "justification_for_rating"});
  if (!j) return std::nullopt;
  const auto best = choice_value((*j)["best"], false);
  if (!best) return std::nullopt;
  return NoTieReply{*best, (*j)["justification_for_rating"].get<std::string>()};
}

std::optional<TieReply> parse_tie_reply(std::string_view reply) {
  const auto j = parse_object(reply, {"best_description", "lang_comparison", "justification_for_rating"});
  if (!j) return std::nullopt;
  const auto content = choice_value((*j)["best_description"], true);
  const auto linguistic = choice_value((*j)["lang_comparison"], true);
  if (!content || !linguistic) return std::nullopt;
  return TieReply{*content, *linguistic, (*j)["justification_for_rating"].get<std::string>()};
}

ChatRequest no_tie_request(const PairwiseTask& task, PromptOrder order, const JudgeOptions& options) {
  if (order == PromptOrder::single) throw ContractError("no-tie requests need an explicit order");
  const bool x_first = order == PromptOrder::ab;
  const auto& a = x_first ? task.caption_left : task.caption_right;
  const auto& b = x_first ? task.caption_right : task.caption_left;
  if (task.criterion == Criterion::linguistic) {
    return base_request(options, options.prompts.no_tie_linguistic.render(a, b), nullptr);
  }
  return base_request(options, options.prompts.no_tie_content.render(a, b), &task.image_ref);
}

ChatRequest tie_request(const PairwiseTask& task, const JudgeOptions& options) {
  return base_request(options, options.prompts.tie_allowed.render(task.caption_a(), task.caption_b()),
                      &task.image_ref);
}

std::pair<Verdict, Verdict> judge_no_tie(const PairwiseTask& task, ChatClient& judge, const JudgeOptions& options) {
  auto one = [&](PromptOrder order) {
    Verdict v;
    v.judge_id = options.judge_id;
    v.prompt_order = order;
    auto [reply, error] = ask<NoTieReply>(judge, no_tie_request(task, order, options), options.retry,
                                          parse_no_tie_reply, kNoTieCorrection);
    if (reply) {
      v.choice = reply->best;
      v.justification = std::move(reply->justification);
    } else {
      v.error = std::move(error);
    }
    return v;
  };
  Verdict ab = one(PromptOrder::ab);
  Verdict ba = one(PromptOrder::ba);
  return {std::move(ab), std::move(ba)};
}

std::pair<Verdict, Verdict> judge_with_tie(const PairwiseTask& task, ChatClient& judge, const JudgeOptions& options) {
  Verdict content, linguistic;
  content.judge_id = linguistic.judge_id = options.judge_id;
  auto [reply, error] = ask<TieReply>(judge, tie_request(task, options), options.retry, parse_tie_reply, kTieCorrection);
  if (reply) {
    content.choice = reply->content;
    linguistic.choice = reply->linguistic;
    content.justification = linguistic.justification = reply->justification;
  } else {
    content.error = linguistic.error = error;
  }
  return {std::move(content), std::move(linguistic)};
}

std::optional<Winner> VerdictRecord::winner() const {
  if (!verdict.choice) return std::nullopt;
  return resolve_winner(assignment, *verdict.choice);
}

json to_json(const VerdictRecord& r) {
  json j{{"assignment", to_string(r.assignment)},
         {"choice", r.verdict.choice ? json(to_string(*r.verdict.choice)) : json(nullptr)},
         {"criterion", to_string(r.criterion)},
         {"id", r.item_id},
         {"judge", r.verdict.judge_id},
         {"justification", r.verdict.justification},
         {"order", to_string(r.verdict.prompt_order)}};
  if (auto w = r.winner()) {
    j["winner"] = *w == Winner::left ? "x" : *w == Winner::right ? "y" : "tie";
  } else {
    j["winner"] = nullptr;
  }
  if (!r.verdict.error.empty()) j["error"] = r.verdict.error;
  return j;
}

VerdictRecord verdict_record_from_json(const json& j) {
  VerdictRecord r;
  r.item_id = j.at("id").get<std::string>();
  r.criterion = parse_criterion(j.at("criterion").get<std::string>());
  r.assignment = parse_assignment(j.at("assignment").get<std::string>());
  if (const auto& c = j.at("choice"); !c.is_null()) r.verdict.choice = parse_choice(c.get<std::string>());
  r.verdict.judge_id = j.value("judge", std::string());
  r.verdict.justification = j.value("justification", std::string());
  r.verdict.prompt_order = parse_prompt_order(j.at("order").get<std::string>());
  r.verdict.error = j.value("error", std::string());
  return r;
}

void ArenaRun::check() const {
  const std::size_t per_task = 2;  // two orders, or two criteria from one reply
  if (verdicts.size() != tasks.size() * per_task) {
    throw ContractError("expected " + std::to_string(tasks.size() * per_task) + " verdicts, found " +
                        std::to_string(verdicts.size()));
  }
  for (const auto& v : verdicts) {
    if (protocol == Protocol::no_tie_two_orders && v.verdict.choice == Choice::tie) {
      throw ContractError("tie verdict under the no-tie protocol for " + v.item_id);
    }
  }
}

ArenaRun run_arena(std::string model_x, std::string model_y, std::vector<PairwiseTask> tasks, Protocol protocol,
                   ChatClient& judge, const ArenaOptions& options) {
  ArenaRun run;
  run.model_x = std::move(model_x);
  run.model_y = std::move(model_y);
  run.protocol = protocol;
  run.judge_id = options.judge.judge_id;
  if (!tasks.empty()) run.criterion = tasks.front().criterion;
  run.tasks = std::move(tasks);
  std::vector<std::array<VerdictRecord, 2>> slots(run.tasks.size());
  parallel_for(run.tasks.size(), options.jobs, [&](std::size_t i) {
    const PairwiseTask& t = run.tasks[i];
    auto& out = slots[i];
    out[0].item_id = out[1].item_id = t.item_id;
    if (protocol == Protocol::no_tie_two_orders) {
      auto [ab, ba] = judge_no_tie(t, judge, options.judge);
      out[0].criterion = out[1].criterion = t.criterion;
      out[0].assignment = Assignment::left_is_a;
      out[1].assignment = Assignment::right_is_a;
      out[0].verdict = std::move(ab);
      out[1].verdict = std::move(ba);
    } else {
      auto [content, linguistic] = judge_with_tie(t, judge, options.judge);
      out[0].criterion = Criterion::content;
      out[1].criterion = Criterion::linguistic;
      out[0].assignment = out[1].assignment = t.assignment;
      out[0].verdict = std::move(content);
      out[1].verdict = std::move(linguistic);
    }
  });
  for (auto& s : slots) {
    run.verdicts.push_back(std::move(s[0]));
    run.verdicts.push_back(std::move(s[1]));
  }
  run.check();
  return run;
}

long long PreferenceReport::preference_rate_x() const { return percent_hundredths(win_x, effective()); }
long long PreferenceReport::preference_rate_y() const { return percent_hundredths(win_y, effective()); }
long long PreferenceReport::tie_rate() const { return percent_hundredths(tie, effective()); }
long long PreferenceReport::win_tie_rate_x() const { return percent_hundredths(win_x + tie, effective()); }

PreferenceReport PreferenceReport::swapped() const {
  PreferenceReport r = *this;
  std::swap(r.win_x, r.win_y);
  return r;
}

json PreferenceReport::to_json() const {
  return json{{"effective", effective()},
              {"issued", issued},
              {"parse_failures", parse_failures},
              {"preference_rate_x", format_hundredths(preference_rate_x())},
              {"preference_rate_y", format_hundredths(preference_rate_y())},
              {"tie", tie},
              {"tie_rate", format_hundredths(tie_rate())},
              {"win_tie_rate_x", format_hundredths(win_tie_rate_x())},
              {"win_x", win_x},
              {"win_y", win_y}};
}

PreferenceReport preference_rate(std::span<const VerdictRecord> verdicts, Criterion criterion) {
  PreferenceReport r;
  for (const auto& v : verdicts) {
    if (v.criterion != criterion) continue;
    ++r.issued;
    const auto w = v.winner();
    if (!w) {
      ++r.parse_failures;
    } else if (*w == Winner::left) {
      ++r.win_x;
    } else if (*w == Winner::right) {
      ++r.win_y;
    } else {
      ++r.tie;
    }
  }
  if (r.effective() == 0) throw ContractError("no effective comparisons for criterion " + std::string(to_string(criterion)));
  return r;
}

PreferenceReport preference_rate(const ArenaRun& run, Criterion criterion) {
  return preference_rate(run.verdicts, criterion);
}

void write_arena(const ArenaRun& run, const std::filesystem::path& verdicts_path) {
  if (verdicts_path.has_parent_path()) std::filesystem::create_directories(verdicts_path.parent_path());
  std::string body;
  for (const auto& v : run.verdicts) body += canonical_dump(to_json(v)) + "\n";
  write_file_atomic(verdicts_path, body);
  json reports = json::object();
  const std::vector<Criterion> criteria =
      run.protocol == Protocol::no_tie_two_orders ? std::vector{run.criterion}
                                                  : std::vector{Criterion::content, Criterion::linguistic};
  for (auto c : criteria) {
    try {
      reports[std::string(to_string(c))] = preference_rate(run, c).to_json();
    } catch (const ContractError& e) {
      reports[std::string(to_string(c))] = json{{"error", e.what()}};
    }
  }
  auto report_path = verdicts_path;
  report_path.replace_extension(".report.json");
  write_json_file(report_path, json{{"judge", run.judge_id},
                                    {"model_x", run.model_x},
                                    {"model_y", run.model_y},
                                    {"protocol", to_string(run.protocol)},
                                    {"reports", reports},
                                    {"tasks", run.tasks.size()}});
}

std::vector<std::string> anonymization_scan(std::span<const std::string> texts, const std::set<std::string>& names) {
  std::vector<std::string> hits;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const std::string t = lower_ascii(texts[i]);
    for (const auto& name : names) {
      if (!name.empty() && t.find(lower_ascii(name)) != std::string::npos) {
        hits.push_back("text#" + std::to_string(i) + ": " + name);
      }
    }
  }
  return hits;
}

}  // namespace vlmforge

#include "vlmforge/adapt.hpp"

#include <algorithm>
#include <cmath>

#include "vlmforge/digest.hpp"
#include "vlmforge/io.hpp"
#include "vlmforge/parallel.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

std::string strip_tokens(std::string text) {
  for (auto pos = text.find(kImageToken); pos != std::string::npos; pos = text.find(kImageToken)) {
    std::size_t end = pos + kImageToken.size();
    while (end < text.size() && (text[end] == '\n' || text[end] == ' ')) ++end;
    text.erase(pos, end - pos);
  }
  const auto first = text.find_first_not_of(" \t\r\n");
  const auto last = text.find_last_not_of(" \t\r\n");
  return first == std::string::npos ? std::string() : text.substr(first, last - first + 1);
}

double checked_score(double raw, const char* side, EventLog* events, const std::string& conversation_id,
                     std::size_t index) {
  if (std::isnan(raw)) throw ServiceError("QE scorer returned NaN");
  if (raw >= 0.0 && raw <= 1.0) return raw;
  const double clamped = std::clamp(raw, 0.0, 1.0);
  if (events) {
    events->add({AdaptEventKind::score_clamped, conversation_id, index,
                 std::string(side) + " score " + std::to_string(raw) + " clamped to " +
                     std::to_string(clamped)});
  }
  return clamped;
}

json event_to_json(const AdaptEvent& e) {
  return {{"kind", std::string(to_string(e.kind))}, {"id", e.conversation_id}, {"pair", e.pair_index},
          {"detail", e.detail}};
}

AdaptEvent event_from_json(const json& j) {
  static const std::pair<std::string_view, AdaptEventKind> kKinds[] = {
      {"token_repair", AdaptEventKind::token_repair},
      {"score_clamped", AdaptEventKind::score_clamped},
      {"pair_failed", AdaptEventKind::pair_failed}};
  AdaptEventKind kind = AdaptEventKind::pair_failed;
  const auto name = j.at("kind").get<std::string>();
  for (const auto& [n, k] : kKinds) {
    if (n == name) kind = k;
  }
  return {kind, j.at("id").get<std::string>(), j.at("pair").get<std::size_t>(),
          j.at("detail").get<std::string>()};
}

json histogram_to_json(const ScoreHistogram& h) { return json(h.bins); }

ScoreHistogram histogram_from_json(const json& j) {
  ScoreHistogram h;
  for (std::size_t i = 0; i < kHistogramBins; ++i) h.bins[i] = j.at(i).get<std::uint64_t>();
  return h;
}

struct ConversationOutcome {
  std::optional<Conversation> output;
  AdaptReport report;
  std::optional<QuarantineEntry> quarantine;
  std::vector<FailedPair> failed;
  std::vector<AdaptEvent> events;
};

ConversationOutcome adapt_one(const Conversation& c, std::size_t input_index, const AdaptConfig& config,
                              Translator& translator, Scorer& scorer) {
  ConversationOutcome out;
  out.report.conversations_in = 1;
  const auto violations = validate_conversation(c);
  if (!violations.empty()) {
    QuarantineEntry q;
    q.line = input_index + 1;
    q.raw = to_json(c).dump(-1, ' ', false, json::error_handler_t::replace);
    for (const auto& v : violations) q.reasons.push_back(v.describe());
    out.quarantine = std::move(q);
    out.report.quarantined = 1;
    return out;
  }
  EventLog events;
  const auto pairs = decompose(c);
  out.report.pairs_in = pairs.size();
  std::vector<QAPair> scored;
  for (const auto& pair : pairs) {
    try {
      QAPair translated = translate_pair(pair, translator, config, &events, c.id);
      scored.push_back(score_pair(translated, scorer, config, &events, c.id));
    } catch (const EndpointUnavailable&) {
      throw;
    } catch (const ServiceError& e) {
      out.failed.push_back({c.id, pair.index, e.what()});
      events.add({AdaptEventKind::pair_failed, c.id, pair.index, e.what()});
    }
  }
  for (const auto& p : scored) {
    out.report.question_scores.add(*p.qe_question);
    out.report.answer_scores.add(*p.qe_answer);
  }
  auto filtered = filter_pairs(scored, config.tau);
  out.report.pairs_failed = out.failed.size();
  out.report.pairs_kept = filtered.kept.size();
  out.report.pairs_removed = filtered.removed.size() + out.failed.size();
  out.output = reassemble(c, filtered.kept, config.target_language);
  if (out.output) {
    out.report.conversations_out = 1;
  } else {
    out.report.discarded_empty_dialogues = 1;
  }
  out.events = events.snapshot();
  out.report.token_repairs = events.count(AdaptEventKind::token_repair);
  out.report.scores_clamped = events.count(AdaptEventKind::score_clamped);
  return out;
}

struct Chunk {
  std::vector<Conversation> output;
  AdaptReport report;
  std::vector<QuarantineEntry> quarantine;
  std::vector<FailedPair> failed;
  std::vector<AdaptEvent> events;
};

json chunk_to_json(const Chunk& chunk, const std::string& fingerprint) {
  json output = json::array();
  for (const auto& c : chunk.output) output.push_back(to_json(c));
  json quarantine = json::array();
  for (const auto& q : chunk.quarantine) quarantine.push_back({{"line", q.line}, {"raw", q.raw}, {"reasons", q.reasons}});
  json failed = json::array();
  for (const auto& f : chunk.failed) failed.push_back({{"id", f.conversation_id}, {"pair", f.pair_index}, {"error", f.error}});
  json events = json::array();
  for (const auto& e : chunk.events) events.push_back(event_to_json(e));
  return {{"fingerprint", fingerprint}, {"report", chunk.report.to_json()}, {"output", std::move(output)},
          {"quarantine", std::move(quarantine)}, {"failed", std::move(failed)}, {"events", std::move(events)}};
}

Chunk chunk_from_json(const json& j, const AdaptConfig& config) {
  Chunk chunk;
  chunk.report = AdaptReport::from_json(j.at("report"));
  const IngestOptions defaults{"", Category::general, config.target_language};
  for (const auto& c : j.at("output")) chunk.output.push_back(conversation_from_json(c, defaults));
  for (const auto& q : j.at("quarantine")) {
    chunk.quarantine.push_back({q.at("line").get<std::size_t>(), q.at("raw").get<std::string>(),
                                q.at("reasons").get<std::vector<std::string>>()});
  }
  for (const auto& f : j.at("failed")) {
    chunk.failed.push_back({f.at("id").get<std::string>(), f.at("pair").get<std::size_t>(),
                            f.at("error").get<std::string>()});
  }
  for (const auto& e : j.at("events")) chunk.events.push_back(event_from_json(e));
  return chunk;
}

}  // namespace

void AdaptConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
  if (checkpoint_interval == 0) throw ConfigError("checkpoint interval must be positive");
  if (retry.attempts < 1) throw ConfigError("retry attempts must be at least 1");
}

std::string_view to_string(AdaptEventKind k) {
  switch (k) {
    case AdaptEventKind::token_repair: return "token_repair";
    case AdaptEventKind::score_clamped: return "score_clamped";
    case AdaptEventKind::pair_failed: return "pair_failed";
  }
  return "unknown";
}

void EventLog::add(AdaptEvent e) {
  std::lock_guard lock(mu_);
  events_.push_back(std::move(e));
}

std::vector<AdaptEvent> EventLog::snapshot() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::size_t EventLog::count(AdaptEventKind k) const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(events_.begin(), events_.end(), [k](const AdaptEvent& e) { return e.kind == k; }));
}

void ScoreHistogram::add(double score) {
  const double s = std::clamp(score, 0.0, 1.0);
  auto bin = static_cast<std::size_t>(s * kHistogramBins);
  bins[std::min(bin, kHistogramBins - 1)] += 1;
}

std::uint64_t ScoreHistogram::total() const {
  std::uint64_t n = 0;
  for (auto b : bins) n += b;
  return n;
}

bool AdaptReport::balanced() const {
  return pairs_in == pairs_kept + pairs_removed &&
         conversations_in == conversations_out + discarded_empty_dialogues + quarantined;
}

void AdaptReport::merge(const AdaptReport& o) {
  conversations_in += o.conversations_in;
  conversations_out += o.conversations_out;
  discarded_empty_dialogues += o.discarded_empty_dialogues;
  quarantined += o.quarantined;
  pairs_in += o.pairs_in;
  pairs_kept += o.pairs_kept;
  pairs_removed += o.pairs_removed;
  pairs_failed += o.pairs_failed;
  token_repairs += o.token_repairs;
  scores_clamped += o.scores_clamped;
  for (std::size_t i = 0; i < kHistogramBins; ++i) {
    question_scores.bins[i] += o.question_scores.bins[i];
    answer_scores.bins[i] += o.answer_scores.bins[i];
  }
}

json AdaptReport::to_json() const {
  return {{"conversations_in", conversations_in},
          {"conversations_out", conversations_out},
          {"discarded_empty_dialogues", discarded_empty_dialogues},
          {"quarantined", quarantined},
          {"pairs_in", pairs_in},
          {"pairs_kept", pairs_kept},
          {"pairs_removed", pairs_removed},
          {"pairs_failed", pairs_failed},
          {"token_repairs", token_repairs},
          {"scores_clamped", scores_clamped},
          {"question_score_histogram", histogram_to_json(question_scores)},
          {"answer_score_histogram", histogram_to_json(answer_scores)}};
}

AdaptReport AdaptReport::from_json(const json& j) {
  AdaptReport r;
  r.conversations_in = j.at("conversations_in").get<std::uint64_t>();
  r.conversations_out = j.at("conversations_out").get<std::uint64_t>();
  r.discarded_empty_dialogues = j.at("discarded_empty_dialogues").get<std::uint64_t>();
  r.quarantined = j.at("quarantined").get<std::uint64_t>();
  r.pairs_in = j.at("pairs_in").get<std::uint64_t>();
  r.pairs_kept = j.at("pairs_kept").get<std::uint64_t>();
  r.pairs_removed = j.at("pairs_removed").get<std::uint64_t>();
  r.pairs_failed = j.at("pairs_failed").get<std::uint64_t>();
  r.token_repairs = j.at("token_repairs").get<std::uint64_t>();
  r.scores_clamped = j.at("scores_clamped").get<std::uint64_t>();
  r.question_scores = histogram_from_json(j.at("question_score_histogram"));
  r.answer_scores = histogram_from_json(j.at("answer_score_histogram"));
  return r;
}

std::vector<QAPair> decompose(const Conversation& c) {
  if (const auto v = validate_conversation(c); !v.empty()) {
    throw ContractError("decompose: conversation '" + c.id + "' is invalid: " + v.front().describe());
  }
  std::vector<QAPair> pairs;
  pairs.reserve(c.turns.size() / 2);
  for (std::size_t i = 0; i < c.turns.size() / 2; ++i) {
    QAPair p;
    p.index = i;
    p.question = c.turns[2 * i];
    p.answer = c.turns[2 * i + 1];
    pairs.push_back(std::move(p));
  }
  return pairs;
}

bool repair_image_token(const std::string& source, std::string& translated) {
  const std::size_t want = count_image_tokens(source) > 0 ? 1 : 0;
  if (count_image_tokens(translated) == want) return false;
  std::string body = strip_tokens(translated);
  translated = want ? std::string(kImageToken) + "\n" + body : body;
  return true;
}

QAPair translate_pair(const QAPair& pair, Translator& translator, const AdaptConfig& config,
                      EventLog* events, const std::string& conversation_id) {
  if (pair.question_translated || pair.answer_translated) {
    throw ContractError("translate_pair: pair is already translated");
  }
  if (blank(pair.question.text) || blank(pair.answer.text)) {
    throw ContractError("translate_pair: empty question or answer");
  }
  QAPair out = pair;
  auto run = [&](const std::string& source, const char* side) {
    std::string t = with_retry(config.retry, [&] {
      return translator.translate(source, config.source_language, config.target_language);
    });
    if (blank(t)) throw ServiceError(std::string("empty ") + side + " translation");
    if (repair_image_token(source, t) && events) {
      events->add({AdaptEventKind::token_repair, conversation_id, pair.index,
                   std::string(side) + " image token repaired"});
    }
    return t;
  };
  out.question_translated = run(pair.question.text, "question");
  out.answer_translated = run(pair.answer.text, "answer");
  return out;
}

QAPair score_pair(const QAPair& pair, Scorer& scorer, const AdaptConfig& config, EventLog* events,
                  const std::string& conversation_id) {
  if (!pair.question_translated || !pair.answer_translated) {
    throw ContractError("score_pair: translations missing");
  }
  QAPair out = pair;
  const double q = with_retry(config.retry, [&] { return scorer.score(pair.question.text, *pair.question_translated); });
  const double a = with_retry(config.retry, [&] { return scorer.score(pair.answer.text, *pair.answer_translated); });
  out.qe_question = checked_score(q, "question", events, conversation_id, pair.index);
  out.qe_answer = checked_score(a, "answer", events, conversation_id, pair.index);
  return out;
}

FilterResult filter_pairs(std::span<const QAPair> pairs, double tau) {
  FilterResult r;
  for (const auto& p : pairs) {
    if (!p.scored()) throw ContractError("filter_pairs: pair " + std::to_string(p.index) + " is unscored");
    if (std::min(*p.qe_question, *p.qe_answer) >= tau) {
      r.kept.push_back(p);
    } else {
      r.removed.push_back(p);
    }
  }
  return r;
}

std::optional<Conversation> reassemble(const Conversation& c, std::span<const QAPair> kept,
                                       const std::optional<std::string>& target_language) {
  const std::size_t pair_count = c.turns.size() / 2;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i].index >= pair_count || (i > 0 && kept[i].index <= kept[i - 1].index)) {
      throw ContractError("reassemble: kept pairs must be increasing indices of the conversation");
    }
  }
  if (kept.empty()) return std::nullopt;
  Conversation out = c;
  out.turns.clear();
  for (const auto& p : kept) {
    out.turns.push_back(Turn::make(Speaker::human, p.question_translated.value_or(p.question.text)));
    out.turns.push_back(Turn::make(Speaker::assistant, p.answer_translated.value_or(p.answer.text)));
  }
  // The image token lived in a dropped pair: move it to the first kept question.
  const bool had_token = std::any_of(c.turns.begin(), c.turns.end(), [](const Turn& t) { return t.has_image_token; });
  const bool has_token = std::any_of(out.turns.begin(), out.turns.end(), [](const Turn& t) { return t.has_image_token; });
  if (had_token && !has_token) out.turns[0] = Turn::make(Speaker::human, std::string(kImageToken) + "\n" + out.turns[0].text);
  if (target_language) out.language = *target_language;
  return out;
}

AdaptResult run_adaptation(std::span<const Conversation> input, const AdaptConfig& config,
                           Translator& translator, Scorer& scorer) {
  config.validate();
  std::string fingerprint;
  if (config.checkpoint_dir) {
    std::filesystem::create_directories(*config.checkpoint_dir);
    Sha256 h;
    h.update(canonical_digest(input));
    h.update("|" + std::to_string(config.tau) + "|" + config.source_language + "|" + config.target_language);
    fingerprint = h.hex();
  }

  AdaptResult result;
  const std::size_t interval = config.checkpoint_interval;
  for (std::size_t start = 0, chunk_no = 0; start < input.size(); start += interval, ++chunk_no) {
    const std::size_t n = std::min(interval, input.size() - start);
    std::optional<Chunk> chunk;
    std::filesystem::path chunk_path;
    if (config.checkpoint_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "chunk-%06zu.json", chunk_no);
      chunk_path = *config.checkpoint_dir / name;
      if (std::filesystem::exists(chunk_path)) {
        const json j = read_json_file(chunk_path);
        if (j.value("fingerprint", "") != fingerprint) {
          throw ConfigError("checkpoint " + chunk_path.string() + " belongs to a different run");
        }
        chunk = chunk_from_json(j, config);
      }
    }
    if (!chunk) {
      std::vector<ConversationOutcome> outcomes(n);
      parallel_for(n, config.max_in_flight, [&](std::size_t i) {
        outcomes[i] = adapt_one(input[start + i], start + i, config, translator, scorer);
      });
      chunk.emplace();
      for (auto& o : outcomes) {
        chunk->report.merge(o.report);
        if (o.output) chunk->output.push_back(std::move(*o.output));
        if (o.quarantine) chunk->quarantine.push_back(std::move(*o.quarantine));
        for (auto& f : o.failed) chunk->failed.push_back(std::move(f));
        for (auto& e : o.events) chunk->events.push_back(std::move(e));
      }
      if (config.checkpoint_dir) write_json_file(chunk_path, chunk_to_json(*chunk, fingerprint));
    }
    result.report.merge(chunk->report);
    for (auto& c : chunk->output) result.output.push_back(std::move(c));
    for (auto& q : chunk->quarantine) result.quarantine.push_back(std::move(q));
    for (auto& f : chunk->failed) result.failed_pairs.push_back(std::move(f));
    for (auto& e : chunk->events) result.events.push_back(std::move(e));
  }
  return result;
}

}  // namespace vlmforge

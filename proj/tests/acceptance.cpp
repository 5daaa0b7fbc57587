// Acceptance run: one PASS/FAIL line per primary criterion, exit 1 on any
// failure. Every check computes its verdict from a real run.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

#include <httplib.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fixtures.hpp"
#include "mock_server.hpp"
#include "vlmforge/adapt.hpp"
#include "vlmforge/annotate.hpp"
#include "vlmforge/arena.hpp"
#include "vlmforge/digest.hpp"
#include "vlmforge/eval_mc.hpp"
#include "vlmforge/io.hpp"
#include "vlmforge/mixer.hpp"
#include "vlmforge/synthdog.hpp"

namespace vlmforge {
namespace {

using nlohmann::json;
using testing::TempDir;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// Judge prompts and annotation responses seen across the runs, for the
// anonymization check.
struct Corpus {
  std::mutex mu;
  std::vector<std::string> judge_prompts;
  std::vector<std::string> api_responses;
  std::set<std::string> model_names;
} g_seen;

// Records every prompt text before delegating.
class Recording : public ChatClient {
 public:
  explicit Recording(ChatClient& inner) : inner_(inner) {}
  std::string complete(const ChatRequest& r) override {
    std::string all;
    for (const auto& m : r.messages) all += m.text + "\n";
    {
      std::lock_guard lock(g_seen.mu);
      g_seen.judge_prompts.push_back(std::move(all));
    }
    return inner_.complete(r);
  }

 private:
  ChatClient& inner_;
};

// ---- adaptation ----------------------------------------------------------

Outcome filter_monotonicity() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(20240601);
  const double grid[] = {0.0, 0.4, 0.6, 0.8, 1.0};
  std::vector<QAPair> pairs;
  for (std::size_t i = 0; i < 1000; ++i) {
    QAPair p;
    p.index = i;
    p.question = Turn::make(Speaker::human, "q" + std::to_string(i));
    p.answer = Turn::make(Speaker::assistant, "a" + std::to_string(i));
    p.question_translated = p.question.text;
    p.answer_translated = p.answer.text;
    // One pair in ten sits exactly on a threshold.
    p.qe_question = i % 10 == 0 ? grid[i / 10 % 5] : rng.uniform01();
    p.qe_answer = i % 10 == 5 ? grid[i / 10 % 5] : rng.uniform01();
    pairs.push_back(std::move(p));
  }
  std::vector<std::set<std::size_t>> kept;
  for (double tau : grid) {
    const auto r = filter_pairs(pairs, tau);
    std::set<std::size_t> k;
    for (const auto& p : r.kept) k.insert(p.index);
    o.require(r.kept.size() + r.removed.size() == pairs.size(), "partition broken at tau " + fixed(tau, 1));
    for (const auto& p : pairs) {
      const bool want = std::min(*p.qe_question, *p.qe_answer) >= tau;
      if (want != k.contains(p.index)) {
        o.require(false, "pair " + std::to_string(p.index) + " misfiled at tau " + fixed(tau, 1));
        break;
      }
    }
    kept.push_back(std::move(k));
  }
  for (std::size_t hi = 1; hi < kept.size(); ++hi) {
    for (std::size_t lo = 0; lo < hi; ++lo) {
      o.require(std::includes(kept[lo].begin(), kept[lo].end(), kept[hi].begin(), kept[hi].end()),
                "kept set at tau " + fixed(grid[hi], 1) + " not inside tau " + fixed(grid[lo], 1));
    }
  }
  const double s = seconds_since(t0);
  o.require(s < 5.0, "took " + fixed(s) + " s");
  std::string sizes;
  for (const auto& k : kept) sizes += (sizes.empty() ? "" : "/") + std::to_string(k.size());
  if (o.pass) o.detail = "kept " + sizes + " of 1000, nested, " + fixed(s, 3) + " s";
  return o;
}

Outcome pipeline_conservation() {
  Outcome o;
  testing::MockServer mt, qe;
  mt.post("/v1/chat/completions", [](const json& body) {
    return testing::chat_reply(testing::dictionary_translate(testing::last_user_text(body)));
  });
  qe.post("/score", [](const json& body) {
    return json{{"score", testing::fixture_score(body.at("source"), body.at("hypothesis"))}};
  });
  mt.start();
  qe.start();
  HttpChatClient client(mt.url("/v1/chat/completions"), "VLMFORGE_ACCEPTANCE_UNSET_KEY");
  ChatTranslator translator(client, "mock-mt");
  HttpScorer scorer(qe.url("/score"), "VLMFORGE_ACCEPTANCE_UNSET_KEY");

  auto input = testing::make_conversations(500, 77);
  // A few broken records exercise the quarantine term.
  input[13].turns.pop_back();
  input[250].turns.clear();
  input[401].turns[0].speaker = Speaker::assistant;
  std::uint64_t valid_pairs = 0;
  for (const auto& c : input) {
    if (validate_conversation(c).empty()) valid_pairs += c.turns.size() / 2;
  }
  AdaptConfig cfg;
  cfg.tau = 0.6;
  cfg.max_in_flight = 8;
  const auto t0 = Clock::now();
  const auto run = run_adaptation(input, cfg, translator, scorer);
  const double s = seconds_since(t0);
  const auto& r = run.report;
  o.require(r.pairs_in == r.pairs_kept + r.pairs_removed, "pair counts do not balance");
  o.require(r.conversations_in == r.conversations_out + r.discarded_empty_dialogues + r.quarantined,
            "conversation counts do not balance");
  o.require(r.conversations_in == 500, "conversations_in " + std::to_string(r.conversations_in));
  o.require(r.quarantined == 3, "quarantined " + std::to_string(r.quarantined));
  o.require(r.pairs_in == valid_pairs, "pairs_in disagrees with an independent count");
  o.require(run.output.size() == r.conversations_out, "output size differs from report");
  std::uint64_t out_pairs = 0;
  for (const auto& c : run.output) out_pairs += c.turns.size() / 2;
  o.require(out_pairs == r.pairs_kept, "kept pairs differ from emitted pairs");
  o.require(r.pairs_removed > 0 && r.discarded_empty_dialogues > 0, "fixture never exercised removal");
  o.require(mt.requests() > 0 && qe.requests() > 0, "mock services were not called");
  o.require(s < 60.0, "took " + fixed(s) + " s");
  if (o.pass) {
    o.detail = "pairs " + std::to_string(r.pairs_in) + " = " + std::to_string(r.pairs_kept) + " + " +
               std::to_string(r.pairs_removed) + "; conversations 500 = " + std::to_string(r.conversations_out) +
               " + " + std::to_string(r.discarded_empty_dialogues) + " + " + std::to_string(r.quarantined) + ", " +
               fixed(s) + " s";
  }
  return o;
}

Outcome identity_pipeline() {
  Outcome o;
  const auto input = testing::make_conversations(200, 5);
  AdaptConfig cfg;
  cfg.tau = 0.8;
  testing::EchoTranslator echo;
  testing::ConstantScorer one(1.0);
  const auto run = run_adaptation(input, cfg, echo, one);
  o.require(run.output.size() == input.size(), "output has " + std::to_string(run.output.size()) + " conversations");
  std::size_t images = 0;
  for (std::size_t i = 0; o.pass && i < std::min(input.size(), run.output.size()); ++i) {
    const auto& a = input[i];
    const auto& b = run.output[i];
    bool same = a.id == b.id && a.image_ref == b.image_ref && a.turns.size() == b.turns.size();
    for (std::size_t t = 0; same && t < a.turns.size(); ++t) {
      same = a.turns[t].speaker == b.turns[t].speaker && a.turns[t].text == b.turns[t].text &&
             count_image_tokens(a.turns[t].text) == count_image_tokens(b.turns[t].text);
    }
    images += a.image_ref.has_value();
    o.require(same, "conversation " + a.id + " changed structure");
  }
  if (o.pass) o.detail = "200 of 200 identical in ids, turns, order and image tokens (" + std::to_string(images) + " with images)";
  return o;
}

// ---- synthetic OCR -------------------------------------------------------

bool is_corpus_window(const std::string& line, const SnippetCorpus& corpus) {
  const std::string padded = " " + line + " ";
  for (const auto& doc : corpus.documents) {
    if ((" " + doc + " ").find(padded) != std::string::npos) return true;
  }
  return false;
}

Outcome synthdog_fidelity() {
  Outcome o;
  TempDir a("accept-synth"), b("accept-synth");
  const auto backgrounds = BackgroundPool::from_images(testing::make_backgrounds(8, 320, 240, 1));
  std::map<std::string, SnippetCorpus> corpora{{"pl", testing::make_corpus("pl", 200, 2)},
                                               {"en", testing::make_corpus("en", 200, 3)}};
  const auto fonts = FontSet::load(testing::data_dir() / "fonts");
  const auto templates = InstructionTemplates::default_ocr();
  SynthConfig cfg;
  const std::uint64_t seed = 1234;
  const auto t0 = Clock::now();
  const auto da = make_ocr_dataset(1000, backgrounds, corpora, templates, fonts, seed, cfg, a.path());
  const double gen = seconds_since(t0);
  const auto db = make_ocr_dataset(1000, backgrounds, corpora, templates, fonts, seed, cfg, b.path());
  const auto digest_a = canonical_digest(da.conversations);
  o.require(digest_a == canonical_digest(db.conversations), "same seed gave a different dataset digest");
  o.require(da.conversations.size() == 1000, "generated " + std::to_string(da.conversations.size()));

  TextRenderer renderer(fonts);
  std::size_t answer_ok = 0, pixels_ok = 0, lines_ok = 0;
  for (std::size_t i = 0; i < da.conversations.size(); ++i) {
    const auto& c = da.conversations[i];
    std::vector<SynthEvent> events;
    const auto s = generate_ocr_sample(i, seed, c.language, backgrounds, corpora, templates, cfg, renderer, events);
    answer_ok += c.turns.size() == 2 && c.turns[1].text == s.ground_truth;
    const auto file = a.path() / c.image_ref.value_or("");
    const cv::Mat decoded = cv::imread(file.string(), cv::IMREAD_COLOR);
    pixels_ok += !decoded.empty() && decoded.size() == s.image.size() && cv::norm(decoded, s.image, cv::NORM_INF) == 0.0 &&
                 sha256_file(file) + ".png" == file.filename().string() &&
                 sha256_file(file) == sha256_file(b.path() / *c.image_ref);
    std::istringstream lines(s.ground_truth);
    std::string line;
    bool all = !s.ground_truth.empty();
    while (std::getline(lines, line)) all = all && is_corpus_window(line, corpora.at(c.language));
    lines_ok += all;
  }
  o.require(answer_ok == 1000, std::to_string(1000 - answer_ok) + " answers differ from the rendered text");
  o.require(pixels_ok == 1000, std::to_string(1000 - pixels_ok) + " images differ from their regeneration");
  o.require(lines_ok == 1000, std::to_string(1000 - lines_ok) + " answers are not corpus windows");
  o.require(gen < 120.0, "generation took " + fixed(gen) + " s");
  if (o.pass) {
    o.detail = "1000 answers match rendered text and PNGs, digest " + digest_a.substr(0, 12) + " reproduced, " +
               fixed(gen) + " s";
  }
  return o;
}

// ---- mixture and configs -------------------------------------------------

Outcome mixture_exactness() {
  Outcome o;
  TempDir dir("accept-mix");
  const auto reg = DatasetRegistry::load(testing::make_toy_registry(dir.path(), 500));
  MixtureSpec spec;
  for (auto c : {Category::general, Category::ocr, Category::knowledge, Category::counting}) spec.targets[c] = 1000;
  spec.seed = 99;
  const auto m1 = compose_mixture(reg, spec);
  const auto m2 = compose_mixture(reg, spec);
  for (auto c : {Category::general, Category::ocr, Category::knowledge, Category::counting}) {
    const auto& by_lang = m1.counts.by_category_language.at(c);
    const auto pl = by_lang.contains("pl") ? by_lang.at("pl") : 0;
    const auto en = by_lang.contains("en") ? by_lang.at("en") : 0;
    o.require(m1.counts.by_category.at(c) == 1000 && pl == 850 && en == 150,
              std::string(to_string(c)) + " has pl " + std::to_string(pl) + " en " + std::to_string(en));
  }
  const double frac = m1.language_fraction("pl");
  o.require(std::abs(frac - 0.850) <= 0.005, "adapted fraction " + fixed(frac, 4));
  o.require(count_entries(m1.entries) == m1.counts, "summary counts disagree with entries");
  o.require(m1.digest == m2.digest && m1.entries == m2.entries, "two runs differ");
  o.require(m1.digest == manifest_digest(m1.entries), "digest does not cover entries");
  write_manifest(m1, dir / "manifest");
  o.require(read_manifest(dir / "manifest").digest == m1.digest, "manifest did not round-trip");
  if (o.pass) o.detail = "4 x 1000 at 850/150, fraction " + fixed(frac, 3) + ", digest " + m1.digest.substr(0, 12) + " stable";
  return o;
}

Outcome config_emission() {
  Outcome o;
  Manifest m;
  m.entries = {{"toy", "1", Category::general, "pl"}};
  m.counts = count_entries(m.entries);
  m.digest = manifest_digest(m.entries);
  const auto pre = make_training_config(Stage::pretrain, m);
  const auto ins = make_training_config(Stage::instruct, m);
  o.require(pre.learning_rates.count("projector") && pre.learning_rates.at("projector") == 1e-3, "projector lr");
  o.require(pre.batch_size == 256, "pretrain batch " + std::to_string(pre.batch_size));
  o.require(pre.trainable == std::set<std::string>{"projector"}, "pretrain trains more than the projector");
  o.require(ins.lora && ins.lora->rank == 128 && ins.lora->alpha == 256 && ins.lora->dropout == 0.05, "lora values");
  o.require(pre.context_tokens == 8192 && ins.context_tokens == 8192, "context length");
  for (const auto& cfg : {pre, ins}) {
    const auto text = render_training_config(cfg);
    o.require(parse_training_config(text) == cfg, "parse did not reproduce the config");
    o.require(render_training_config(parse_training_config(text)) == text, "render is not stable");
  }
  if (o.pass) o.detail = "lr 1e-3, batch 256, r 128, alpha 256, dropout 0.05, context 8192; both round-trip";
  return o;
}

// ---- multiple choice -----------------------------------------------------

Outcome mc_harness() {
  Outcome o;
  const auto t0 = Clock::now();
  std::ifstream in(testing::data_dir() / "extraction_cases.jsonl");
  std::size_t cases = 0, passed = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    std::optional<char> expected;
    if (!j.at("expected").is_null()) expected = j.at("expected").get<std::string>()[0];
    ++cases;
    passed += extract_choice(j.at("raw").get<std::string>(), j.at("valid").get<std::string>()) == expected;
  }
  o.require(cases >= 60, "only " + std::to_string(cases) + " extraction cases");
  o.require(passed == cases, std::to_string(cases - passed) + " extraction cases fail");

  const auto items = testing::make_mc_items(50);
  testing::MockServer model;
  model.post("/v1/chat/completions", [&](const json& body) {
    const auto prompt = testing::last_user_text(body);
    const auto start = prompt.find(' ') + 1;
    const auto i = std::stoul(prompt.substr(start, prompt.find(':') - start));
    return testing::chat_reply(testing::scripted_mc_output(i, items.at(i).answer));
  });
  model.start();
  HttpChatClient client(model.url("/v1/chat/completions"), "VLMFORGE_ACCEPTANCE_UNSET_KEY");
  BenchmarkOptions opt;
  opt.model = "scripted";
  opt.jobs = 4;
  const auto run = run_benchmark(items, client, opt);
  o.require(run.summary.correct == testing::kScriptedCorrectPer50, "correct " + std::to_string(run.summary.correct));
  o.require(run.summary.accuracy_percent() == "82.00", "accuracy " + run.summary.accuracy_percent());
  const double s = seconds_since(t0);
  o.require(s < 30.0, "took " + fixed(s) + " s");
  if (o.pass) {
    o.detail = "accuracy 82.00% (41/50), extraction " + std::to_string(passed) + "/" + std::to_string(cases) + ", " +
               fixed(s) + " s";
  }
  return o;
}

Outcome ledger_statistics() {
  Outcome o;
  std::set<std::string> ids;
  for (int i = 0; i < 1292; ++i) ids.insert("q" + std::to_string(i));
  IssueLedger ledger(ids);
  const IssueCode inaccurate[] = {IssueCode::c1a, IssueCode::c1b, IssueCode::c1c, IssueCode::c1d, IssueCode::c1e,
                                  IssueCode::c1f, IssueCode::c1g, IssueCode::c1h, IssueCode::c1i};
  int next = 0;
  for (int k = 0; k < 46; ++k) ledger.record("q" + std::to_string(next++), inaccurate[k % 9], "");
  for (int k = 0; k < 39; ++k) ledger.record("q" + std::to_string(next++), k % 3 ? IssueCode::c2b : IssueCode::c2a, "");
  ledger.set_reported_inaccuracy(356);
  const auto s = ledger.summary();
  o.require(s.total_questions == 1292, "questions " + std::to_string(s.total_questions));
  o.require(s.inaccuracy_count == 46 && s.inaccuracy_percent() == "3.56", "inaccuracy " + s.inaccuracy_percent());
  o.require(s.foreign_count == 39 && s.foreign_percent() == "3.02", "foreign " + s.foreign_percent());
  o.require(!s.discrepancy, "unexpected discrepancy");
  if (o.pass) o.detail = "46/1292 = 3.56%, 39/1292 = 3.02%";
  return o;
}

// ---- arena ---------------------------------------------------------------

CaptionSet captions(const std::string& tag, std::size_t n) {
  CaptionSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = "img-" + std::to_string(1000 + i);
    s.captions[id] = "Opis " + tag + " numer " + std::to_string(i) + std::string(i % 4, '.');
    s.image_refs[id] = "https://example.org/" + id + ".jpg";
  }
  return s;
}

class PositionBiased : public ChatClient {
 public:
  std::string complete(const ChatRequest&) override {
    return R"({"best":"a","justification_for_rating":"Pierwszy opis jest lepszy."})";
  }
};

Outcome arena_bias() {
  Outcome o;
  const std::string x = "vision-alpha-7b", y = "vision-beta-13b";
  {
    std::lock_guard lock(g_seen.mu);
    g_seen.model_names.insert({x, y});
  }
  PositionBiased biased;
  Recording judge(biased);
  ArenaOptions opt;
  opt.judge.judge_id = "biased-judge";
  const auto run = run_arena(x, y, make_tasks(captions("pierwszy", 200), captions("drugi", 200), 3, Criterion::content, false),
                             Protocol::no_tie_two_orders, judge, opt);
  const auto r = preference_rate(run, Criterion::content);
  o.require(run.verdicts.size() == 400, "verdicts " + std::to_string(run.verdicts.size()));
  o.require(format_hundredths(r.preference_rate_x()) == "50.00", "rate " + format_hundredths(r.preference_rate_x()));
  const auto back = run_arena(y, x, make_tasks(captions("drugi", 200), captions("pierwszy", 200), 3, Criterion::content, false),
                              Protocol::no_tie_two_orders, judge, opt);
  o.require(preference_rate(back, Criterion::content) == r.swapped(), "swapping models broke symmetry");
  const auto ling = run_arena(x, y, make_tasks(captions("pierwszy", 200), captions("drugi", 200), 4, Criterion::linguistic, false),
                              Protocol::no_tie_two_orders, judge, opt);
  o.require(format_hundredths(preference_rate(ling, Criterion::linguistic).preference_rate_x()) == "50.00",
            "linguistic rate is not 50.00");
  if (o.pass) o.detail = "200 tasks, 400 verdicts, 50.00% both criteria, swap gives the mirrored report";
  return o;
}

Outcome arena_ties() {
  Outcome o;
  const auto& text = builtin_prompt("tie_allowed_vlm").text;
  std::vector<std::pair<Choice, Choice>> parsed;
  for (auto pos = text.find("{\"best_description\""); pos != std::string::npos;
       pos = text.find("{\"best_description\"", pos + 1)) {
    const auto reply = parse_tie_reply(text.substr(pos, text.find('}', pos) - pos + 1));
    o.require(reply.has_value(), "an example verdict does not parse");
    if (reply) parsed.emplace_back(reply->content, reply->linguistic);
  }
  const std::vector<std::pair<Choice, Choice>> expected{
      {Choice::tie, Choice::tie}, {Choice::a, Choice::a}, {Choice::tie, Choice::b}};
  o.require(parsed == expected, "example verdicts parsed to the wrong pairs");

  const std::string x = "caption-model-one", y = "caption-model-two";
  {
    std::lock_guard lock(g_seen.mu);
    g_seen.model_names.insert({x, y});
  }
  testing::MockServer server;
  server.post("/v1/chat/completions", [](const json& body) {
    const auto h = fnv1a64(testing::all_text(body));
    static constexpr const char* kChoices[] = {"a", "b", "remis"};
    return testing::chat_reply(json{{"best_description", kChoices[h % 3]},
                                    {"lang_comparison", kChoices[(h / 3) % 3]},
                                    {"justification_for_rating", "uzasadnienie"}}
                                   .dump());
  });
  server.start();
  HttpChatClient http(server.url("/v1/chat/completions"), "VLMFORGE_ACCEPTANCE_UNSET_KEY");
  Recording judge(http);
  ArenaOptions opt;
  opt.judge.judge_id = "mock-judge";
  const auto run = run_arena(x, y, make_tasks(captions("x", 500), captions("y", 500), 11, Criterion::content, true),
                             Protocol::tie_allowed_randomized, judge, opt);
  TempDir dir("accept-arena");
  write_arena(run, dir / "verdicts.jsonl");
  const auto report = read_json_file(dir / "verdicts.report.json");
  std::map<std::string, std::array<std::uint64_t, 3>> counts;
  std::ifstream in(dir / "verdicts.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = json::parse(line);
    const auto choice = j.at("choice").get<std::string>();
    const bool left_a = j.at("assignment") == "left_is_a";
    auto& c = counts[j.at("criterion").get<std::string>()];
    if (choice == "tie") ++c[2];
    else if ((choice == "a") == left_a) ++c[0];
    else ++c[1];
    ++lines;
  }
  o.require(lines == 1000, "raw verdict lines " + std::to_string(lines));
  std::string rates;
  for (const char* crit : {"content", "linguistic"}) {
    const auto& r = report.at("reports").at(crit);
    const auto& c = counts[crit];
    o.require(r.at("win_x") == c[0] && r.at("win_y") == c[1] && r.at("tie") == c[2],
              std::string(crit) + " report differs from the raw verdicts");
    PreferenceReport manual;
    manual.win_x = c[0];
    manual.win_y = c[1];
    manual.tie = c[2];
    o.require(r.at("preference_rate_x") == format_hundredths(manual.preference_rate_x()),
              std::string(crit) + " rate differs from recount");
    rates += std::string(rates.empty() ? "" : ", ") + crit + " " + format_hundredths(manual.preference_rate_x()) + "%";
  }
  if (o.pass) o.detail = "examples give (tie,tie) (a,a) (tie,b); 500-task run recounted: " + rates;
  return o;
}

// ---- annotation service --------------------------------------------------

class ServerProcess {
 public:
  ServerProcess(const std::filesystem::path& pool, const std::filesystem::path& state, const std::filesystem::path& record) {
    int fds[2];
    if (::pipe(fds) != 0) throw IoError("pipe failed");
    pid_ = ::fork();
    if (pid_ < 0) throw IoError("fork failed");
    if (pid_ == 0) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      ::execl(VLMFORGE_CLI_PATH, VLMFORGE_CLI_PATH, "--run-record", record.c_str(), "annotate-serve", "--pool",
              pool.c_str(), "--state-dir", state.c_str(), "--port", "0", static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(fds[1]);
    out_ = ::fdopen(fds[0], "r");
    char buf[256];
    while (std::fgets(buf, sizeof buf, out_)) {
      const std::string line(buf);
      const auto at = line.find("listening on ");
      if (at == std::string::npos) continue;
      port_ = std::stoi(line.substr(line.rfind(':') + 1));
      break;
    }
    if (port_ <= 0) {
      kill();
      throw IoError("server did not report a port");
    }
  }
  ~ServerProcess() {
    kill();
    if (out_) std::fclose(out_);
  }
  int port() const { return port_; }
  void kill() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }
  // Graceful stop; returns the exit status.
  int terminate() {
    int status = -1;
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

 private:
  pid_t pid_ = -1;
  int port_ = 0;
  FILE* out_ = nullptr;
};

struct Api {
  httplib::Client cli;
  explicit Api(int port) : cli("127.0.0.1", port) { cli.set_read_timeout(10, 0); }

  std::pair<int, json> call(const std::string& method, const std::string& path, const std::string& token,
                            const json& body = nullptr) {
    httplib::Headers h{{"Authorization", "Bearer " + token}};
    auto r = method == "GET" ? cli.Get(path, h) : cli.Post(path, h, body.is_null() ? "{}" : body.dump(), "application/json");
    if (!r) throw ServiceError("request " + path + " failed");
    {
      std::lock_guard lock(g_seen.mu);
      g_seen.api_responses.push_back(r->body);
    }
    return {r->status, json::parse(r->body)};
  }
};

struct Choice3 {
  std::string linguistic, content;
};

Choice3 scripted_choice(const std::string& task) {
  static constexpr const char* kChoices[] = {"a", "b", "tie"};
  const auto h = fnv1a64(task);
  return {kChoices[h % 3], kChoices[(h / 3) % 3]};
}

Outcome annotation_durability() {
  Outcome o;
  TempDir dir("accept-annotate");
  const auto pool_json = testing::make_pool_json("pool-accept", 4, 80, 10);
  write_json_file(dir / "pool.json", pool_json);
  const auto pool = AnnotationPool::from_json(pool_json, dir.path());
  {
    std::lock_guard lock(g_seen.mu);
    for (const auto& n : pool.model_names()) g_seen.model_names.insert(n);
  }
  ::setenv("VLMFORGE_ANNOTATOR_TOKENS", "ania:tok-ania,bartek:tok-bartek", 1);
  ::setenv("VLMFORGE_ADMIN_TOKEN", "tok-admin", 1);
  const auto state = dir / "state";
  const std::map<std::string, std::string> tokens{{"ania", "tok-ania"}, {"bartek", "tok-bartek"}};
  // (annotator, task) -> payload acknowledged with 200. Calibration tasks are
  // shared, so the task id alone is not a key.
  std::map<std::pair<std::string, std::string>, Choice3> acked;
  std::map<std::string, std::string> sessions;

  // Runs the scripted client until `budget` more choices are acked or all work is done.
  auto drive = [&](Api& api, std::size_t budget) {
    std::size_t done = 0;
    for (const auto& [who, token] : tokens) {
      if (!sessions.contains(who)) {
        auto [code, s] = api.call("POST", "/sessions", token);
        if (code != 200) throw ServiceError("session create returned " + std::to_string(code));
        sessions[who] = s.at("session").get<std::string>();
      }
      while (done < budget) {
        auto [code, next] = api.call("GET", "/sessions/" + sessions[who] + "/next", token);
        if (code != 200) throw ServiceError("next returned " + std::to_string(code));
        if (next.at("task").is_null()) break;
        const auto task = next["task"]["id"].get<std::string>();
        const auto c = scripted_choice(task);
        auto [sc, body] = api.call("POST", "/sessions/" + sessions[who] + "/choices", token,
                                   json{{"task", task}, {"linguistic", c.linguistic}, {"content", c.content}});
        if (sc != 200) throw ServiceError("choice returned " + std::to_string(sc) + ": " + body.dump());
        acked[{who, task}] = c;
        ++done;
      }
    }
    return done;
  };

  {
    ServerProcess first(dir / "pool.json", state, dir / "serve1.run.json");
    Api api(first.port());
    drive(api, 57);
    o.require(acked.size() == 57, "first run acked " + std::to_string(acked.size()));
    first.kill();  // SIGKILL mid-pool, no chance to flush anything
  }
  std::size_t lost = 0, duplicates = 0;
  {
    ServerProcess second(dir / "pool.json", state, dir / "serve2.run.json");
    Api api(second.port());
    // Every acked choice must still be there: resubmitting is a duplicate,
    // a different answer is a conflict.
    for (const auto& [key, c] : acked) {
      const auto& [who, task] = key;
      auto [code, body] = api.call("POST", "/sessions/" + sessions[who] + "/choices", tokens.at(who),
                                   json{{"task", task}, {"linguistic", c.linguistic}, {"content", c.content}});
      if (code == 200 && body.value("status", "") == "duplicate") {
        ++duplicates;
      } else {
        ++lost;
      }
    }
    drive(api, 1000);
    o.require(second.terminate() == 0, "graceful stop failed");
  }
  o.require(lost == 0, std::to_string(lost) + " acked choices lost");
  o.require(acked.size() == 100, "total acked " + std::to_string(acked.size()));

  // Independent recount straight from the persisted log.
  std::map<std::string, const AnnotationTask*> task_of;
  for (const auto& t : pool.tasks) task_of[t.id] = &t;
  std::map<std::string, std::map<std::string, std::array<std::uint64_t, 3>>> brute;  // cmp -> criterion -> x,y,tie
  std::map<std::string, std::uint64_t> brute_n;
  std::map<std::string, std::string> annotator_of;  // session -> annotator
  for (const auto& [who, sid] : sessions) annotator_of[sid] = who;
  std::set<std::pair<std::string, std::string>> seen;
  std::size_t log_choices = 0;
  std::ifstream log(state / "pool-accept.log");
  for (std::string line; std::getline(log, line);) {
    const auto r = json::parse(line);
    if (r.at("type") != "choice") continue;
    ++log_choices;
    const auto task = r.at("task").get<std::string>();
    const std::pair<std::string, std::string> key{annotator_of[r.at("session").get<std::string>()], task};
    o.require(seen.insert(key).second, "task " + task + " logged twice for " + key.first);
    const auto it = acked.find(key);
    o.require(it != acked.end() && it->second.linguistic == r.at("linguistic") && it->second.content == r.at("content"),
              "log payload for " + task + " differs from the ack");
    if (r.value("calibration", false)) continue;
    const auto& t = *task_of.at(task);
    ++brute_n[t.comparison];
    for (const char* crit : {"linguistic", "content"}) {
      const auto ch = r.at(crit).get<std::string>();
      auto& cell = brute[t.comparison][crit];
      if (ch == "tie") {
        ++cell[2];
      } else {
        const bool left = (ch == "a") == (t.assignment == Assignment::left_is_a);
        ++cell[left ? 0 : 1];  // left caption belongs to model_x
      }
    }
  }
  o.require(log_choices == 100, "log holds " + std::to_string(log_choices) + " choices");

  ServerProcess third(dir / "pool.json", state, dir / "serve3.run.json");
  Api api(third.port());
  auto [code, report] = api.call("GET", "/pools/pool-accept/report", "tok-admin");
  o.require(code == 200, "report returned " + std::to_string(code));
  std::uint64_t total = 0;
  for (const auto& c : report.at("comparisons")) {
    const auto id = c.at("comparison").get<std::string>();
    total += c.at("n").get<std::uint64_t>();
    o.require(c.at("n") == brute_n[id], id + " n differs from recount");
    for (const char* crit : {"linguistic", "content"}) {
      const auto& cell = brute[id][crit];
      o.require(c.at(crit).at("win_x") == cell[0] && c.at(crit).at("win_y") == cell[1] && c.at(crit).at("tie") == cell[2],
                id + " " + crit + " differs from recount");
    }
  }
  o.require(total == 80, "report covers " + std::to_string(total) + " pool choices");
  third.terminate();
  if (o.pass) {
    o.detail = "SIGKILL after 57 acks, restart kept " + std::to_string(duplicates) + "/57, 100 choices logged, report matches brute-force recount";
  }
  return o;
}

Outcome anonymization() {
  Outcome o;
  std::lock_guard lock(g_seen.mu);
  o.require(g_seen.model_names.size() >= 8, "too few model names configured");
  o.require(g_seen.judge_prompts.size() >= 1000, "judge prompts seen " + std::to_string(g_seen.judge_prompts.size()));
  o.require(g_seen.api_responses.size() >= 200, "api responses seen " + std::to_string(g_seen.api_responses.size()));
  const auto a = anonymization_scan(g_seen.judge_prompts, g_seen.model_names);
  const auto b = anonymization_scan(g_seen.api_responses, g_seen.model_names);
  o.require(a.empty(), std::to_string(a.size()) + " hits in judge prompts" + (a.empty() ? "" : ", first " + a.front()));
  o.require(b.empty(), std::to_string(b.size()) + " hits in API responses" + (b.empty() ? "" : ", first " + b.front()));
  // The scan itself must see a planted name.
  o.require(anonymization_scan(std::vector<std::string>{"x " + *g_seen.model_names.begin() + " y"}, g_seen.model_names).size() == 1,
            "scan misses a planted name");
  if (o.pass) {
    o.detail = "0 hits for " + std::to_string(g_seen.model_names.size()) + " names in " +
               std::to_string(g_seen.judge_prompts.size()) + " judge prompts and " +
               std::to_string(g_seen.api_responses.size()) + " API responses";
  }
  return o;
}

}  // namespace
}  // namespace vlmforge

int main() {
  using namespace vlmforge;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"filter monotonicity", filter_monotonicity},
      {"pipeline conservation", pipeline_conservation},
      {"identity pipeline", identity_pipeline},
      {"synthetic OCR fidelity and determinism", synthdog_fidelity},
      {"mixture exactness", mixture_exactness},
      {"config emission", config_emission},
      {"MC harness end-to-end", mc_harness},
      {"ledger statistics", ledger_statistics},
      {"arena order-bias cancellation", arena_bias},
      {"arena tie protocol", arena_ties},
      {"annotation service durability", annotation_durability},
      {"anonymization scan", anonymization},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria fail") << std::endl;
  return failures == 0 ? 0 : 1;
}

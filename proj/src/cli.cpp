#include "vlmforge/cli.hpp"

#include <signal.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vlmforge/adapt.hpp"
#include "vlmforge/annotate.hpp"
#include "vlmforge/arena.hpp"
#include "vlmforge/digest.hpp"
#include "vlmforge/eval_mc.hpp"
#include "vlmforge/ingest.hpp"
#include "vlmforge/io.hpp"
#include "vlmforge/mixer.hpp"
#include "vlmforge/report.hpp"
#include "vlmforge/synthdog.hpp"

namespace vlmforge {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(" \t\r") - b + 1));
}

std::string env_name(const std::string& flag) {
  std::string out = "VLMFORGE_";
  for (char c : flag) out.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes" || v == "on"; }

std::string getenv_str(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

// Sibling path with the extension swapped: runs/x.jsonl -> runs/x<suffix>.
fs::path sibling(const fs::path& p, const std::string& suffix) {
  auto out = p;
  out.replace_extension();
  out += suffix;
  return out;
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  RunRecord record;
  fs::path record_path;

  void input(const fs::path& p) {
    if (!p.empty() && fs::exists(p)) record.inputs[p.string()] = digest_path(p);
  }
  void output(const fs::path& p) { outputs.push_back(p); }
  std::vector<fs::path> outputs;
};

// Options shared by the subcommand handlers; CLI11 binds into these.
struct Options {
  // ingest
  std::string format = "llava", in, out, source, category = "general", lang = "en", registry, templates;
  std::optional<double> tau_opt;
  std::uint64_t seed = 0;
  // adapt
  double tau = 0;
  std::string mt_url, qe_url, mt_model = "translator", src_lang = "en", tgt_lang = "pl", checkpoint_dir, register_as;
  std::size_t jobs = 4;
  int retries = 3;
  // synth-ocr
  std::size_t n = 0;
  double pl_ratio = 0.5;
  std::string fonts, bg, corpus_pl, corpus_en;
  // mix / emit-config
  std::string spec, manifest, stage;
  bool pretrain = false;
  std::optional<std::uint64_t> limit;
  // eval-mc
  std::string items, variant, model_url, model = "model", image_base;
  // ledger
  std::string ledger, item_id, code, note, reported;
  // arena
  std::string x, y, captions_x, captions_y, criterion = "content", protocol = "no_tie_two_orders", judge_url,
      judge_model = "judge", prompts;
  std::size_t sample = 0;
  // annotate-serve
  std::string pool, calibration, host = "127.0.0.1", state_dir, static_dir;
  int port = 8080;
  // report
  std::vector<std::string> inputs;
  std::string chart;
};

void write_run_record(Context& ctx, const std::vector<fs::path>& skip_self) {
  for (const auto& p : ctx.outputs) {
    if (fs::exists(p)) ctx.record.outputs[p.string()] = digest_path(p, skip_self);
  }
  write_json_file(ctx.record_path, ctx.record.to_json());
}

fs::path default_record_path(const std::string& sub, const Options& o) {
  if (sub == "synth-ocr" || sub == "mix") return fs::path(o.out) / "run_record.json";
  if (!o.out.empty()) return sibling(o.out, ".run.json");
  return fs::path("vlmforge-" + sub + ".run.json");
}

// ---- handlers ------------------------------------------------------------

void do_ingest(Context& ctx, const Options& o) {
  ctx.input(o.in);
  const Category category = parse_category(o.category);
  std::vector<Conversation> convs;
  std::vector<QuarantineEntry> quarantine;
  if (o.format == "llava") {
    auto r = read_conversations(o.in, IngestOptions{o.source, category, o.lang});
    convs = std::move(r.conversations);
    quarantine = std::move(r.quarantine);
  } else if (o.format == "wit") {
    const auto templates = o.templates.empty() ? InstructionTemplates::default_knowledge()
                                               : InstructionTemplates::load(o.templates);
    auto r = convert_wit(o.in, templates, o.lang, o.seed);
    convs = std::move(r.conversations);
    for (auto& c : convs) c.source = o.source;
    quarantine = std::move(r.quarantine);
    ctx.err << "wit: skipped " << r.skipped_language << " other-language and " << r.skipped_no_human_caption
            << " caption-less records; " << r.multi_caption_records << " records carried several captions\n";
  } else if (o.format == "tallyqa") {
    auto r = convert_tallyqa(o.in, o.source);
    convs = std::move(r.conversations);
    quarantine = std::move(r.quarantine);
  } else {
    throw UsageError("unknown --format '" + o.format + "' (llava, wit or tallyqa)");
  }
  const auto w = write_conversations(convs, o.out);
  ctx.output(o.out);
  if (!quarantine.empty()) {
    const auto q = sibling(o.out, ".quarantine.jsonl");
    write_quarantine(quarantine, q);
    ctx.output(q);
  }
  ctx.out << "ingested " << w.count << " conversations, quarantined " << quarantine.size() << "\n";
  if (!o.registry.empty()) {
    auto reg = DatasetRegistry::load(o.registry);
    const auto root = fs::relative(fs::absolute(o.out), fs::absolute(reg.base_dir.empty() ? "." : reg.base_dir));
    // Registered language/category describe the source; records may override.
    auto entry = reg.register_source(o.source, root, category, o.lang);
    if (o.tau_opt) {
      entry.tau = *o.tau_opt;
      reg.put(o.source, entry);
    }
    reg.save(o.registry);
    ctx.output(o.registry);
  }
}

void do_adapt(Context& ctx, const Options& o) {
  ctx.input(o.in);
  AdaptConfig cfg;
  cfg.source_language = o.src_lang;
  cfg.target_language = o.tgt_lang;
  cfg.tau = o.tau;
  cfg.mt_endpoint = o.mt_url;
  cfg.qe_endpoint = o.qe_url;
  cfg.mt_model = o.mt_model;
  cfg.max_in_flight = o.jobs;
  cfg.retry.attempts = o.retries;
  cfg.checkpoint_dir = o.checkpoint_dir.empty() ? sibling(o.out, ".ckpt") : fs::path(o.checkpoint_dir);
  cfg.validate();
  if (cfg.tau < kRecommendedTauLow || cfg.tau > kRecommendedTauHigh) {
    ctx.err << "warning: tau " << cfg.tau << " outside the recommended range [0.4, 0.8]\n";
  }
  auto in = read_conversations(o.in, IngestOptions{o.source, Category::general, o.src_lang});
  HttpChatClient mt(o.mt_url, "VLMFORGE_MT_API_KEY");
  ChatTranslator translator(mt, o.mt_model);
  HttpScorer scorer(o.qe_url, "VLMFORGE_QE_API_KEY");
  auto result = run_adaptation(in.conversations, cfg, translator, scorer);
  write_conversations(result.output, o.out);
  ctx.output(o.out);
  json report = result.report.to_json();
  report["tau"] = cfg.tau;
  report["ingest_quarantined"] = in.quarantine.size();
  const auto report_path = sibling(o.out, ".report.json");
  write_json_file(report_path, report);
  ctx.output(report_path);
  auto quarantine = in.quarantine;
  quarantine.insert(quarantine.end(), result.quarantine.begin(), result.quarantine.end());
  if (!quarantine.empty()) {
    const auto q = sibling(o.out, ".quarantine.jsonl");
    write_quarantine(quarantine, q);
    ctx.output(q);
  }
  if (!result.events.empty() || !result.failed_pairs.empty()) {
    std::string body;
    for (const auto& e : result.events) {
      body += canonical_dump(json{{"conversation", e.conversation_id}, {"detail", e.detail},
                                  {"kind", to_string(e.kind)}, {"pair", e.pair_index}}) + "\n";
    }
    const auto p = sibling(o.out, ".events.jsonl");
    write_file_atomic(p, body);
    ctx.output(p);
  }
  const auto& r = result.report;
  ctx.out << "conversations " << r.conversations_in << " in, " << r.conversations_out << " out, "
          << r.discarded_empty_dialogues << " discarded, " << r.quarantined << " quarantined; pairs " << r.pairs_in
          << " in, " << r.pairs_kept << " kept, " << r.pairs_removed << " removed (" << r.pairs_failed
          << " failed)\n";
  if (!o.registry.empty()) {
    auto reg = DatasetRegistry::load(o.registry);
    const std::string name = o.register_as.empty() ? o.source + "-" + o.tgt_lang : o.register_as;
    const auto root = fs::relative(fs::absolute(o.out), fs::absolute(reg.base_dir.empty() ? "." : reg.base_dir));
    Category category = Category::general;
    if (reg.contains(o.source)) category = reg.at(o.source).category;
    auto entry = reg.register_source(name, root, category, o.tgt_lang);
    entry.tau = cfg.tau;
    reg.put(name, entry);
    reg.save(o.registry);
    ctx.output(o.registry);
  }
}

void do_synth(Context& ctx, const Options& o) {
  SynthConfig cfg;
  cfg.pl_ratio = o.pl_ratio;
  cfg.jobs = o.jobs;
  std::map<std::string, SnippetCorpus> corpora;
  if (!o.corpus_pl.empty()) corpora["pl"] = SnippetCorpus::load(o.corpus_pl);
  if (!o.corpus_en.empty()) corpora["en"] = SnippetCorpus::load(o.corpus_en);
  if (cfg.pl_ratio > 0 && !corpora.contains("pl")) throw UsageError("--corpus-pl is required when --pl-ratio > 0");
  if (cfg.pl_ratio < 1 && !corpora.contains("en")) throw UsageError("--corpus-en is required when --pl-ratio < 1");
  for (const auto& p : {o.corpus_pl, o.corpus_en, o.fonts, o.bg, o.templates}) ctx.input(p);
  const auto templates = o.templates.empty() ? InstructionTemplates::default_ocr() : InstructionTemplates::load(o.templates);
  const auto fonts = FontSet::load(o.fonts);
  const auto backgrounds = BackgroundPool::load(o.bg);
  const auto ds = make_ocr_dataset(o.n, backgrounds, corpora, templates, fonts, o.seed, cfg, o.out);
  const auto conv_path = fs::path(o.out) / "conversations.jsonl";
  const auto w = write_conversations(ds.conversations, conv_path);
  std::string events;
  for (const auto& e : ds.events) {
    events += canonical_dump(json{{"detail", e.detail}, {"kind", e.kind}, {"sample", e.sample}}) + "\n";
  }
  write_file_atomic(fs::path(o.out) / "events.jsonl", events);
  ctx.output(o.out);
  ctx.out << "generated " << w.count << " OCR conversations (" << ds.events.size() << " events), digest "
          << w.digest << "\n";
}

void do_mix(Context& ctx, const Options& o) {
  ctx.input(o.registry);
  const auto reg = DatasetRegistry::load(o.registry);
  Manifest m;
  if (o.pretrain) {
    m = prepare_pretrain(reg, o.limit, o.seed);
  } else {
    ctx.input(o.spec);
    m = compose_mixture(reg, load_mixture_spec(o.spec));
  }
  write_manifest(m, o.out);
  ctx.output(fs::path(o.out) / "manifest.jsonl");
  ctx.output(fs::path(o.out) / "manifest.summary.json");
  ctx.out << "manifest: " << m.counts.total << " entries";
  for (const auto& [lang, n] : m.counts.by_language) ctx.out << ", " << lang << " " << n;
  ctx.out << "; digest " << m.digest << "\n";
}

void do_emit_config(Context& ctx, const Options& o) {
  ctx.input(o.manifest);
  Stage stage;
  try {
    stage = parse_stage(o.stage);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const auto m = read_manifest(o.manifest);
  const auto text = render_training_config(make_training_config(stage, m));
  const fs::path out = o.out.empty() ? fs::path(o.manifest).parent_path() / (o.stage + ".cfg") : fs::path(o.out);
  write_file_atomic(out, text);
  ctx.output(out);
  ctx.out << text;
}

void do_eval_mc(Context& ctx, const Options& o) {
  ctx.input(o.items);
  const auto variant = parse_variant(o.variant);
  auto r = read_mc_items(o.items, variant);
  if (!r.quarantine.empty()) {
    ctx.err << "warning: " << r.quarantine.size() << " invalid items skipped\n";
    const auto q = sibling(o.out, ".quarantine.jsonl");
    write_quarantine(r.quarantine, q);
    ctx.output(q);
  }
  HttpChatClient client(o.model_url, "VLMFORGE_MODEL_API_KEY");
  BenchmarkOptions bo;
  bo.model = o.model;
  bo.jobs = o.jobs;
  bo.retry.attempts = o.retries;
  bo.image_base = o.image_base.empty() ? fs::path(o.items).parent_path() : fs::path(o.image_base);
  const auto run = run_benchmark(r.items, client, bo);
  write_benchmark(run, o.out);
  ctx.output(o.out);
  ctx.output(sibling(o.out, ".summary.json"));
  const auto& s = run.summary;
  ctx.out << "accuracy " << s.accuracy_percent() << "% (" << s.correct << "/" << s.total << "), unmatched "
          << s.unmatched << ", transport failures " << s.transport_failures << "\n";
}

void do_ledger_add(Context& ctx, const Options& o) {
  IssueLedger ledger;
  if (fs::exists(o.ledger)) {
    ctx.input(o.ledger);
    ledger = IssueLedger::load(o.ledger);
  } else {
    if (o.items.empty()) throw UsageError("a new ledger needs --items to know the benchmark ids");
    ctx.input(o.items);
    std::set<std::string> ids;
    for (const auto& item : read_mc_items(o.items, LanguageVariant::target).items) ids.insert(item.id);
    ledger = IssueLedger(std::move(ids));
  }
  ledger.record(o.item_id, parse_issue_code(o.code), o.note);
  ledger.save(o.ledger);
  ctx.output(o.ledger);
  ctx.out << "recorded " << o.code << " for " << o.item_id << "\n";
}

long long parse_percent(const std::string& s) {
  const auto dot = s.find('.');
  try {
    const long long whole = std::stoll(s.substr(0, dot));
    long long frac = 0;
    if (dot != std::string::npos) {
      std::string f = s.substr(dot + 1);
      if (f.size() > 2 || f.find_first_not_of("0123456789") != std::string::npos) throw std::invalid_argument(s);
      f.resize(2, '0');
      frac = std::stoll(f);
    }
    return whole * 100 + frac;
  } catch (const std::logic_error&) {
    throw UsageError("--reported expects a percentage such as 3.56");
  }
}

void do_ledger_summary(Context& ctx, const Options& o) {
  ctx.input(o.ledger);
  auto ledger = IssueLedger::load(o.ledger);
  if (!o.reported.empty()) ledger.set_reported_inaccuracy(parse_percent(o.reported));
  const auto s = ledger.summary();
  ctx.out << "questions " << s.total_questions << "\n";
  for (auto code : kAllIssueCodes) {
    const auto it = s.counts.find(code);
    ctx.out << "  " << to_string(code) << "  " << (it == s.counts.end() ? 0 : it->second) << "\n";
  }
  ctx.out << "inaccurate " << s.inaccuracy_count << " (" << s.inaccuracy_percent() << "%)\n";
  ctx.out << "foreign context " << s.foreign_count << " (" << s.foreign_percent() << "%)\n";
  if (s.discrepancy) ctx.out << "discrepancy: " << *s.discrepancy << "\n";
  if (!o.out.empty()) {
    write_json_file(o.out, s.to_json());
    ctx.output(o.out);
  }
}

void do_arena(Context& ctx, const Options& o) {
  ctx.input(o.captions_x);
  ctx.input(o.captions_y);
  const auto protocol = parse_protocol(o.protocol);
  const auto criterion = parse_criterion(o.criterion);
  const auto cx = read_captions(o.captions_x);
  const auto cy = read_captions(o.captions_y);
  auto tasks = make_tasks(cx, cy, o.seed, criterion, protocol == Protocol::tie_allowed_randomized);
  if (o.sample > 0) {
    std::vector<std::string> ids;
    for (const auto& t : tasks) ids.push_back(t.item_id);
    const auto keep = sample_ids(ids, o.sample, derive_seed(o.seed, 1));
    const std::set<std::string> keep_set(keep.begin(), keep.end());
    std::erase_if(tasks, [&](const PairwiseTask& t) { return !keep_set.contains(t.item_id); });
  }
  HttpChatClient judge(o.judge_url, "VLMFORGE_JUDGE_API_KEY");
  ArenaOptions ao;
  ao.jobs = o.jobs;
  ao.judge.model = o.judge_model;
  ao.judge.judge_id = o.judge_model;
  ao.judge.retry.attempts = o.retries;
  ao.judge.image_base = fs::path(o.captions_x).parent_path();
  if (!o.prompts.empty()) ao.judge.prompts = PromptSet::from_dir(o.prompts);
  const auto run = run_arena(o.x, o.y, std::move(tasks), protocol, judge, ao);
  write_arena(run, o.out);
  ctx.output(o.out);
  ctx.output(sibling(o.out, ".report.json"));
  for (auto c : {Criterion::content, Criterion::linguistic}) {
    if (protocol == Protocol::no_tie_two_orders && c != criterion) continue;
    const auto r = preference_rate(run, c);
    ctx.out << to_string(c) << ": " << o.x << " preferred " << format_hundredths(r.preference_rate_x()) << "% ("
            << r.win_x << "/" << r.effective() << "), ties " << r.tie << ", parse failures " << r.parse_failures
            << "\n";
  }
}

std::atomic<bool> g_stop{false};

void do_annotate_serve(Context& ctx, const Options& o) {
  ctx.input(o.pool);
  ctx.input(o.calibration);
  auto pool = AnnotationPool::load(o.pool, o.calibration.empty() ? std::nullopt : std::optional<fs::path>(o.calibration));
  ServiceConfig cfg;
  cfg.tokens = parse_annotator_tokens(getenv_str("VLMFORGE_ANNOTATOR_TOKENS"));
  cfg.admin_token = getenv_str("VLMFORGE_ADMIN_TOKEN");
  cfg.state_dir = o.state_dir.empty() ? fs::path(o.pool).parent_path() / "annotate-state" : fs::path(o.state_dir);
  AnnotationService service(std::move(pool), cfg);
  for (const auto& w : service.warnings()) ctx.err << "warning: " << w << "\n";
  AnnotationServer server(service, o.static_dir.empty() ? std::nullopt : std::optional<fs::path>(o.static_dir));
  const int port = server.bind(o.host, o.port);
  ctx.output(cfg.state_dir / (service.pool().id + ".log"));
  write_run_record(ctx, {});

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  g_stop = false;
  std::thread watcher([&] {
    timespec ts{0, 200'000'000};
    while (!g_stop) {
      if (sigtimedwait(&set, nullptr, &ts) > 0) break;
    }
    server.stop();
  });
  ctx.out << "listening on " << o.host << ":" << port << std::endl;
  server.serve();
  g_stop = true;
  watcher.join();
}

void do_report(Context& ctx, const Options& o) {
  std::vector<fs::path> files(o.inputs.begin(), o.inputs.end());
  for (const auto& f : files) ctx.input(f);
  std::optional<AnnotationPool> pool;
  if (!o.pool.empty()) {
    ctx.input(o.pool);
    pool = AnnotationPool::load(o.pool);
  }
  const auto data = load_report_data(files, pool ? &*pool : nullptr);
  const auto text = render_text(data);
  ctx.out << text;
  if (!o.out.empty()) {
    write_file_atomic(o.out, text);
    ctx.output(o.out);
  }
  if (!o.chart.empty()) {
    if (!cv::imwrite(o.chart, render_chart(data))) throw IoError("cannot write chart " + o.chart);
    ctx.output(o.chart);
  }
}

// ---- configuration resolution ----------------------------------------------

// Walks argv to the deepest subcommand named there.
CLI::App* active_subcommand(CLI::App& app, const std::vector<std::string>& args, std::string& path) {
  CLI::App* cur = &app;
  for (const auto& a : args) {
    if (a.starts_with("-")) continue;
    for (auto* sub : cur->get_subcommands({})) {
      if (sub->get_name() == a) {
        cur = sub;
        path += (path.empty() ? "" : ".") + a;
        break;
      }
    }
  }
  return cur == &app ? nullptr : cur;
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  for (const auto& a : args) {
    if (a == flag || a.starts_with(flag + "=")) return true;
  }
  return false;
}

}  // namespace

std::map<std::string, std::string> parse_flat_config(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

std::string digest_path(const fs::path& path, const std::vector<fs::path>& skip) {
  if (!fs::is_directory(path)) return sha256_file(path);
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    bool skipped = false;
    for (const auto& s : skip) skipped |= fs::equivalent(e.path(), s);
    if (!skipped) files.emplace_back(fs::relative(e.path(), path).generic_string(), e.path());
  }
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& [rel, p] : files) h.update(rel + "\t" + sha256_file(p) + "\n");
  return h.hex();
}

json RunRecord::to_json() const {
  return json{{"tool", "vlmforge"},
              {"version", kToolVersion},
              {"subcommand", subcommand},
              {"config", config},
              {"config_sources", config_sources},
              {"inputs", inputs},
              {"outputs", outputs},
              {"started", started},
              {"finished", finished},
              {"elapsed_ms", elapsed_ms}};
}

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  Options o;
  std::string config_path, run_record;
  CLI::App app{"vlmforge: multimodal instruction data and evaluation toolkit", "vlmforge"};
  app.set_version_flag("--version", kToolVersion);
  app.add_option("--config", config_path, "Flat key = value config file (keys: flag or subcommand.flag)");
  app.add_option("--run-record", run_record, "Where to write the run record");
  app.require_subcommand(1);
  app.fallthrough();

  auto* ingest = app.add_subcommand("ingest", "Normalise a conversation source and register it");
  ingest->add_option("--format", o.format, "llava | wit | tallyqa")->capture_default_str();
  ingest->add_option("--in", o.in, "Input JSONL")->required();
  ingest->add_option("--out", o.out, "Output conversation JSONL")->required();
  ingest->add_option("--source", o.source, "Source dataset name")->required();
  ingest->add_option("--category", o.category, "general | ocr | knowledge | counting | pretrain")->capture_default_str();
  ingest->add_option("--lang", o.lang, "Language tag")->capture_default_str();
  ingest->add_option("--registry", o.registry, "Registry file to record the source in");
  ingest->add_option("--tau", o.tau_opt, "QE threshold to record for this source");
  ingest->add_option("--templates", o.templates, "Instruction templates for wit");
  ingest->add_option("--seed", o.seed)->capture_default_str();

  auto* adapt = app.add_subcommand("adapt", "Translate, QE-score and filter a conversation corpus");
  adapt->add_option("--in", o.in)->required();
  adapt->add_option("--out", o.out)->required();
  adapt->add_option("--source", o.source)->required();
  adapt->add_option("--tau", o.tau, "Keep a pair iff both QE scores >= tau")->required()->check(CLI::Range(0.0, 1.0));
  adapt->add_option("--mt-url", o.mt_url, "Chat-completions endpoint for translation")->required();
  adapt->add_option("--qe-url", o.qe_url, "Quality-estimation endpoint")->required();
  adapt->add_option("--mt-model", o.mt_model)->capture_default_str();
  adapt->add_option("--src-lang", o.src_lang)->capture_default_str();
  adapt->add_option("--tgt-lang", o.tgt_lang)->capture_default_str();
  adapt->add_option("--jobs", o.jobs, "Conversations in flight")->capture_default_str()->check(CLI::PositiveNumber);
  adapt->add_option("--retries", o.retries)->capture_default_str()->check(CLI::PositiveNumber);
  adapt->add_option("--checkpoint-dir", o.checkpoint_dir);
  adapt->add_option("--registry", o.registry);
  adapt->add_option("--register-as", o.register_as);

  auto* synth = app.add_subcommand("synth-ocr", "Generate synthetic OCR conversations");
  synth->add_option("--n", o.n)->required();
  synth->add_option("--seed", o.seed)->capture_default_str();
  synth->add_option("--pl-ratio", o.pl_ratio)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_option("--fonts", o.fonts)->required();
  synth->add_option("--bg", o.bg)->required();
  synth->add_option("--out", o.out)->required();
  synth->add_option("--corpus-pl", o.corpus_pl, "Polish snippet corpus, one document per line");
  synth->add_option("--corpus-en", o.corpus_en, "English snippet corpus");
  synth->add_option("--templates", o.templates);
  synth->add_option("--jobs", o.jobs)->capture_default_str()->check(CLI::PositiveNumber);

  auto* mix = app.add_subcommand("mix", "Compose an instruction mixture manifest");
  mix->add_option("--spec", o.spec);
  mix->add_option("--registry", o.registry)->required();
  mix->add_option("--out", o.out)->required();
  mix->add_flag("--pretrain", o.pretrain, "Pretraining manifest over pretrain-category sources");
  mix->add_option("--limit", o.limit);
  mix->add_option("--seed", o.seed)->capture_default_str();

  auto* emit = app.add_subcommand("emit-config", "Write a stage training configuration for a manifest");
  emit->add_option("--stage", o.stage, "pretrain | instruct")->required();
  emit->add_option("--manifest", o.manifest)->required();
  emit->add_option("--out", o.out);

  auto* eval = app.add_subcommand("eval-mc", "Evaluate a model on a multiple-choice benchmark");
  eval->add_option("--items", o.items)->required();
  eval->add_option("--variant", o.variant, "pl | en")->required();
  eval->add_option("--model-url", o.model_url)->required();
  eval->add_option("--model", o.model)->capture_default_str();
  eval->add_option("--jobs", o.jobs)->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--retries", o.retries)->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--out", o.out)->required();
  eval->add_option("--image-base", o.image_base);

  auto* ledger = app.add_subcommand("ledger", "Benchmark adaptation issue ledger");
  ledger->require_subcommand(1);
  auto* ladd = ledger->add_subcommand("add", "Record one issue category for a question");
  ladd->add_option("--ledger", o.ledger)->required();
  ladd->add_option("--items", o.items, "Benchmark items (needed when creating the ledger)");
  ladd->add_option("--id", o.item_id)->required();
  ladd->add_option("--code", o.code, "1a..1i or 2a..2b")->required();
  ladd->add_option("--note", o.note);
  auto* lsum = ledger->add_subcommand("summary", "Category counts and percentages");
  lsum->add_option("--ledger", o.ledger)->required();
  lsum->add_option("--reported", o.reported, "Reported inaccuracy percentage to check the counts against");
  lsum->add_option("--out", o.out);

  auto* arena = app.add_subcommand("arena", "Judge pairwise caption comparisons");
  arena->add_option("--x", o.x)->required();
  arena->add_option("--y", o.y)->required();
  arena->add_option("--captions-x", o.captions_x)->required();
  arena->add_option("--captions-y", o.captions_y)->required();
  arena->add_option("--criterion", o.criterion, "linguistic | content")->capture_default_str();
  arena->add_option("--protocol", o.protocol, "no_tie_two_orders | tie_allowed_randomized")->capture_default_str();
  arena->add_option("--judge-url", o.judge_url)->required();
  arena->add_option("--judge-model", o.judge_model)->capture_default_str();
  arena->add_option("--seed", o.seed)->capture_default_str();
  arena->add_option("--sample", o.sample, "Judge a seeded sample of this many items")->capture_default_str();
  arena->add_option("--prompts", o.prompts, "Directory of <name>.v<N>.txt prompt overrides");
  arena->add_option("--jobs", o.jobs)->capture_default_str()->check(CLI::PositiveNumber);
  arena->add_option("--retries", o.retries)->capture_default_str()->check(CLI::PositiveNumber);
  arena->add_option("--out", o.out)->required();

  auto* serve = app.add_subcommand("annotate-serve", "Serve human annotation sessions");
  serve->add_option("--pool", o.pool)->required();
  serve->add_option("--calibration", o.calibration);
  serve->add_option("--host", o.host)->capture_default_str();
  serve->add_option("--port", o.port, "0 picks a free port")->capture_default_str();
  serve->add_option("--state-dir", o.state_dir);
  serve->add_option("--static", o.static_dir, "Directory served at /");

  auto* report = app.add_subcommand("report", "Render summaries as tables and a chart");
  report->add_option("--inputs", o.inputs, "Summary documents")->required();
  report->add_option("--pool", o.pool, "Annotation pool, to name models in human reports");
  report->add_option("--out", o.out);
  report->add_option("--chart", o.chart, "PNG chart path");

  std::vector<std::string> args = raw_args;
  std::string sub_path;
  CLI::App* sub = active_subcommand(app, args, sub_path);
  json sources = json::object();
  try {
    std::map<std::string, std::string> file_config;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (args[i].starts_with("--config=")) config_path = args[i].substr(9);
    }
    if (config_path.empty()) config_path = getenv_str("VLMFORGE_CONFIG");
    if (!config_path.empty()) file_config = parse_flat_config(read_file(config_path));
    if (sub) {
      for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string name = opt->get_lnames().front();
        if (name == "help") continue;
        std::optional<std::string> value;
        if (given_on_command_line(args, name)) {
          sources[name] = "flag";
          continue;
        }
        if (auto it = file_config.find(sub_path + "." + name); it != file_config.end()) {
          value = it->second;
          sources[name] = "config";
        } else if (auto jt = file_config.find(name); jt != file_config.end()) {
          value = jt->second;
          sources[name] = "config";
        } else if (const char* env = std::getenv(env_name(name).c_str())) {
          value = env;
          sources[name] = "env";
        } else {
          sources[name] = "default";
        }
        if (!value) continue;
        if (opt->get_expected_min() == 0) {
          if (truthy(*value)) args.push_back("--" + name);
        } else {
          std::istringstream parts(*value);
          std::string part;
          args.push_back("--" + name);
          if (opt->get_expected_max() > 1) {
            while (parts >> part) args.push_back(part);
          } else {
            args.push_back(*value);
          }
        }
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<const char*> argv{"vlmforge"};
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* target = sub ? sub : &app;
    err << target->help();
    return 2;
  }

  sub_path.clear();
  sub = active_subcommand(app, raw_args, sub_path);
  if (!sub) sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
  Context ctx{out, err, {}, {}, {}};
  ctx.record.subcommand = sub_path;
  ctx.record.config_sources = sources;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    const auto& name = opt->get_lnames().front();
    if (opt->count() > 0) {
      const auto& res = opt->results();
      ctx.record.config[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else if (!opt->get_default_str().empty()) {
      ctx.record.config[name] = opt->get_default_str();
    }
  }
  ctx.record.started = utc_timestamp();
  ctx.record_path = run_record.empty() ? default_record_path(sub_path, o) : fs::path(run_record);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (sub_path == "ingest") do_ingest(ctx, o);
    else if (sub_path == "adapt") do_adapt(ctx, o);
    else if (sub_path == "synth-ocr") do_synth(ctx, o);
    else if (sub_path == "mix") do_mix(ctx, o);
    else if (sub_path == "emit-config") do_emit_config(ctx, o);
    else if (sub_path == "eval-mc") do_eval_mc(ctx, o);
    else if (sub_path == "ledger.add") do_ledger_add(ctx, o);
    else if (sub_path == "ledger.summary") do_ledger_summary(ctx, o);
    else if (sub_path == "arena") do_arena(ctx, o);
    else if (sub_path == "annotate-serve") do_annotate_serve(ctx, o);
    else if (sub_path == "report") do_report(ctx, o);
    else throw UsageError("unknown subcommand " + sub_path);
    if (sub_path != "annotate-serve") {
      ctx.record.finished = utc_timestamp();
      ctx.record.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - t0).count();
      write_run_record(ctx, {ctx.record_path});
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace vlmforge

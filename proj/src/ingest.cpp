#include "vlmforge/ingest.hpp"

#include <set>

#include "vlmforge/errors.hpp"
#include "vlmforge/io.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

std::string id_string(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw IngestError("id must be a string or integer");
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw IngestError(std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw IngestError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

Speaker parse_speaker(const std::string& from) {
  if (from == "human" || from == "user") return Speaker::human;
  if (from == "gpt" || from == "assistant") return Speaker::assistant;
  throw IngestError("unknown speaker '" + from + "'");
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool blank_line(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

void write_quarantine(std::span<const QuarantineEntry> entries, const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : entries) {
    json j{{"line", e.line}, {"raw", e.raw}, {"reasons", e.reasons}};
    out += j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  }
  write_file_atomic(path, out);
}

json to_json(const Conversation& c) {
  json turns = json::array();
  for (const auto& t : c.turns) {
    turns.push_back({{"from", t.speaker == Speaker::human ? "human" : "gpt"}, {"value", t.text}});
  }
  json j{{"id", c.id},
         {"conversations", std::move(turns)},
         {"source", c.source},
         {"lang", c.language},
         {"category", std::string(to_string(c.category))}};
  if (c.image_ref) j["image"] = *c.image_ref;
  return j;
}

Conversation conversation_from_json(const json& j, const IngestOptions& defaults) {
  if (!j.is_object()) throw IngestError("record is not an object");
  Conversation c;
  c.id = id_string(require(j, "id"));
  if (auto it = j.find("image"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw IngestError("field 'image' must be a string");
    c.image_ref = it->get<std::string>();
  }
  const json& turns = require(j, "conversations");
  if (!turns.is_array()) throw IngestError("field 'conversations' must be an array");
  for (const auto& t : turns) {
    if (!t.is_object()) throw IngestError("turn is not an object");
    c.turns.push_back(Turn::make(parse_speaker(require_string(t, "from")), require_string(t, "value")));
  }
  c.source = j.contains("source") ? require_string(j, "source") : defaults.source;
  c.language = j.contains("lang") ? require_string(j, "lang") : defaults.language;
  c.category = j.contains("category") ? parse_category(require_string(j, "category")) : defaults.category;
  return c;
}

std::string canonical_line(const Conversation& c) { return canonical_dump(to_json(c)); }

ConversationReader::ConversationReader(const std::filesystem::path& path, IngestOptions options)
    : in_(path, std::ios::binary), options_(std::move(options)) {
  if (!in_) throw IoError("cannot open " + path.string());
}

std::optional<Conversation> ConversationReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    strip_cr(line);
    if (blank_line(line)) continue;
    ++records_in_;
    QuarantineEntry q{line_, line, {}};
    try {
      Conversation c = conversation_from_json(json::parse(line), options_);
      for (const auto& v : validate_conversation(c)) q.reasons.push_back(v.describe());
      if (q.reasons.empty()) {
        auto [it, inserted] = seen_ids_.emplace(c.id, line_);
        if (!inserted) {
          q.reasons.push_back("duplicate id '" + c.id + "' (first at line " +
                              std::to_string(it->second) + ")");
        }
      }
      if (q.reasons.empty()) {
        // Round-trip through the canonical encoder so invalid UTF-8 is caught here.
        (void)canonical_line(c);
        ++records_out_;
        return c;
      }
    } catch (const json::exception& e) {
      q.reasons.emplace_back(std::string("malformed: ") + e.what());
    } catch (const Error& e) {
      q.reasons.emplace_back(std::string("malformed: ") + e.what());
    }
    quarantine_.push_back(std::move(q));
  }
  if (in_.bad()) throw IoError("read error");
  return std::nullopt;
}

ReadResult read_conversations(const std::filesystem::path& path, const IngestOptions& options) {
  ConversationReader reader(path, options);
  ReadResult r;
  while (auto c = reader.next()) r.conversations.push_back(std::move(*c));
  r.quarantine = reader.quarantine();
  r.records_in = reader.records_in();
  return r;
}

ConversationWriter::ConversationWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  tmp_ = path_;
  tmp_ += ".partial";
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot write " + path_.string());
}

ConversationWriter::~ConversationWriter() {
  if (!finished_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

void ConversationWriter::write(const Conversation& c) {
  const std::string line = canonical_line(c) + "\n";
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  if (!out_) throw IoError("write failed for " + path_.string());
  hash_.update(line);
  ++count_;
}

WriteResult ConversationWriter::finish() {
  out_.flush();
  if (!out_) throw IoError("write failed for " + path_.string());
  out_.close();
  std::error_code ec;
  std::filesystem::rename(tmp_, path_, ec);
  if (ec) throw IoError("cannot rename onto " + path_.string());
  finished_ = true;
  return WriteResult{count_, hash_.hex()};
}

WriteResult write_conversations(std::span<const Conversation> conversations,
                                const std::filesystem::path& path) {
  ConversationWriter w(path);
  for (const auto& c : conversations) w.write(c);
  return w.finish();
}

std::string canonical_digest(std::span<const Conversation> conversations) {
  Sha256 h;
  for (const auto& c : conversations) h.update(canonical_line(c) + "\n");
  return h.hex();
}

json to_json(const McItem& item) {
  json options = json::object();
  for (const auto& [letter, text] : item.options) options[std::string(1, letter)] = text;
  json j{{"id", item.id},
         {"question", item.question},
         {"options", std::move(options)},
         {"answer", std::string(1, item.answer)},
         {"image", item.image_ref},
         {"lang", item.language_variant == LanguageVariant::source ? "en" : "pl"}};
  if (item.issue_tag) {
    j["issue"] = {{"code", std::string(to_string(item.issue_tag->code))}, {"note", item.issue_tag->note}};
  }
  return j;
}

McReadResult read_mc_items(const std::filesystem::path& path, LanguageVariant variant) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  McReadResult r;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (blank_line(line)) continue;
    QuarantineEntry q{lineno, line, {}};
    McItem item;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw IngestError("record is not an object");
      item.id = id_string(require(j, "id"));
      item.question = require_string(j, "question");
      const json& options = require(j, "options");
      if (!options.is_object()) throw IngestError("field 'options' must be an object");
      for (const auto& [key, value] : options.items()) {
        if (key.size() != 1 || key[0] < 'A' || key[0] > 'D') {
          throw IngestError("option key '" + key + "' is not one of A-D");
        }
        if (!value.is_string()) throw IngestError("option text must be a string");
        item.options[key[0]] = value.get<std::string>();
      }
      const std::string answer = require_string(j, "answer");
      if (answer.size() != 1) throw IngestError("answer must be a single letter");
      item.answer = answer[0];
      if (auto it = j.find("image"); it != j.end() && it->is_string()) item.image_ref = it->get<std::string>();
      item.language_variant = variant;
      if (auto it = j.find("issue"); it != j.end() && it->is_object()) {
        item.issue_tag = IssueCategory{parse_issue_code(require_string(*it, "code")),
                                       it->value("note", std::string())};
      }
      q.reasons = validate_mc_item(item);
    } catch (const json::exception& e) {
      q.reasons.emplace_back(std::string("malformed: ") + e.what());
    } catch (const Error& e) {
      q.reasons.emplace_back(std::string("malformed: ") + e.what());
    }
    if (!q.reasons.empty()) {
      r.quarantine.push_back(std::move(q));
      continue;
    }
    if (!seen.insert(item.id).second) {
      throw IngestError(path.string() + ": duplicate item id '" + item.id + "' at line " +
                        std::to_string(lineno));
    }
    r.items.push_back(std::move(item));
  }
  return r;
}

void write_mc_items(std::span<const McItem> items, const std::filesystem::path& path) {
  std::string out;
  for (const auto& item : items) out += canonical_dump(to_json(item)) + "\n";
  write_file_atomic(path, out);
}

DatasetRegistry DatasetRegistry::load(const std::filesystem::path& path) {
  DatasetRegistry reg;
  reg.base_dir = path.parent_path();
  if (!std::filesystem::exists(path)) return reg;
  const json doc = read_json_file(path);
  try {
    for (const auto& [name, e] : doc.at("sources").items()) {
      RegistryEntry entry;
      entry.root = e.at("root").get<std::string>();
      entry.format_version = e.value("format_version", 1);
      entry.category = parse_category(e.at("category").get<std::string>());
      entry.language = e.at("language").get<std::string>();
      entry.count = e.at("count").get<std::uint64_t>();
      entry.digest = e.at("digest").get<std::string>();
      if (e.contains("tau")) entry.tau = e.at("tau").get<double>();
      reg.entries_.emplace(name, std::move(entry));
    }
  } catch (const json::exception& ex) {
    throw IngestError(path.string() + ": malformed registry: " + ex.what());
  }
  return reg;
}

void DatasetRegistry::save(const std::filesystem::path& path) const {
  json sources = json::object();
  for (const auto& [name, e] : entries_) {
    json j{{"root", e.root},
           {"format_version", e.format_version},
           {"category", std::string(to_string(e.category))},
           {"language", e.language},
           {"count", e.count},
           {"digest", e.digest},
           {"digest_algorithm", "sha256"}};
    if (e.tau) j["tau"] = *e.tau;
    sources[name] = std::move(j);
  }
  write_json_file(path, json{{"format", "vlmforge-registry/1"}, {"sources", std::move(sources)}});
}

std::filesystem::path DatasetRegistry::resolve(const RegistryEntry& e) const {
  std::filesystem::path p(e.root);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

const RegistryEntry& DatasetRegistry::register_source(const std::string& name,
                                                      const std::filesystem::path& root,
                                                      Category category, const std::string& language) {
  RegistryEntry entry;
  entry.root = root.string();
  entry.category = category;
  entry.language = language;
  const auto r = read_conversations(resolve(entry), IngestOptions{name, category, language});
  entry.count = r.conversations.size();
  entry.digest = canonical_digest(r.conversations);
  if (auto it = entries_.find(name); it != entries_.end()) entry.tau = it->second.tau;
  entries_[name] = std::move(entry);
  return entries_.at(name);
}

void DatasetRegistry::put(const std::string& name, RegistryEntry entry) {
  entries_[name] = std::move(entry);
}

std::vector<std::string> DatasetRegistry::verify(const std::string& name) const {
  const RegistryEntry& e = at(name);
  const auto r = read_conversations(resolve(e), IngestOptions{name, e.category, e.language});
  std::vector<std::string> problems;
  if (r.conversations.size() != e.count) {
    problems.push_back("count " + std::to_string(r.conversations.size()) + " != recorded " +
                       std::to_string(e.count));
  }
  if (const auto d = canonical_digest(r.conversations); d != e.digest) {
    problems.push_back("digest " + d + " != recorded " + e.digest);
  }
  return problems;
}

double DatasetRegistry::tau_for(const std::string& name) const {
  auto it = entries_.find(name);
  return it != entries_.end() && it->second.tau ? *it->second.tau : kDefaultTau;
}

const RegistryEntry& DatasetRegistry::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("source '" + name + "' not in registry");
  return it->second;
}

WitConversion convert_wit(const std::filesystem::path& path, const InstructionTemplates& templates,
                          const std::string& language, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  WitConversion out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (blank_line(line)) continue;
    try {
      const json j = json::parse(line);
      const std::string id = id_string(require(j, "id"));
      if (require_string(j, "language") != language) {
        ++out.skipped_language;
        continue;
      }
      const json& captions = require(j, "captions");
      if (!captions.is_array()) throw IngestError("field 'captions' must be an array");
      std::optional<std::string> first;
      std::size_t human = 0;
      for (const auto& cap : captions) {
        if (!cap.value("human_written", false)) continue;
        const std::string text = cap.value("text", std::string());
        if (text.find_first_not_of(" \t\n") == std::string::npos) continue;
        ++human;
        if (!first) first = text;
      }
      if (!first) {
        ++out.skipped_no_human_caption;
        continue;
      }
      if (human > 1) ++out.multi_caption_records;
      if (!seen.insert(id).second) throw IngestError("duplicate id '" + id + "'");
      Rng rng(derive_seed(seed, fnv1a64(id)));
      Conversation c;
      c.id = id;
      c.image_ref = require_string(j, "image");
      c.source = "wit";
      c.language = language;
      c.category = Category::knowledge;
      c.turns.push_back(Turn::make(Speaker::human, std::string(kImageToken) + "\n" +
                                                       templates.pick(language, rng)));
      c.turns.push_back(Turn::make(Speaker::assistant, *first));
      out.conversations.push_back(std::move(c));
    } catch (const json::exception& e) {
      out.quarantine.push_back({lineno, line, {std::string("malformed: ") + e.what()}});
    } catch (const Error& e) {
      out.quarantine.push_back({lineno, line, {std::string("malformed: ") + e.what()}});
    }
  }
  return out;
}

ReadResult convert_tallyqa(const std::filesystem::path& path, const std::string& source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  ReadResult out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (blank_line(line)) continue;
    ++out.records_in;
    try {
      const json j = json::parse(line);
      Conversation c;
      c.id = id_string(require(j, "id"));
      c.image_ref = require_string(j, "image");
      c.source = source;
      c.language = "en";
      c.category = Category::counting;
      const json& answer = require(j, "answer");
      const std::string answer_text =
          answer.is_number_integer() ? std::to_string(answer.get<long long>()) : answer.get<std::string>();
      const std::string question = require_string(j, "question");
      if (blank_line(question)) throw IngestError("empty question");
      c.turns.push_back(Turn::make(Speaker::human, std::string(kImageToken) + "\n" + question));
      c.turns.push_back(Turn::make(Speaker::assistant, answer_text));
      std::vector<std::string> reasons;
      for (const auto& v : validate_conversation(c)) reasons.push_back(v.describe());
      if (reasons.empty() && !seen.insert(c.id).second) reasons.push_back("duplicate id '" + c.id + "'");
      if (!reasons.empty()) {
        out.quarantine.push_back({lineno, line, std::move(reasons)});
        continue;
      }
      out.conversations.push_back(std::move(c));
    } catch (const json::exception& e) {
      out.quarantine.push_back({lineno, line, {std::string("malformed: ") + e.what()}});
    } catch (const Error& e) {
      out.quarantine.push_back({lineno, line, {std::string("malformed: ") + e.what()}});
    }
  }
  return out;
}

}  // namespace vlmforge

#include "vlmforge/mixer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "vlmforge/digest.hpp"
#include "vlmforge/io.hpp"
#include "vlmforge/rng.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

json entry_json(const ManifestEntry& e) {
  return json{{"category", to_string(e.category)}, {"id", e.id}, {"lang", e.language}, {"source", e.source}};
}

ManifestEntry entry_from_json(const json& j) {
  return ManifestEntry{j.at("source").get<std::string>(), j.at("id").get<std::string>(),
                       parse_category(j.at("category").get<std::string>()), j.at("lang").get<std::string>()};
}

json counts_json(const ManifestCounts& c) {
  json cat = json::object();
  for (const auto& [k, v] : c.by_category) cat[std::string(to_string(k))] = v;
  json lang = json::object();
  for (const auto& [k, v] : c.by_language) lang[k] = v;
  json both = json::object();
  for (const auto& [k, m] : c.by_category_language) {
    json inner = json::object();
    for (const auto& [l, v] : m) inner[l] = v;
    both[std::string(to_string(k))] = inner;
  }
  return json{{"by_category", cat}, {"by_category_language", both}, {"by_language", lang}, {"total", c.total}};
}

// Uniform in (0, 1), a pure function of the seed and the entry key.
double keyed_uniform(std::uint64_t seed, const ManifestEntry& e) {
  std::string key = e.source;
  key.push_back('\0');
  key += e.id;
  const std::uint64_t h = splitmix64(seed ^ fnv1a64(key));
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

// Efraimidis-Spirakis: the k largest log(u)/w keys.
std::vector<ManifestEntry> weighted_sample(std::vector<const PoolEntry*> candidates, std::uint64_t k,
                                           std::uint64_t seed) {
  std::vector<std::pair<double, const PoolEntry*>> keyed;
  keyed.reserve(candidates.size());
  for (const auto* c : candidates) keyed.emplace_back(std::log(keyed_uniform(seed, c->entry)) / c->weight, c);
  const auto kk = static_cast<std::ptrdiff_t>(k);
  auto cmp = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->entry < b.second->entry;
  };
  std::nth_element(keyed.begin(), keyed.begin() + std::min<std::ptrdiff_t>(kk, keyed.size()), keyed.end(), cmp);
  std::vector<ManifestEntry> out;
  for (std::ptrdiff_t i = 0; i < kk; ++i) out.push_back(keyed[i].second->entry);
  return out;
}

Manifest finish(std::vector<ManifestEntry> entries, std::optional<MixtureSpec> spec) {
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].source == entries[i - 1].source && entries[i].id == entries[i - 1].id) {
      throw CompositionError("duplicate entry " + entries[i].source + "/" + entries[i].id);
    }
  }
  Manifest m;
  m.counts = count_entries(entries);
  m.digest = manifest_digest(entries);
  m.entries = std::move(entries);
  m.spec = std::move(spec);
  return m;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_number(std::string_view s, std::string_view key) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("bad number for '" + std::string(key) + "': " + std::string(s));
  }
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

double Manifest::language_fraction(const std::string& language) const {
  if (counts.total == 0) return 0.0;
  auto it = counts.by_language.find(language);
  return it == counts.by_language.end() ? 0.0 : static_cast<double>(it->second) / counts.total;
}

ManifestCounts count_entries(std::span<const ManifestEntry> entries) {
  ManifestCounts c;
  for (const auto& e : entries) {
    ++c.by_category[e.category];
    ++c.by_language[e.language];
    ++c.by_category_language[e.category][e.language];
    ++c.total;
  }
  return c;
}

std::string manifest_digest(std::span<const ManifestEntry> entries) {
  Sha256 h;
  for (const auto& e : entries) h.update(canonical_dump(entry_json(e)) + "\n");
  return h.hex();
}

json to_json(const MixtureSpec& spec) {
  json targets = json::object();
  for (const auto& [c, n] : spec.targets) targets[std::string(to_string(c))] = n;
  json weights = json::object();
  for (const auto& [s, w] : spec.source_weights) weights[s] = w;
  return json{{"adapted_language", spec.adapted_language},
              {"balance", json::array({spec.balance_adapted, spec.balance_original})},
              {"original_language", spec.original_language},
              {"seed", spec.seed},
              {"targets", targets},
              {"weights", weights}};
}

MixtureSpec mixture_spec_from_json(const json& j) {
  try {
    MixtureSpec s;
    for (const auto& [k, v] : j.at("targets").items()) s.targets[parse_category(k)] = v.get<std::uint64_t>();
    if (j.contains("balance")) {
      const auto& b = j.at("balance");
      if (!b.is_array() || b.size() != 2) throw ConfigError("balance must be a two-element array");
      s.balance_adapted = b[0].get<std::uint64_t>();
      s.balance_original = b[1].get<std::uint64_t>();
    }
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("weights")) {
      for (const auto& [k, v] : j.at("weights").items()) s.source_weights[k] = v.get<double>();
    }
    s.adapted_language = j.value("adapted_language", s.adapted_language);
    s.original_language = j.value("original_language", s.original_language);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid mixture spec: ") + e.what());
  }
}

MixtureSpec load_mixture_spec(const std::filesystem::path& path) {
  return mixture_spec_from_json(read_json_file(path));
}

void write_manifest(const Manifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string body;
  for (const auto& e : m.entries) body += canonical_dump(entry_json(e)) + "\n";
  write_file_atomic(dir / "manifest.jsonl", body);
  json summary{{"format", "vlmforge-manifest/1"}, {"counts", counts_json(m.counts)}, {"digest", m.digest}};
  summary["spec"] = m.spec ? to_json(*m.spec) : json(nullptr);
  write_json_file(dir / "manifest.summary.json", summary);
}

Manifest read_manifest(const std::filesystem::path& path) {
  const auto dir = std::filesystem::is_directory(path) ? path : path.parent_path();
  const auto summary = read_json_file(dir / "manifest.summary.json");
  std::vector<ManifestEntry> entries;
  std::istringstream in(read_file(dir / "manifest.jsonl"));
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (!line.empty()) entries.push_back(entry_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("corrupt manifest: ") + e.what());
  }
  std::optional<MixtureSpec> spec;
  if (summary.contains("spec") && !summary["spec"].is_null()) spec = mixture_spec_from_json(summary["spec"]);
  Manifest m = finish(std::move(entries), std::move(spec));
  if (m.digest != summary.value("digest", std::string())) {
    throw ContractError("manifest digest mismatch: entries hash to " + m.digest);
  }
  return m;
}

std::pair<std::uint64_t, std::uint64_t> split_target(std::uint64_t target, std::uint64_t adapted_parts,
                                                      std::uint64_t original_parts) {
  const std::uint64_t parts = adapted_parts + original_parts;
  if (parts == 0) throw ConfigError("balance parts sum to zero");
  std::uint64_t a = target / parts * adapted_parts + (target % parts) * adapted_parts / parts;
  std::uint64_t o = target / parts * original_parts + (target % parts) * original_parts / parts;
  const std::uint64_t ra = (target % parts) * adapted_parts % parts;
  const std::uint64_t ro = (target % parts) * original_parts % parts;
  if (a + o < target) {
    if (ra >= ro) {
      ++a;
    } else {
      ++o;
    }
  }
  return {a, o};
}

std::vector<PoolEntry> load_pool(const DatasetRegistry& registry, const std::map<std::string, double>& weights) {
  std::vector<PoolEntry> pool;
  for (const auto& [name, e] : registry.entries()) {
    double w = 1.0;
    if (auto it = weights.find(name); it != weights.end()) w = it->second;
    if (w <= 0.0) continue;
    ConversationReader reader(registry.resolve(e), IngestOptions{name, e.category, e.language});
    Sha256 h;
    std::uint64_t n = 0;
    while (auto c = reader.next()) {
      h.update(canonical_line(*c) + "\n");
      ++n;
      pool.push_back({ManifestEntry{name, c->id, c->category, c->language}, w});
    }
    if (!e.digest.empty() && (n != e.count || h.hex() != e.digest)) {
      throw CompositionError("source '" + name + "' changed since registration (" + std::to_string(n) +
                             " records, registry says " + std::to_string(e.count) + ")");
    }
  }
  return pool;
}

Manifest compose_mixture(std::span<const PoolEntry> pool, const MixtureSpec& spec) {
  spec.validate();
  std::map<std::pair<Category, std::string>, std::vector<const PoolEntry*>> buckets;
  for (const auto& p : pool) {
    if (p.weight <= 0.0) continue;
    if (p.entry.language != spec.adapted_language && p.entry.language != spec.original_language) continue;
    buckets[{p.entry.category, p.entry.language}].push_back(&p);
  }
  std::vector<std::string> shortfalls;
  std::vector<ManifestEntry> chosen;
  for (const auto& [category, target] : spec.targets) {
    const auto [n_adapted, n_original] = split_target(target, spec.balance_adapted, spec.balance_original);
    for (const auto& [lang, need] : {std::pair{spec.adapted_language, n_adapted},
                                     std::pair{spec.original_language, n_original}}) {
      if (need == 0) continue;
      auto it = buckets.find({category, lang});
      const std::size_t have = it == buckets.end() ? 0 : it->second.size();
      if (have < need) {
        shortfalls.push_back(std::string(to_string(category)) + "/" + lang + ": need " + std::to_string(need) +
                             ", have " + std::to_string(have));
        continue;
      }
      const std::uint64_t bucket_seed = derive_seed(spec.seed, fnv1a64(std::string(to_string(category)) + "/" + lang));
      for (auto& e : weighted_sample(it->second, need, bucket_seed)) chosen.push_back(std::move(e));
    }
  }
  if (!shortfalls.empty()) {
    std::string msg = "insufficient samples";
    for (const auto& s : shortfalls) msg += "; " + s;
    throw CompositionError(msg);
  }
  return finish(std::move(chosen), spec);
}

Manifest compose_mixture(const DatasetRegistry& registry, const MixtureSpec& spec) {
  spec.validate();
  const auto pool = load_pool(registry, spec.source_weights);
  return compose_mixture(pool, spec);
}

Manifest prepare_pretrain(std::span<const PoolEntry> pool, std::optional<std::uint64_t> limit, std::uint64_t seed) {
  std::vector<const PoolEntry*> candidates;
  for (const auto& p : pool) {
    if (p.entry.category == Category::pretrain && p.weight > 0.0) candidates.push_back(&p);
  }
  if (limit && *limit > candidates.size()) {
    throw CompositionError("insufficient samples; pretrain: need " + std::to_string(*limit) + ", have " +
                           std::to_string(candidates.size()));
  }
  std::vector<ManifestEntry> chosen;
  if (limit) {
    chosen = weighted_sample(candidates, *limit, derive_seed(seed, fnv1a64("pretrain")));
  } else {
    for (const auto* c : candidates) chosen.push_back(c->entry);
  }
  return finish(std::move(chosen), std::nullopt);
}

Manifest prepare_pretrain(const DatasetRegistry& registry, std::optional<std::uint64_t> limit, std::uint64_t seed) {
  const auto pool = load_pool(registry, {});
  return prepare_pretrain(pool, limit, seed);
}

std::string_view to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "instruct"; }

Stage parse_stage(std::string_view s) {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "instruct") return Stage::instruct;
  throw ContractError("unknown stage '" + std::string(s) + "' (expected pretrain or instruct)");
}

void TrainingConfig::validate() const {
  const std::set<std::string> all{"projector", "vision", "llm-adapters"};
  if (stage == Stage::pretrain && trainable != std::set<std::string>{"projector"}) {
    throw ContractError("pretrain stage must train the projector only");
  }
  if (stage == Stage::instruct && trainable != all) {
    throw ContractError("instruct stage must train projector, vision and llm-adapters");
  }
  if (context_tokens <= 0 || batch_size <= 0) throw ContractError("context and batch size must be positive");
  if (lora) {
    if (lora->rank <= 0 || lora->alpha <= 0) throw ContractError("LoRA rank and alpha must be positive");
    if (!(lora->dropout >= 0.0 && lora->dropout < 1.0)) throw ContractError("LoRA dropout must lie in [0, 1)");
  }
  if (trainable.contains("llm-adapters") != lora.has_value()) {
    throw ContractError("LoRA settings present iff adapters are trainable");
  }
}

TrainingConfig make_training_config(Stage stage, const Manifest& manifest) {
  if (manifest.entries.empty()) throw ContractError("cannot emit a training config for an empty manifest");
  TrainingConfig c;
  c.stage = stage;
  c.context_tokens = 8192;
  c.manifest_digest = manifest.digest;
  c.manifest_entries = manifest.entries.size();
  if (stage == Stage::pretrain) {
    c.trainable = {"projector"};
    c.batch_size = 256;
    c.learning_rates = {{"projector", 1e-3}};
  } else {
    c.trainable = {"projector", "vision", "llm-adapters"};
    c.batch_size = 128;
    c.learning_rates = {{"vision", 2e-6}, {"projector", 2e-5}, {"llm", 2e-5}};
    c.lora = LoraSettings{128, 256, 0.05};
  }
  c.validate();
  return c;
}

std::string render_training_config(const TrainingConfig& c) {
  c.validate();
  std::ostringstream out;
  out << "# vlmforge training configuration\n";
  if (c.stage == Stage::instruct) {
    out << "# The language model trains through LoRA adapters, not full fine-tuning;\n"
           "# the vision encoder and projector train in full.\n";
  }
  out << "[" << to_string(c.stage) << "]\n";
  std::string trainable;
  for (const auto& t : c.trainable) trainable += (trainable.empty() ? "" : ",") + t;
  out << "trainable = " << trainable << "\n";
  out << "context_tokens = " << c.context_tokens << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  for (const auto& [k, v] : c.learning_rates) out << "lr." << k << " = " << format_number(v) << "\n";
  if (c.lora) {
    out << "lora.r = " << c.lora->rank << "\n";
    out << "lora.alpha = " << c.lora->alpha << "\n";
    out << "lora.dropout = " << format_number(c.lora->dropout) << "\n";
  }
  out << "manifest.digest = " << c.manifest_digest << "\n";
  out << "manifest.entries = " << c.manifest_entries << "\n";
  return out.str();
}

TrainingConfig parse_training_config(std::string_view text) {
  TrainingConfig c;
  bool have_stage = false;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  auto as_int = [](const std::string& v, std::string_view key) {
    const double d = parse_number(v, key);
    if (d != std::floor(d)) throw ConfigError("expected an integer for '" + std::string(key) + "'");
    return static_cast<long long>(d);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || have_stage) throw ConfigError("bad stage header on line " + std::to_string(lineno));
      try {
        c.stage = parse_stage(line.substr(1, line.size() - 2));
      } catch (const ContractError& e) {
        throw ConfigError(e.what());
      }
      have_stage = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value on line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'");
    if (key == "trainable") {
      std::istringstream parts(value);
      std::string t;
      while (std::getline(parts, t, ',')) c.trainable.insert(trim(t));
    } else if (key == "context_tokens") {
      c.context_tokens = static_cast<int>(as_int(value, key));
    } else if (key == "batch_size") {
      c.batch_size = static_cast<int>(as_int(value, key));
    } else if (key.starts_with("lr.")) {
      c.learning_rates[key.substr(3)] = parse_number(value, key);
    } else if (key == "lora.r") {
      if (!c.lora) c.lora.emplace();
      c.lora->rank = static_cast<int>(as_int(value, key));
    } else if (key == "lora.alpha") {
      if (!c.lora) c.lora.emplace();
      c.lora->alpha = static_cast<int>(as_int(value, key));
    } else if (key == "lora.dropout") {
      if (!c.lora) c.lora.emplace();
      c.lora->dropout = parse_number(value, key);
    } else if (key == "manifest.digest") {
      c.manifest_digest = value;
    } else if (key == "manifest.entries") {
      c.manifest_entries = static_cast<std::uint64_t>(as_int(value, key));
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  if (!have_stage) throw ConfigError("missing [stage] header");
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace vlmforge

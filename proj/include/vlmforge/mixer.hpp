#pragma once

// Instruction-mixture composition over a dataset registry, and the
// stage-wise training configuration documents derived from a manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmforge/corpus.hpp"
#include "vlmforge/errors.hpp"
#include "vlmforge/ingest.hpp"

namespace vlmforge {

struct ManifestEntry {
  std::string source;
  std::string id;
  Category category = Category::general;
  std::string language;

  auto operator<=>(const ManifestEntry&) const = default;
};

struct ManifestCounts {
  std::map<Category, std::uint64_t> by_category;
  std::map<std::string, std::uint64_t> by_language;
  std::map<Category, std::map<std::string, std::uint64_t>> by_category_language;
  std::uint64_t total = 0;

  bool operator==(const ManifestCounts&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;  // sorted
  std::optional<MixtureSpec> spec;
  ManifestCounts counts;
  std::string digest;

  // Fraction of entries in `language`; 0 for an empty manifest.
  double language_fraction(const std::string& language) const;
};

ManifestCounts count_entries(std::span<const ManifestEntry> entries);
std::string manifest_digest(std::span<const ManifestEntry> entries);

nlohmann::json to_json(const MixtureSpec& spec);
MixtureSpec mixture_spec_from_json(const nlohmann::json& j);  // throws ConfigError
MixtureSpec load_mixture_spec(const std::filesystem::path& path);

// Writes <dir>/manifest.jsonl and <dir>/manifest.summary.json.
void write_manifest(const Manifest& m, const std::filesystem::path& dir);
// Accepts the directory or the .jsonl path. Throws ContractError when the
// entries no longer match the recorded digest.
Manifest read_manifest(const std::filesystem::path& path);

// Splits a category target between adapted and original languages using
// largest-remainder rounding; ties go to the adapted side.
std::pair<std::uint64_t, std::uint64_t> split_target(std::uint64_t target, std::uint64_t adapted_parts,
                                                      std::uint64_t original_parts);

struct PoolEntry {
  ManifestEntry entry;
  double weight = 1.0;
};

// One candidate per accepted conversation in each registered source.
// Throws CompositionError when a source no longer matches its registry
// record.
std::vector<PoolEntry> load_pool(const DatasetRegistry& registry, const std::map<std::string, double>& weights);

// Seeded weighted sampling without replacement, keyed by (source, id) so the
// result does not depend on registry order. Throws CompositionError naming the
// category, language, requirement and availability on any shortfall.
Manifest compose_mixture(std::span<const PoolEntry> pool, const MixtureSpec& spec);
Manifest compose_mixture(const DatasetRegistry& registry, const MixtureSpec& spec);

// All pretrain-category entries, or a seeded subset of `limit` of them.
Manifest prepare_pretrain(std::span<const PoolEntry> pool, std::optional<std::uint64_t> limit, std::uint64_t seed);
Manifest prepare_pretrain(const DatasetRegistry& registry, std::optional<std::uint64_t> limit, std::uint64_t seed);

enum class Stage { pretrain, instruct };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);  // throws ContractError

struct LoraSettings {
  int rank = 128;
  int alpha = 256;
  double dropout = 0.05;
  bool operator==(const LoraSettings&) const = default;
};

struct TrainingConfig {
  Stage stage = Stage::pretrain;
  std::set<std::string> trainable;  // projector | vision | llm-adapters
  int context_tokens = 8192;
  int batch_size = 0;
  std::map<std::string, double> learning_rates;  // keyed by component
  std::optional<LoraSettings> lora;
  std::string manifest_digest;
  std::uint64_t manifest_entries = 0;

  void validate() const;  // throws ContractError
  bool operator==(const TrainingConfig&) const = default;
};

// Throws ContractError on an empty manifest.
TrainingConfig make_training_config(Stage stage, const Manifest& manifest);

// Flat "key = value" text under a [stage] header; comment lines start with '#'.
std::string render_training_config(const TrainingConfig& config);
TrainingConfig parse_training_config(std::string_view text);  // throws ConfigError

}  // namespace vlmforge

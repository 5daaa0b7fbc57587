#pragma once

// On-disk formats for conversation corpora and MC benchmarks, plus the dataset
// registry that records provenance (count and content digest) per source.
//
// Conversation JSONL, one object per line with sorted keys:
//   {"category":..,"conversations":[{"from":"human"|"gpt","value":..}],
//    "id":..,"image":..,"lang":..,"source":..}
// "image" is omitted for text-only records. Upstream LLaVA-style files that
// carry only {id, image, conversations} ingest unmodified; the missing
// provenance fields come from IngestOptions.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmforge/corpus.hpp"
#include "vlmforge/digest.hpp"
#include "vlmforge/templates.hpp"

namespace vlmforge {

struct QuarantineEntry {
  std::size_t line = 0;  // 1-based
  std::string raw;
  std::vector<std::string> reasons;
};

void write_quarantine(std::span<const QuarantineEntry> entries, const std::filesystem::path& path);

struct IngestOptions {
  std::string source;
  Category category = Category::general;
  std::string language = "en";
};

nlohmann::json to_json(const Conversation& c);
// Throws IngestError with a reason when the record is not decodable.
Conversation conversation_from_json(const nlohmann::json& j, const IngestOptions& defaults);
std::string canonical_line(const Conversation& c);

// Single-pass reader. Invalid or duplicate records are routed to the
// quarantine list and the stream continues.
class ConversationReader {
 public:
  ConversationReader(const std::filesystem::path& path, IngestOptions options);

  std::optional<Conversation> next();

  const std::vector<QuarantineEntry>& quarantine() const { return quarantine_; }
  std::size_t records_in() const { return records_in_; }
  std::size_t records_out() const { return records_out_; }

 private:
  std::ifstream in_;
  IngestOptions options_;
  std::vector<QuarantineEntry> quarantine_;
  std::map<std::string, std::size_t> seen_ids_;
  std::size_t line_ = 0;
  std::size_t records_in_ = 0;
  std::size_t records_out_ = 0;
};

struct ReadResult {
  std::vector<Conversation> conversations;
  std::vector<QuarantineEntry> quarantine;
  std::size_t records_in = 0;
};

ReadResult read_conversations(const std::filesystem::path& path, const IngestOptions& options);

struct WriteResult {
  std::size_t count = 0;
  std::string digest;
};

// Writes to a sibling temporary file and renames on finish(); a writer that
// is destroyed unfinished removes its partial output.
class ConversationWriter {
 public:
  explicit ConversationWriter(std::filesystem::path path);
  ~ConversationWriter();
  ConversationWriter(const ConversationWriter&) = delete;
  ConversationWriter& operator=(const ConversationWriter&) = delete;

  void write(const Conversation& c);
  WriteResult finish();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  Sha256 hash_;
  std::size_t count_ = 0;
  bool finished_ = false;
};

WriteResult write_conversations(std::span<const Conversation> conversations,
                                const std::filesystem::path& path);

// SHA-256 over the canonical serialization, one record per line.
std::string canonical_digest(std::span<const Conversation> conversations);

// MC benchmark JSONL: {"id","question","options":{"A":..},"answer","image","lang"}
// plus an optional "issue":{"code","note"}.
nlohmann::json to_json(const McItem& item);

struct McReadResult {
  std::vector<McItem> items;
  std::vector<QuarantineEntry> quarantine;
};

// Throws IngestError naming the id on a duplicate id.
McReadResult read_mc_items(const std::filesystem::path& path, LanguageVariant variant);
void write_mc_items(std::span<const McItem> items, const std::filesystem::path& path);

struct RegistryEntry {
  std::string root;
  int format_version = 1;
  Category category = Category::general;
  std::string language = "en";
  std::uint64_t count = 0;
  std::string digest;
  std::optional<double> tau;  // QE threshold used when adapting this source

  bool operator==(const RegistryEntry&) const = default;
};

inline constexpr double kDefaultTau = 0.6;

class DatasetRegistry {
 public:
  static DatasetRegistry load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Reads `root`, counts accepted records and digests them.
  const RegistryEntry& register_source(const std::string& name, const std::filesystem::path& root,
                                       Category category, const std::string& language);
  void put(const std::string& name, RegistryEntry entry);

  // Empty when the on-disk data still matches the recorded count and digest.
  std::vector<std::string> verify(const std::string& name) const;

  double tau_for(const std::string& name) const;
  const RegistryEntry& at(const std::string& name) const;
  const std::map<std::string, RegistryEntry>& entries() const { return entries_; }
  bool contains(const std::string& name) const { return entries_.contains(name); }

  // Relative roots resolve against this directory.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const RegistryEntry& e) const;

 private:
  std::map<std::string, RegistryEntry> entries_;
};

// WIT records: {"id","image","language","captions":[{"text","human_written"}]}.
// Keeps records in `language` with at least one human-written caption and
// turns each into a single-turn description conversation using the first
// such caption. `multi_caption_records` counts records carrying more than one.
struct WitConversion {
  std::vector<Conversation> conversations;
  std::vector<QuarantineEntry> quarantine;
  std::size_t skipped_language = 0;
  std::size_t skipped_no_human_caption = 0;
  std::size_t multi_caption_records = 0;
};

WitConversion convert_wit(const std::filesystem::path& path, const InstructionTemplates& templates,
                          const std::string& language, std::uint64_t seed);

// TallyQA records: {"id","image","question","answer"}; answer may be a
// number or a string. Produces English counting conversations ready for
// adaptation.
ReadResult convert_tallyqa(const std::filesystem::path& path, const std::string& source);

}  // namespace vlmforge

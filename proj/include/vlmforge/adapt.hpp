#pragma once

// Language adaptation: split conversations into QA pairs, translate both
// sides, score each side with reference-free QE, drop pairs where either
// side falls below the threshold, and reassemble what is left.

#include <array>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmforge/client.hpp"
#include "vlmforge/corpus.hpp"
#include "vlmforge/ingest.hpp"

namespace vlmforge {

inline constexpr double kRecommendedTauLow = 0.4;
inline constexpr double kRecommendedTauHigh = 0.8;

struct AdaptConfig {
  std::string source_language = "en";
  std::string target_language = "pl";
  double tau = kDefaultTau;
  std::string mt_endpoint;
  std::string qe_endpoint;
  std::string mt_model = "translator";
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  std::size_t checkpoint_interval = 1000;
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate() const;  // throws ConfigError
};

enum class AdaptEventKind { token_repair, score_clamped, pair_failed };
std::string_view to_string(AdaptEventKind k);

struct AdaptEvent {
  AdaptEventKind kind;
  std::string conversation_id;
  std::size_t pair_index = 0;
  std::string detail;
};

// Thread-safe event sink shared by pipeline workers.
class EventLog {
 public:
  void add(AdaptEvent e);
  std::vector<AdaptEvent> snapshot() const;
  std::size_t count(AdaptEventKind k) const;

 private:
  mutable std::mutex mu_;
  std::vector<AdaptEvent> events_;
};

inline constexpr std::size_t kHistogramBins = 20;

struct ScoreHistogram {
  std::array<std::uint64_t, kHistogramBins> bins{};
  void add(double score);  // score in [0,1]; 1.0 lands in the last bin
  std::uint64_t total() const;
  bool operator==(const ScoreHistogram&) const = default;
};

struct AdaptReport {
  std::uint64_t conversations_in = 0;
  std::uint64_t conversations_out = 0;
  std::uint64_t discarded_empty_dialogues = 0;
  std::uint64_t quarantined = 0;
  std::uint64_t pairs_in = 0;
  std::uint64_t pairs_kept = 0;
  std::uint64_t pairs_removed = 0;
  std::uint64_t pairs_failed = 0;  // subset of pairs_removed
  std::uint64_t token_repairs = 0;
  std::uint64_t scores_clamped = 0;
  ScoreHistogram question_scores;
  ScoreHistogram answer_scores;

  bool balanced() const;
  void merge(const AdaptReport& other);
  nlohmann::json to_json() const;
  static AdaptReport from_json(const nlohmann::json& j);
  bool operator==(const AdaptReport&) const = default;
};

// Pair i holds turns 2i and 2i+1. Throws ContractError on an invalid
// conversation.
std::vector<QAPair> decompose(const Conversation& c);

// Restores exactly one image token when the source side had one and strips
// stray tokens when it had none. Returns true if the text was changed.
bool repair_image_token(const std::string& source, std::string& translated);

QAPair translate_pair(const QAPair& pair, Translator& translator, const AdaptConfig& config,
                      EventLog* events = nullptr, const std::string& conversation_id = {});

QAPair score_pair(const QAPair& pair, Scorer& scorer, const AdaptConfig& config,
                  EventLog* events = nullptr, const std::string& conversation_id = {});

struct FilterResult {
  std::vector<QAPair> kept;
  std::vector<QAPair> removed;
};

// Keeps a pair iff min(qe_question, qe_answer) >= tau. Order-preserving.
FilterResult filter_pairs(std::span<const QAPair> pairs, double tau);

// Rebuilds a conversation from the kept pairs (indices strictly increasing
// and inside c). Translated text replaces the original where present and the
// language becomes `target_language` when given. Returns nothing when `kept`
// is empty. When the only image token was in a dropped pair it moves to the
// head of the first kept question.
std::optional<Conversation> reassemble(const Conversation& c, std::span<const QAPair> kept,
                                       const std::optional<std::string>& target_language = std::nullopt);

struct FailedPair {
  std::string conversation_id;
  std::size_t pair_index = 0;
  std::string error;
};

struct AdaptResult {
  std::vector<Conversation> output;
  AdaptReport report;
  std::vector<QuarantineEntry> quarantine;  // invalid input conversations
  std::vector<FailedPair> failed_pairs;
  std::vector<AdaptEvent> events;
};

// Runs the whole pipeline with at most max_in_flight conversations in
// flight. Output order follows input order. When checkpoint_dir is set,
// progress is persisted every checkpoint_interval conversations and a rerun
// resumes from the last completed chunk. An unreachable endpoint aborts the
// run with EndpointUnavailable after the retry policy is exhausted; work
// finished before the failing chunk stays checkpointed.
AdaptResult run_adaptation(std::span<const Conversation> input, const AdaptConfig& config,
                           Translator& translator, Scorer& scorer);

}  // namespace vlmforge

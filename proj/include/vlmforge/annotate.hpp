#pragma once

// Human pairwise annotation: pools of anonymised caption comparisons, one
// annotator per task, a shared calibration phase, and an append-only choice
// log that survives crashes.
//
// Pool document:
//   {"id": "pool-1",
//    "comparisons": [{"id": "cmp-1", "model_x": "...", "model_y": "..."}],
//    "tasks": [{"id": "t-001", "comparison": "cmp-1", "item_id": "...",
//               "image": "images/x.png", "caption_left": "...",
//               "caption_right": "...", "assignment": "left_is_a"}],
//    "calibration": [ tasks without "comparison" ]}
// caption_left belongs to model_x. A missing assignment is derived from a
// hash of the pool and task ids. Calibration tasks may also come from a
// separate file holding a JSON array of tasks.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmforge/arena.hpp"
#include "vlmforge/corpus.hpp"
#include "vlmforge/errors.hpp"

namespace vlmforge {

struct Comparison {
  std::string id;
  std::string model_x;
  std::string model_y;
};

struct AnnotationTask {
  std::string id;
  std::string comparison;  // empty for calibration tasks
  std::string item_id;
  std::string image_ref;
  std::string caption_left;
  std::string caption_right;
  Assignment assignment = Assignment::left_is_a;

  const std::string& caption_a() const { return assignment == Assignment::left_is_a ? caption_left : caption_right; }
  const std::string& caption_b() const { return assignment == Assignment::left_is_a ? caption_right : caption_left; }
};

struct AnnotationPool {
  std::string id;
  std::vector<Comparison> comparisons;
  std::vector<AnnotationTask> tasks;
  std::vector<AnnotationTask> calibration;
  std::filesystem::path base_dir;  // relative image refs resolve here

  static AnnotationPool from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static AnnotationPool load(const std::filesystem::path& path,
                             const std::optional<std::filesystem::path>& calibration_path = std::nullopt);

  std::set<std::string> model_names() const;
  const Comparison& comparison(const std::string& id) const;
};

// "name:token,name:token" as found in the environment.
std::map<std::string, std::string> parse_annotator_tokens(std::string_view spec);

// Contiguous blocks: annotator i of k gets tasks [i*n/k, (i+1)*n/k).
std::vector<std::pair<std::size_t, std::size_t>> partition_blocks(std::size_t n, std::size_t k);

struct HumanChoice {
  std::string session;
  std::string task;
  Choice linguistic = Choice::tie;
  Choice content = Choice::tie;
  bool calibration = false;
  std::string timestamp;

  bool same_payload(const HumanChoice& o) const {
    return task == o.task && linguistic == o.linguistic && content == o.content;
  }
};

// Append-only JSONL with one record per line, fsync'd before append returns.
// On open, a torn final line is discarded and the file rewritten without it.
class ChoiceLog {
 public:
  explicit ChoiceLog(std::filesystem::path path);
  ~ChoiceLog();
  ChoiceLog(const ChoiceLog&) = delete;
  ChoiceLog& operator=(const ChoiceLog&) = delete;

  const std::vector<nlohmann::json>& replayed() const { return replayed_; }
  std::size_t discarded_lines() const { return discarded_; }
  void append(const nlohmann::json& record);
  // Rewrites the log as exactly `records`, atomically.
  void compact(const std::vector<nlohmann::json>& records);
  const std::filesystem::path& path() const { return path_; }

 private:
  void open_for_append();
  std::filesystem::path path_;
  int fd_ = -1;
  std::vector<nlohmann::json> replayed_;
  std::size_t discarded_ = 0;
};

enum class SessionState { calibrating, active, done };
std::string_view to_string(SessionState s);

struct Session {
  std::string id;
  std::string annotator;
  std::vector<std::string> assigned;  // pool task ids, in order
  std::map<std::string, HumanChoice> completed;  // pool and calibration tasks
};

struct ServiceConfig {
  std::map<std::string, std::string> tokens;  // annotator -> bearer token
  std::string admin_token;
  std::filesystem::path state_dir;
  std::size_t expected_calibration = 10;
};

// Transport-independent service core; every method is serialized.
class AnnotationService {
 public:
  AnnotationService(AnnotationPool pool, ServiceConfig config);

  // Maps a bearer token to an annotator; throws AuthError.
  std::string authenticate(const std::string& bearer) const;
  bool is_admin(const std::string& bearer) const;

  nlohmann::json create_session(const std::string& annotator);
  nlohmann::json current_session(const std::string& annotator) const;
  nlohmann::json next_task(const std::string& annotator, const std::string& session_id) const;
  nlohmann::json submit_choice(const std::string& annotator, const std::string& session_id, const nlohmann::json& body);
  nlohmann::json report() const;

  // Absolute path for an image hash, if served.
  std::optional<std::filesystem::path> image_path(const std::string& hash) const;

  SessionState state_of(const std::string& session_id) const;
  std::vector<std::string> warnings() const { return warnings_; }
  const AnnotationPool& pool() const { return pool_; }
  std::size_t choices_recorded() const;

 private:
  SessionState state_locked(const Session& s) const;
  nlohmann::json task_view(const AnnotationTask& t, bool calibration) const;
  nlohmann::json session_json(const Session& s) const;
  Session& owned_session(const std::string& annotator, const std::string& session_id);
  const Session& owned_session(const std::string& annotator, const std::string& session_id) const;
  void apply(const nlohmann::json& record);

  AnnotationPool pool_;
  ServiceConfig config_;
  std::vector<std::string> annotators_;  // sorted
  std::map<std::string, std::size_t> task_index_;
  std::map<std::string, std::size_t> calibration_index_;
  std::map<std::string, std::string> image_hashes_;  // hash -> path
  std::map<std::string, std::string> task_image_;    // task id -> /images/<hash> or URL
  std::map<std::string, Session> sessions_;          // by id
  std::map<std::string, std::string> session_of_;    // annotator -> session id
  std::unique_ptr<ChoiceLog> log_;
  std::vector<std::string> warnings_;
  mutable std::mutex mu_;
};

// Aggregates a pool's non-calibration choices per comparison from raw
// records (session and choice lines as written to the log).
struct ComparisonReport {
  std::string comparison;
  std::uint64_t n = 0;
  PreferenceReport linguistic;
  PreferenceReport content;
};
std::vector<ComparisonReport> aggregate_choices(const AnnotationPool& pool, const std::vector<nlohmann::json>& records);
nlohmann::json to_json(const ComparisonReport& r);

// HTTP front end. Endpoints:
//   POST /sessions                  {} -> session for the caller
//   GET  /sessions/current          the caller's session
//   GET  /sessions/{id}/next        next task view, or state "done"
//   POST /sessions/{id}/choices     {"task","linguistic","content"}
//   GET  /pools/{id}/report         admin token only
//   GET  /images/{hash}
//   GET  /healthz
class AnnotationServer {
 public:
  AnnotationServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~AnnotationServer();

  // Binds and returns the port (pass 0 for an ephemeral one).
  int bind(const std::string& host, int port);
  void serve();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vlmforge

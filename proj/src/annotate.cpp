#include "vlmforge/annotate.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <sstream>

#include <httplib.h>

#include "vlmforge/digest.hpp"
#include "vlmforge/io.hpp"
#include "vlmforge/rng.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

constexpr std::string_view kLinguisticInstruction =
    "Który opis jest poprawniejszy językowo (gramatyka, ortografia, interpunkcja, naturalność)? "
    "Nie oceniaj zgodności z obrazem.";
constexpr std::string_view kContentInstruction =
    "Który opis lepiej oddaje treść obrazu (zgodność, brak halucynacji, kluczowe elementy)? "
    "Nie oceniaj poprawności językowej.";

bool is_url(std::string_view ref) {
  return ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:");
}

AnnotationTask task_from_json(const json& j, const std::string& pool_id) {
  AnnotationTask t;
  t.id = j.at("id").get<std::string>();
  t.comparison = j.value("comparison", std::string());
  t.item_id = j.value("item_id", t.id);
  t.image_ref = j.value("image", std::string());
  t.caption_left = j.at("caption_left").get<std::string>();
  t.caption_right = j.at("caption_right").get<std::string>();
  if (j.contains("assignment")) {
    t.assignment = parse_assignment(j["assignment"].get<std::string>());
  } else {
    t.assignment = (fnv1a64(pool_id + "\n" + t.id) & 1) ? Assignment::right_is_a : Assignment::left_is_a;
  }
  if (t.id.empty()) throw ConfigError("task with empty id");
  return t;
}

Choice parse_human_choice(const json& body, const char* key) {
  if (!body.contains(key) || !body[key].is_string()) {
    throw ContractError(std::string("both criteria are required; missing '") + key + "'");
  }
  const auto v = body[key].get<std::string>();
  if (v == "a") return Choice::a;
  if (v == "b") return Choice::b;
  if (v == "tie") return Choice::tie;
  throw ContractError(std::string("'") + key + "' must be a, b or tie");
}

void write_all(int fd, std::string_view data, const std::filesystem::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write " + path.string() + ": " + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void fsync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

void count(PreferenceReport& r, Winner w) {
  ++r.issued;
  if (w == Winner::left) {
    ++r.win_x;
  } else if (w == Winner::right) {
    ++r.win_y;
  } else {
    ++r.tie;
  }
}

json report_json(const PreferenceReport& r) {
  if (r.effective() > 0) return r.to_json();
  return json{{"effective", 0}, {"issued", r.issued}, {"tie", 0}, {"win_x", 0}, {"win_y", 0}};
}

}  // namespace

AnnotationPool AnnotationPool::from_json(const json& j, const std::filesystem::path& base_dir) {
  AnnotationPool p;
  p.base_dir = base_dir;
  try {
    p.id = j.at("id").get<std::string>();
    for (const auto& c : j.at("comparisons")) {
      p.comparisons.push_back({c.at("id").get<std::string>(), c.at("model_x").get<std::string>(),
                               c.at("model_y").get<std::string>()});
    }
    for (const auto& t : j.at("tasks")) p.tasks.push_back(task_from_json(t, p.id));
    if (j.contains("calibration")) {
      for (const auto& t : j["calibration"]) p.calibration.push_back(task_from_json(t, p.id));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid pool document: ") + e.what());
  }
  if (p.tasks.empty()) throw ConfigError("pool has no tasks");
  std::set<std::string> ids, cmp_ids;
  for (const auto& c : p.comparisons) {
    if (!cmp_ids.insert(c.id).second) throw ConfigError("duplicate comparison id " + c.id);
  }
  const auto names = p.model_names();
  auto check_anonymous = [&](const std::string& what, const std::string& value) {
    for (const auto& n : names) {
      if (!n.empty() && value.find(n) != std::string::npos) {
        throw ConfigError(what + " '" + value + "' reveals a model name");
      }
    }
  };
  for (const auto* list : {&p.tasks, &p.calibration}) {
    for (const auto& t : *list) {
      if (!ids.insert(t.id).second) throw ConfigError("duplicate task id " + t.id);
      check_anonymous("task id", t.id);
      check_anonymous("image reference", t.image_ref);
    }
  }
  for (const auto& t : p.tasks) {
    if (!cmp_ids.contains(t.comparison)) throw ConfigError("task " + t.id + " names unknown comparison '" + t.comparison + "'");
  }
  return p;
}

AnnotationPool AnnotationPool::load(const std::filesystem::path& path,
                                    const std::optional<std::filesystem::path>& calibration_path) {
  json j = read_json_file(path);
  if (calibration_path) {
    const json cal = read_json_file(*calibration_path);
    j["calibration"] = cal.is_array() ? cal : cal.at("calibration");
  }
  return from_json(j, path.parent_path());
}

std::set<std::string> AnnotationPool::model_names() const {
  std::set<std::string> names;
  for (const auto& c : comparisons) {
    names.insert(c.model_x);
    names.insert(c.model_y);
  }
  return names;
}

const Comparison& AnnotationPool::comparison(const std::string& id) const {
  for (const auto& c : comparisons) {
    if (c.id == id) return c;
  }
  throw NotFoundError("unknown comparison " + id);
}

std::map<std::string, std::string> parse_annotator_tokens(std::string_view spec) {
  std::map<std::string, std::string> out;
  std::string item;
  std::istringstream in{std::string(spec)};
  std::set<std::string> tokens;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    item = item.substr(first, item.find_last_not_of(" \t") - first + 1);
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
      throw ConfigError("annotator token entries must look like name:token");
    }
    const auto name = item.substr(0, colon);
    const auto token = item.substr(colon + 1);
    if (!out.emplace(name, token).second) throw ConfigError("annotator " + name + " listed twice");
    if (!tokens.insert(token).second) throw ConfigError("two annotators share a token");
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> partition_blocks(std::size_t n, std::size_t k) {
  if (k == 0) throw ConfigError("no annotators configured");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(i * n / k, (i + 1) * n / k);
  return out;
}

ChoiceLog::ChoiceLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  if (std::filesystem::exists(path_)) {
    const std::string data = read_file(path_);
    std::size_t pos = 0;
    while (pos < data.size()) {
      const auto nl = data.find('\n', pos);
      const bool last = nl == std::string::npos || nl + 1 == data.size();
      const std::string_view line(data.data() + pos, (nl == std::string::npos ? data.size() : nl) - pos);
      pos = nl == std::string::npos ? data.size() : nl + 1;
      if (line.empty()) continue;
      try {
        if (nl == std::string::npos) throw std::runtime_error("unterminated");
        replayed_.push_back(json::parse(line));
      } catch (const std::exception&) {
        if (!last) throw IoError("corrupt record inside " + path_.string());
        ++discarded_;
      }
    }
    if (discarded_ > 0) {
      compact(replayed_);
      return;
    }
  }
  open_for_append();
}

ChoiceLog::~ChoiceLog() {
  if (fd_ >= 0) ::close(fd_);
}

void ChoiceLog::open_for_append() {
  const bool existed = std::filesystem::exists(path_);
  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open " + path_.string() + ": " + std::strerror(errno));
  if (!existed) fsync_dir(path_.parent_path());
}

void ChoiceLog::append(const json& record) {
  const std::string line = canonical_dump(record) + "\n";
  write_all(fd_, line, path_);
  if (::fsync(fd_) != 0) throw IoError("fsync " + path_.string() + ": " + std::strerror(errno));
}

void ChoiceLog::compact(const std::vector<json>& records) {
  auto tmp = path_;
  tmp += ".compact";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + tmp.string() + ": " + std::strerror(errno));
  std::string body;
  for (const auto& r : records) body += canonical_dump(r) + "\n";
  write_all(fd, body, tmp);
  ::fsync(fd);
  ::close(fd);
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  std::filesystem::rename(tmp, path_);
  fsync_dir(path_.parent_path());
  replayed_ = records;
  open_for_append();
}

std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::calibrating: return "calibrating";
    case SessionState::active: return "active";
    case SessionState::done: return "done";
  }
  return "?";
}

AnnotationService::AnnotationService(AnnotationPool pool, ServiceConfig config)
    : pool_(std::move(pool)), config_(std::move(config)) {
  if (config_.tokens.empty()) throw ConfigError("no annotator tokens configured");
  for (const auto& [name, _] : config_.tokens) annotators_.push_back(name);
  for (std::size_t i = 0; i < pool_.tasks.size(); ++i) task_index_[pool_.tasks[i].id] = i;
  for (std::size_t i = 0; i < pool_.calibration.size(); ++i) calibration_index_[pool_.calibration[i].id] = i;
  if (pool_.calibration.size() != config_.expected_calibration) {
    warnings_.push_back("calibration set has " + std::to_string(pool_.calibration.size()) + " items, expected " +
                        std::to_string(config_.expected_calibration));
  }
  for (const auto* list : {&pool_.tasks, &pool_.calibration}) {
    for (const auto& t : *list) {
      if (t.image_ref.empty()) continue;
      if (is_url(t.image_ref)) {
        task_image_[t.id] = t.image_ref;
        continue;
      }
      auto p = std::filesystem::path(t.image_ref);
      if (p.is_relative()) p = pool_.base_dir / p;
      if (!std::filesystem::exists(p)) throw ConfigError("image not found for task " + t.id + ": " + p.string());
      const auto hash = sha256_file(p);
      image_hashes_[hash] = p.string();
      task_image_[t.id] = "/images/" + hash;
    }
  }
  const auto dir = config_.state_dir.empty() ? std::filesystem::path(".") : config_.state_dir;
  log_ = std::make_unique<ChoiceLog>(dir / (pool_.id + ".log"));
  for (const auto& r : log_->replayed()) apply(r);
  if (log_->discarded_lines() > 0) {
    warnings_.push_back("discarded " + std::to_string(log_->discarded_lines()) + " torn record(s) from " +
                        log_->path().string());
  }
}

std::string AnnotationService::authenticate(const std::string& bearer) const {
  if (!bearer.empty()) {
    for (const auto& [name, token] : config_.tokens) {
      if (token == bearer) return name;
    }
  }
  throw AuthError("missing or unknown bearer token");
}

bool AnnotationService::is_admin(const std::string& bearer) const {
  return !config_.admin_token.empty() && bearer == config_.admin_token;
}

void AnnotationService::apply(const json& r) {
  const auto type = r.at("type").get<std::string>();
  if (type == "session") {
    Session s;
    s.id = r.at("id").get<std::string>();
    s.annotator = r.at("annotator").get<std::string>();
    s.assigned = r.at("assigned").get<std::vector<std::string>>();
    session_of_[s.annotator] = s.id;
    sessions_[s.id] = std::move(s);
  } else if (type == "choice") {
    HumanChoice c;
    c.session = r.at("session").get<std::string>();
    c.task = r.at("task").get<std::string>();
    c.linguistic = parse_choice(r.at("linguistic").get<std::string>());
    c.content = parse_choice(r.at("content").get<std::string>());
    c.calibration = r.value("calibration", false);
    c.timestamp = r.value("ts", std::string());
    auto it = sessions_.find(c.session);
    if (it == sessions_.end()) throw IoError("choice record for unknown session " + c.session);
    it->second.completed.emplace(c.task, std::move(c));
  } else {
    throw IoError("unknown record type " + type);
  }
}

SessionState AnnotationService::state_locked(const Session& s) const {
  for (const auto& t : pool_.calibration) {
    if (!s.completed.contains(t.id)) return SessionState::calibrating;
  }
  for (const auto& id : s.assigned) {
    if (!s.completed.contains(id)) return SessionState::active;
  }
  return SessionState::done;
}

SessionState AnnotationService::state_of(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  return state_locked(it->second);
}

json AnnotationService::session_json(const Session& s) const {
  std::size_t done_pool = 0, done_cal = 0;
  for (const auto& [task, c] : s.completed) (c.calibration ? done_cal : done_pool) += 1;
  return json{{"session", s.id},
              {"annotator", s.annotator},
              {"state", to_string(state_locked(s))},
              {"progress", json{{"completed", done_pool},
                                {"assigned", s.assigned.size()},
                                {"calibration_completed", done_cal},
                                {"calibration_total", pool_.calibration.size()}}}};
}

json AnnotationService::create_session(const std::string& annotator) {
  std::lock_guard lock(mu_);
  if (auto it = session_of_.find(annotator); it != session_of_.end()) {
    throw ConflictError("annotator " + annotator + " already has session " + it->second);
  }
  const auto pos = std::find(annotators_.begin(), annotators_.end(), annotator);
  if (pos == annotators_.end()) throw AuthError("unknown annotator");
  const auto blocks = partition_blocks(pool_.tasks.size(), annotators_.size());
  const auto [begin, end] = blocks[static_cast<std::size_t>(pos - annotators_.begin())];
  std::set<std::string> taken;
  for (const auto& [id, s] : sessions_) taken.insert(s.assigned.begin(), s.assigned.end());
  std::vector<std::string> assigned;
  for (std::size_t i = begin; i < end; ++i) {
    if (!taken.contains(pool_.tasks[i].id)) assigned.push_back(pool_.tasks[i].id);
  }
  const std::string id = "s-" + sha256_hex(pool_.id + "\n" + annotator).substr(0, 16);
  json record{{"type", "session"}, {"id", id}, {"annotator", annotator}, {"assigned", assigned}, {"ts", utc_timestamp()}};
  log_->append(record);
  apply(record);
  return session_json(sessions_.at(id));
}

json AnnotationService::current_session(const std::string& annotator) const {
  std::lock_guard lock(mu_);
  auto it = session_of_.find(annotator);
  if (it == session_of_.end()) throw NotFoundError("no session for this annotator");
  return session_json(sessions_.at(it->second));
}

const Session& AnnotationService::owned_session(const std::string& annotator, const std::string& session_id) const {
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  if (it->second.annotator != annotator) throw ForbiddenError("session belongs to another annotator");
  return it->second;
}

Session& AnnotationService::owned_session(const std::string& annotator, const std::string& session_id) {
  return const_cast<Session&>(std::as_const(*this).owned_session(annotator, session_id));
}

json AnnotationService::task_view(const AnnotationTask& t, bool calibration) const {
  auto img = task_image_.find(t.id);
  return json{{"id", t.id},
              {"calibration", calibration},
              {"image_url", img == task_image_.end() ? json(nullptr) : json(img->second)},
              {"caption_a", t.caption_a()},
              {"caption_b", t.caption_b()}};
}

json AnnotationService::next_task(const std::string& annotator, const std::string& session_id) const {
  std::lock_guard lock(mu_);
  const Session& s = owned_session(annotator, session_id);
  json out = session_json(s);
  const auto state = state_locked(s);
  out["criteria"] = json{{"linguistic", kLinguisticInstruction}, {"content", kContentInstruction}};
  out["options"] = json::array({"a", "b", "tie"});
  if (state == SessionState::calibrating) {
    for (const auto& t : pool_.calibration) {
      if (!s.completed.contains(t.id)) {
        out["task"] = task_view(t, true);
        break;
      }
    }
  } else if (state == SessionState::active) {
    for (const auto& id : s.assigned) {
      if (!s.completed.contains(id)) {
        out["task"] = task_view(pool_.tasks[task_index_.at(id)], false);
        break;
      }
    }
  } else {
    out["task"] = nullptr;
  }
  return out;
}

json AnnotationService::submit_choice(const std::string& annotator, const std::string& session_id, const json& body) {
  std::lock_guard lock(mu_);
  Session& s = owned_session(annotator, session_id);
  if (!body.is_object() || !body.contains("task") || !body["task"].is_string()) {
    throw ContractError("body must be an object with a string 'task'");
  }
  HumanChoice c;
  c.session = s.id;
  c.task = body["task"].get<std::string>();
  c.linguistic = parse_human_choice(body, "linguistic");
  c.content = parse_human_choice(body, "content");
  c.calibration = calibration_index_.contains(c.task);
  if (!c.calibration && std::find(s.assigned.begin(), s.assigned.end(), c.task) == s.assigned.end()) {
    throw ForbiddenError("task " + c.task + " is not assigned to this session");
  }
  if (auto it = s.completed.find(c.task); it != s.completed.end()) {
    if (it->second.same_payload(c)) {
      json out = session_json(s);
      out["status"] = "duplicate";
      return out;
    }
    throw ConflictError("task " + c.task + " already answered with a different choice");
  }
  if (!c.calibration && state_locked(s) == SessionState::calibrating) {
    throw ConflictError("calibration must be completed before pool tasks");
  }
  c.timestamp = utc_timestamp();
  json record{{"type", "choice"},
              {"session", c.session},
              {"task", c.task},
              {"linguistic", to_string(c.linguistic)},
              {"content", to_string(c.content)},
              {"calibration", c.calibration},
              {"ts", c.timestamp}};
  log_->append(record);
  s.completed.emplace(c.task, std::move(c));
  json out = session_json(s);
  out["status"] = "recorded";
  return out;
}

std::size_t AnnotationService::choices_recorded() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [id, s] : sessions_) n += s.completed.size();
  return n;
}

json AnnotationService::report() const {
  std::vector<json> records;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : sessions_) {
      for (const auto& [task, c] : s.completed) {
        records.push_back(json{{"type", "choice"},
                               {"session", c.session},
                               {"task", c.task},
                               {"linguistic", to_string(c.linguistic)},
                               {"content", to_string(c.content)},
                               {"calibration", c.calibration}});
      }
    }
  }
  json comps = json::array();
  for (const auto& r : aggregate_choices(pool_, records)) comps.push_back(to_json(r));
  return json{{"pool", pool_.id}, {"comparisons", comps}};
}

std::optional<std::filesystem::path> AnnotationService::image_path(const std::string& hash) const {
  auto it = image_hashes_.find(hash);
  if (it == image_hashes_.end()) return std::nullopt;
  return std::filesystem::path(it->second);
}

std::vector<ComparisonReport> aggregate_choices(const AnnotationPool& pool, const std::vector<json>& records) {
  std::map<std::string, const AnnotationTask*> tasks;
  for (const auto& t : pool.tasks) tasks[t.id] = &t;
  std::map<std::string, ComparisonReport> by_cmp;
  for (const auto& c : pool.comparisons) by_cmp[c.id].comparison = c.id;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.value("type", std::string()) != "choice" || r.value("calibration", false)) continue;
    const auto task_id = r.at("task").get<std::string>();
    auto it = tasks.find(task_id);
    if (it == tasks.end() || !seen.insert(task_id).second) continue;
    const AnnotationTask& t = *it->second;
    ComparisonReport& rep = by_cmp[t.comparison];
    ++rep.n;
    count(rep.linguistic, resolve_winner(t.assignment, parse_choice(r.at("linguistic").get<std::string>())));
    count(rep.content, resolve_winner(t.assignment, parse_choice(r.at("content").get<std::string>())));
  }
  std::vector<ComparisonReport> out;
  for (auto& [id, rep] : by_cmp) out.push_back(std::move(rep));
  return out;
}

json to_json(const ComparisonReport& r) {
  return json{{"comparison", r.comparison},
              {"n", r.n},
              {"linguistic", report_json(r.linguistic)},
              {"content", report_json(r.content)}};
}

struct AnnotationServer::Impl {
  AnnotationService& service;
  httplib::Server server;
  explicit Impl(AnnotationService& s) : service(s) {}
};

namespace {

std::string bearer_of(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view kPrefix = "Bearer ";
  return h.starts_with(kPrefix) ? h.substr(kPrefix.size()) : std::string();
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    send(res, 200, fn());
  } catch (const AuthError& e) {
    send(res, 401, json{{"error", "unauthorized"}, {"detail", e.what()}});
  } catch (const ForbiddenError& e) {
    send(res, 403, json{{"error", "forbidden"}, {"detail", e.what()}});
  } catch (const NotFoundError& e) {
    send(res, 404, json{{"error", "not_found"}, {"detail", e.what()}});
  } catch (const ConflictError& e) {
    send(res, 409, json{{"error", "conflict"}, {"detail", e.what()}});
  } catch (const ContractError& e) {
    send(res, 400, json{{"error", "bad_request"}, {"detail", e.what()}});
  } catch (const json::exception& e) {
    send(res, 400, json{{"error", "bad_request"}, {"detail", e.what()}});
  } catch (const std::exception& e) {
    send(res, 500, json{{"error", "internal"}, {"detail", e.what()}});
  }
}

std::string content_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "application/octet-stream";
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;
  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send(res, 200, json{{"ok", true}}); });
  srv.Post("/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.create_session(svc.authenticate(bearer_of(req))); });
  });
  srv.Get("/sessions/current", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.current_session(svc.authenticate(bearer_of(req))); });
  });
  srv.Get(R"(/sessions/([^/]+)/next)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.next_task(svc.authenticate(bearer_of(req)), req.matches[1].str()); });
  });
  srv.Post(R"(/sessions/([^/]+)/choices)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto who = svc.authenticate(bearer_of(req));
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        throw ContractError(std::string("body is not JSON: ") + e.what());
      }
      return svc.submit_choice(who, req.matches[1].str(), body);
    });
  });
  srv.Get(R"(/pools/([^/]+)/report)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!svc.is_admin(bearer_of(req))) throw AuthError("report requires the admin token");
      if (req.matches[1].str() != svc.pool().id) throw NotFoundError("unknown pool");
      return svc.report();
    });
  });
  srv.Get(R"(/images/([0-9a-f]{64}))", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto path = svc.image_path(req.matches[1].str());
    if (!path) {
      send(res, 404, json{{"error", "not_found"}});
      return;
    }
    res.set_content(read_file(*path), content_type_for(*path));
  });
  if (static_dir) srv.set_mount_point("/", static_dir->string());
}

AnnotationServer::~AnnotationServer() = default;

int AnnotationServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int p = srv.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!srv.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void AnnotationServer::serve() { impl_->server.listen_after_bind(); }

void AnnotationServer::stop() { impl_->server.stop(); }

}  // namespace vlmforge

#pragma once

// Annotation service: task ingestion, per-worker sessions with write-ahead
// JSON-lines logs, and map export. AnnotationService holds the logic and
// the on-disk store; HttpServer maps it onto the /v1 HTTP+JSON API.
//
// Store layout under the data directory:
//   images/<image_id>.png   uploaded image bytes
//   tasks/<task_id>.json    immutable task record
//   logs/<session_id>.jsonl session event log (header + answers)
//   maps/<task_id>.{csv,png,json}  last exported map

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "punchhole/aggregate.hpp"
#include "punchhole/event_log.hpp"
#include "punchhole/session.hpp"

namespace httplib {
class Server;
}

namespace punchhole::service {

/// Carries the HTTP status the API layer should answer with.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct TaskConfig {
  int base_patch_side = 16;
  int max_level = 0;
  SchedulerPolicy policy = SequentialPolicy{};
  bool multi_pass = false;
};

nlohmann::json task_config_to_json(const TaskConfig& config);
/// Missing fields keep their defaults; malformed ones throw InvalidArgument.
TaskConfig task_config_from_json(const nlohmann::json& j);

struct TaskRecord {
  std::string task_id;
  ImageRef image;
  std::string question;
  TaskConfig config;
  std::string status = "open";
  Timestamp created_at{};
};

nlohmann::json task_to_json(const TaskRecord& task);

/// What a worker sees after opening a session or answering.
struct StepView {
  std::string session_id;
  SessionStatus status = SessionStatus::Active;
  /// Set while the session is active.
  std::optional<Stimulus> stimulus;
  std::size_t questions = 0;
  /// True when the answer finished a level and the service refined it.
  bool level_advanced = false;
};

nlohmann::json step_to_json(const StepView& step);

struct MapResult {
  ImportanceMap map;
  AgreementReport agreement;
  std::vector<std::string> sessions;
};

nlohmann::json map_to_json(const MapResult& result);

class AnnotationService {
 public:
  /// Opens (creating if needed) the store and replays every session log.
  explicit AnnotationService(std::filesystem::path data_dir);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  const std::filesystem::path& data_dir() const { return data_dir_; }

  /// 400 on an undecodable image or an invalid config.
  TaskRecord create_task(std::span<const std::uint8_t> png, std::string question, const TaskConfig& config);
  std::optional<TaskRecord> task(const std::string& task_id) const;
  std::vector<TaskRecord> tasks() const;

  /// 404 on an unknown task.
  StepView open_session(const std::string& task_id, const std::string& worker_id);
  /// Current stimulus, idempotent. 404 on an unknown session.
  StepView current(const std::string& session_id) const;
  /// Applies an answer to the pending group. `seq` is the answered count the
  /// client saw; a stale value is rejected with 409 like a missing pending
  /// group. The answer is durable before this returns.
  StepView answer(const std::string& session_id, Response response, double latency_s,
                  std::optional<std::size_t> seq = std::nullopt);

  /// Merges the task's finished sessions and caches CSV/PNG/JSON exports
  /// under maps/. 404 unknown task, 409 nothing finished yet.
  MapResult get_map(const std::string& task_id, double tau);

  /// Raw PNG bytes of an uploaded image; 404 if unknown.
  std::vector<std::uint8_t> image_bytes(const std::string& image_id) const;

  /// Copy of a session's state, taken under its lock.
  std::optional<Session> session_state(const std::string& session_id) const;
  std::vector<std::string> session_ids() const;

 private:
  struct Slot {
    std::string task_id;
    std::string worker_id;
    mutable std::mutex mutex;
    Session session;
    LogWriter log;

    Slot(std::string task, std::string worker, Session s, LogWriter w)
        : task_id(std::move(task)), worker_id(std::move(worker)), session(std::move(s)), log(std::move(w)) {}
  };

  std::string new_id(const char* prefix);
  std::shared_ptr<Slot> find_slot(const std::string& session_id) const;
  static bool settle(Session& session);
  static StepView view(const std::string& id, const Session& session, bool level_advanced);
  void load();

  std::filesystem::path data_dir_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, TaskRecord> tasks_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::mutex id_mutex_;
  std::uint64_t id_state_;
  std::mutex export_mutex_;
};

/// /v1 HTTP+JSON front end for an AnnotationService.
class HttpServer {
 public:
  explicit HttpServer(AnnotationService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves until stop(); returns false if the port is taken.
  bool listen(const std::string& host, int port);
  /// Binds to a free port and returns it, or -1.
  int bind_any_port(const std::string& host);
  /// Serves on a socket bound by bind_any_port; blocks until stop().
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  void install_routes();

  AnnotationService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace punchhole::service

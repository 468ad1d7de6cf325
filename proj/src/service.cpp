#include "punchhole/service.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

#include "httplib.h"
#include "punchhole/errors.hpp"
#include "punchhole/io.hpp"
#include "punchhole/rng.hpp"

namespace punchhole::service {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Timestamp now_ms() {
  return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json rect_json(const PixelRect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

json patch_list(std::span<const PatchId> ids) {
  json out = json::array();
  for (const auto& id : ids) out.push_back({id.row, id.col});
  return out;
}

TaskRecord task_from_json(const json& j) {
  TaskRecord t;
  t.task_id = j.at("task_id").get<std::string>();
  const auto& image = j.at("image");
  t.image = {image.at("id").get<std::string>(), image.at("width").get<int>(), image.at("height").get<int>(),
             image.value("source", std::string{})};
  t.question = j.at("question").get<std::string>();
  t.config = task_config_from_json(j.at("config"));
  t.status = j.value("status", std::string("open"));
  t.created_at = parse_timestamp(j.at("created_at").get<std::string>());
  return t;
}

SessionConfig session_config(const TaskRecord& task, const std::string& session_id) {
  SessionConfig c;
  c.id = session_id;
  c.image = task.image;
  c.question = task.question;
  c.base_patch_side = task.config.base_patch_side;
  c.max_level = task.config.max_level;
  c.policy = task.config.policy;
  c.multi_pass = task.config.multi_pass;
  return c;
}

}  // namespace

json task_config_to_json(const TaskConfig& config) {
  return {{"base_patch_side", config.base_patch_side},
          {"max_level", config.max_level},
          {"policy", policy_to_json(config.policy)},
          {"multi_pass", config.multi_pass}};
}

TaskConfig task_config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  TaskConfig c;
  try {
    c.base_patch_side = j.value("base_patch_side", c.base_patch_side);
    c.max_level = j.value("max_level", c.max_level);
    if (j.contains("policy")) c.policy = policy_from_json(j.at("policy"));
    c.multi_pass = j.value("multi_pass", c.multi_pass);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad config: ") + e.what());
  }
  return c;
}

json task_to_json(const TaskRecord& task) {
  return {{"task_id", task.task_id},
          {"image",
           {{"id", task.image.id},
            {"width", task.image.width},
            {"height", task.image.height},
            {"source", task.image.source}}},
          {"question", task.question},
          {"config", task_config_to_json(task.config)},
          {"status", task.status},
          {"created_at", format_timestamp(task.created_at)}};
}

json step_to_json(const StepView& step) {
  json j{{"session_id", step.session_id},
         {"status", std::string(to_string(step.status))},
         {"questions", step.questions},
         {"level_advanced", step.level_advanced}};
  if (step.stimulus) {
    const auto& s = *step.stimulus;
    json hidden = json::array();
    for (const auto& r : s.hidden) hidden.push_back(rect_json(r));
    j["image_url"] = "/v1/images/" + s.image.id;
    j["question"] = s.question;
    j["level"] = s.level;
    j["seq"] = s.answered;
    j["punched"] = patch_list(s.punched);
    j["hidden"] = std::move(hidden);
    j["progress"] = {{"answered", s.answered},
                     {"total", s.projected_total ? json(*s.projected_total) : json(nullptr)}};
  }
  return j;
}

json map_to_json(const MapResult& result) {
  const auto& m = result.map;
  json scores = json::array();
  for (std::size_t i = 0; i < m.scores.size(); ++i) {
    const PatchId id = m.grid.id_at(i);
    json entry{{"row", id.row}, {"col", id.col}, {"score", m.scores[i]}};
    entry.update(rect_json(m.grid.rect(id)));
    scores.push_back(std::move(entry));
  }
  const auto& a = result.agreement;
  return {{"level", m.grid.level},
          {"patch_side", m.grid.patch_side},
          {"rows", m.grid.rows},
          {"cols", m.grid.cols},
          {"n_workers", m.n_workers},
          {"sessions", result.sessions},
          {"scores", std::move(scores)},
          {"agreement",
           {{"tau", a.tau},
            {"consensus_important", patch_list(a.consensus_important)},
            {"consensus_unimportant", patch_list(a.consensus_unimportant)},
            {"controversial", patch_list(a.controversial)}}}};
}

AnnotationService::AnnotationService(fs::path data_dir) : data_dir_(std::move(data_dir)) {
  std::random_device rd;
  id_state_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
              static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
  for (const char* sub : {"images", "tasks", "logs", "maps"}) fs::create_directories(data_dir_ / sub);
  load();
}

AnnotationService::~AnnotationService() = default;

std::string AnnotationService::new_id(const char* prefix) {
  std::lock_guard lock(id_mutex_);
  SplitMix64 rng(id_state_);
  id_state_ = rng.next();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng.next()));
  return std::string(prefix) + buf;
}

bool AnnotationService::settle(Session& session) {
  bool advanced = false;
  while (session.status() == SessionStatus::LevelComplete) {
    session.advance_level();
    advanced = true;
  }
  if (session.status() == SessionStatus::Active) session.next_stimulus();
  return advanced;
}

StepView AnnotationService::view(const std::string& id, const Session& session, bool level_advanced) {
  return {id, session.status(), session.current_stimulus(), session.question_count(), level_advanced};
}

void AnnotationService::load() {
  for (const auto& entry : fs::directory_iterator(data_dir_ / "tasks")) {
    if (entry.path().extension() != ".json") continue;
    auto task = task_from_json(json::parse(read_file(entry.path())));
    tasks_.emplace(task.task_id, std::move(task));
  }
  for (const auto& entry : fs::directory_iterator(data_dir_ / "logs")) {
    if (entry.path().extension() != ".jsonl") continue;
    SessionLog log = read_log(entry.path());
    const auto task_id = log.header.value("task_id", std::string{});
    const auto worker_id = log.header.value("worker_id", std::string{});
    Session session = Session::replay(log.config, log.answers, /*auto_advance=*/true);
    settle(session);
    LogWriter writer(entry.path(), encode_header(log.config, {{"task_id", task_id}, {"worker_id", worker_id}}));
    sessions_.emplace(log.config.id,
                      std::make_shared<Slot>(task_id, worker_id, std::move(session), std::move(writer)));
  }
}

TaskRecord AnnotationService::create_task(std::span<const std::uint8_t> png, std::string question,
                                          const TaskConfig& config) {
  io::GrayImage decoded;
  try {
    decoded = io::decode_png(png);
  } catch (const InvalidArgument& e) {
    throw ServiceError(400, e.what());
  }
  TaskRecord task;
  task.task_id = new_id("t-");
  task.image = {new_id("img-"), decoded.width, decoded.height, ""};
  task.image.source = "images/" + task.image.id + ".png";
  task.question = std::move(question);
  task.config = config;
  task.created_at = now_ms();
  try {
    Session probe(session_config(task, "probe"));
  } catch (const InvalidArgument& e) {
    throw ServiceError(400, std::string("invalid config: ") + e.what());
  }
  write_file_atomic(data_dir_ / task.image.source,
                    std::string(reinterpret_cast<const char*>(png.data()), png.size()));
  write_file_atomic(data_dir_ / "tasks" / (task.task_id + ".json"), task_to_json(task).dump(2));
  std::unique_lock lock(registry_mutex_);
  tasks_.emplace(task.task_id, task);
  return task;
}

std::optional<TaskRecord> AnnotationService::task(const std::string& task_id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  return it->second;
}

std::vector<TaskRecord> AnnotationService::tasks() const {
  std::shared_lock lock(registry_mutex_);
  std::vector<TaskRecord> out;
  for (const auto& [_, t] : tasks_) out.push_back(t);
  return out;
}

std::shared_ptr<AnnotationService::Slot> AnnotationService::find_slot(const std::string& session_id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session " + session_id);
  return it->second;
}

StepView AnnotationService::open_session(const std::string& task_id, const std::string& worker_id) {
  const auto t = task(task_id);
  if (!t) throw ServiceError(404, "unknown task " + task_id);
  const std::string session_id = new_id("s-");
  const SessionConfig config = session_config(*t, session_id);
  Session session(config);
  LogWriter writer(data_dir_ / "logs" / (session_id + ".jsonl"),
                   encode_header(config, {{"task_id", task_id}, {"worker_id", worker_id}}));
  const bool advanced = settle(session);
  auto slot = std::make_shared<Slot>(task_id, worker_id, std::move(session), std::move(writer));
  StepView step = view(session_id, slot->session, advanced);
  std::unique_lock lock(registry_mutex_);
  sessions_.emplace(session_id, std::move(slot));
  return step;
}

StepView AnnotationService::current(const std::string& session_id) const {
  auto slot = find_slot(session_id);
  std::lock_guard lock(slot->mutex);
  return view(session_id, slot->session, false);
}

StepView AnnotationService::answer(const std::string& session_id, Response response, double latency_s,
                                   std::optional<std::size_t> seq) {
  auto slot = find_slot(session_id);
  std::lock_guard lock(slot->mutex);
  Session& session = slot->session;
  if (session.status() == SessionStatus::Done) throw ServiceError(409, "session is finished");
  if (!session.has_pending()) throw ServiceError(409, "no punch group is pending");
  if (seq && *seq != session.question_count()) {
    throw ServiceError(409, "answer is for question " + std::to_string(*seq) + " but question " +
                                std::to_string(session.question_count()) + " is pending");
  }
  if (!(latency_s >= 0.0)) throw ServiceError(400, "latency_s must be a non-negative number");

  Answer a;
  a.worker_id = slot->worker_id;
  a.level = session.level();
  a.punched = session.pending();
  a.response = response;
  a.latency_s = latency_s;
  a.at = now_ms();
  // Write-ahead: the answer is on disk before the state changes.
  slot->log.append(encode_answer(a));
  session.submit_answer(a);
  const bool advanced = settle(session);
  return view(session_id, session, advanced);
}

MapResult AnnotationService::get_map(const std::string& task_id, double tau) {
  if (!task(task_id)) throw ServiceError(404, "unknown task " + task_id);
  std::vector<std::pair<std::string, std::shared_ptr<Slot>>> slots;
  {
    std::shared_lock lock(registry_mutex_);
    for (const auto& [id, slot] : sessions_) {
      if (slot->task_id == task_id) slots.emplace_back(id, slot);
    }
  }
  std::vector<Session> done;
  MapResult result;
  for (const auto& [id, slot] : slots) {
    std::lock_guard lock(slot->mutex);
    if (slot->session.status() == SessionStatus::Done) {
      done.push_back(slot->session);
      result.sessions.push_back(id);
    }
  }
  if (done.empty()) throw ServiceError(409, "task has no completed sessions");
  try {
    result.map = merge_sessions(std::span<const Session>(done));
    result.agreement = agreement(result.map, tau);
  } catch (const InvalidArgument& e) {
    throw ServiceError(400, e.what());
  }

  std::lock_guard export_lock(export_mutex_);
  const fs::path base = data_dir_ / "maps" / task_id;
  io::write_scores_csv(fs::path(base.string() + ".csv"), result.map);
  std::map<PatchId, double> patches;
  for (std::size_t i = 0; i < result.map.scores.size(); ++i) {
    patches[result.map.grid.id_at(i)] = result.map.scores[i];
  }
  const ImageRef image{task_id, result.map.grid.width, result.map.grid.height, ""};
  io::write_png(fs::path(base.string() + ".png"),
                io::quantize(rasterize_patches(patches, result.map.grid, image)));
  write_file_atomic(fs::path(base.string() + ".json"), map_to_json(result).dump());
  return result;
}

std::vector<std::uint8_t> AnnotationService::image_bytes(const std::string& image_id) const {
  if (image_id.find('/') != std::string::npos || image_id.find("..") != std::string::npos) {
    throw ServiceError(404, "unknown image");
  }
  const fs::path path = data_dir_ / "images" / (image_id + ".png");
  if (!fs::exists(path)) throw ServiceError(404, "unknown image " + image_id);
  const std::string bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

std::optional<Session> AnnotationService::session_state(const std::string& session_id) const {
  std::shared_ptr<Slot> slot;
  {
    std::shared_lock lock(registry_mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return std::nullopt;
    slot = it->second;
  }
  std::lock_guard lock(slot->mutex);
  return slot->session;
}

std::vector<std::string> AnnotationService::session_ids() const {
  std::shared_lock lock(registry_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const InvalidArgument& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

HttpServer::HttpServer(AnnotationService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& s = *server_;

  s.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  s.Post("/v1/tasks", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::string image, question, config_text;
    if (req.is_multipart_form_data()) {
      if (req.has_file("image")) image = req.get_file_value("image").content;
      if (req.has_file("question")) question = req.get_file_value("question").content;
      if (req.has_file("config")) config_text = req.get_file_value("config").content;
    } else {
      // Raw PNG body; question and config travel as query parameters.
      image = req.body;
      question = req.get_param_value("question");
      config_text = req.get_param_value("config");
    }
    if (image.empty()) throw ServiceError(400, "empty image upload");
    TaskConfig config;
    if (!config_text.empty()) {
      try {
        config = task_config_from_json(json::parse(config_text));
      } catch (const json::exception& e) {
        throw ServiceError(400, std::string("bad config: ") + e.what());
      }
    }
    const auto task = service_.create_task(
        std::span(reinterpret_cast<const std::uint8_t*>(image.data()), image.size()), question, config);
    send_json(res, 201, task_to_json(task));
  }));

  s.Get(R"(/v1/tasks/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto task = service_.task(req.matches[1]);
    if (!task) throw ServiceError(404, "unknown task " + std::string(req.matches[1]));
    send_json(res, 200, task_to_json(*task));
  }));

  s.Post(R"(/v1/tasks/([^/]+)/sessions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = body_json(req);
    const auto worker = body.value("worker_id", std::string("anonymous"));
    send_json(res, 200, step_to_json(service_.open_session(req.matches[1], worker)));
  }));

  s.Get(R"(/v1/tasks/([^/]+)/map)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    double tau = 0.8;
    if (req.has_param("tau")) {
      try {
        tau = std::stod(req.get_param_value("tau"));
      } catch (const std::exception&) {
        throw ServiceError(400, "tau must be a number");
      }
    }
    send_json(res, 200, map_to_json(service_.get_map(req.matches[1], tau)));
  }));

  s.Get(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, step_to_json(service_.current(req.matches[1])));
  }));

  s.Post(R"(/v1/sessions/([^/]+)/answer)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = body_json(req);
    const auto token = body.value("response", std::string{});
    Response response;
    if (token == "can") {
      response = Response::CanAnswer;
    } else if (token == "cannot") {
      response = Response::CannotAnswer;
    } else {
      throw ServiceError(400, "response must be \"can\" or \"cannot\"");
    }
    const auto& latency = body.contains("latency_s") ? body.at("latency_s") : json(0.0);
    if (!latency.is_number()) throw ServiceError(400, "latency_s must be a number");
    std::optional<std::size_t> seq;
    if (body.contains("seq")) {
      if (!body.at("seq").is_number_unsigned()) throw ServiceError(400, "seq must be a non-negative integer");
      seq = body.at("seq").get<std::size_t>();
    }
    send_json(res, 200, step_to_json(service_.answer(req.matches[1], response, latency.get<double>(), seq)));
  }));

  s.Get(R"(/v1/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto bytes = service_.image_bytes(req.matches[1]);
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }));
}

bool HttpServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

int HttpServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace punchhole::service

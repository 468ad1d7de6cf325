#include "punchhole/event_log.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "punchhole/errors.hpp"

namespace punchhole {

using nlohmann::json;

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss<milliseconds> tod{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                static_cast<int>(tod.seconds().count()), static_cast<int>(tod.subseconds().count()));
  return buf;
}

Timestamp parse_timestamp(const std::string& text) {
  using namespace std::chrono;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6) {
    throw InvalidArgument("malformed timestamp '" + text + "'");
  }
  std::size_t pos = static_cast<std::size_t>(consumed);
  int millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 3) millis = millis * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) throw InvalidArgument("malformed timestamp '" + text + "'");
    for (; digits < 3; ++digits) millis *= 10;
  }
  if (pos + 1 != text.size() || text[pos] != 'Z') {
    throw InvalidArgument("timestamp '" + text + "' must be UTC with a trailing Z");
  }
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
    throw InvalidArgument("timestamp '" + text + "' is out of range");
  }
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{millis};
}

json policy_to_json(const SchedulerPolicy& policy) {
  json j{{"kind", std::string(policy_name(policy))}};
  if (const auto* p = std::get_if<ShuffledPolicy>(&policy)) j["seed"] = p->seed;
  if (const auto* p = std::get_if<GroupTestingPolicy>(&policy)) {
    j["seed"] = p->seed;
    j["max_group"] = p->max_group;
  }
  return j;
}

SchedulerPolicy policy_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "seq") return SequentialPolicy{};
  if (kind == "shuf") return ShuffledPolicy{j.value("seed", std::uint64_t{0})};
  if (kind == "group") {
    return GroupTestingPolicy{j.value("seed", std::uint64_t{0}), j.value("max_group", 8)};
  }
  throw InvalidArgument("unknown scheduler policy '" + kind + "'");
}

json config_to_json(const SessionConfig& config) {
  return json{{"session_id", config.id},
              {"image",
               {{"id", config.image.id},
                {"width", config.image.width},
                {"height", config.image.height},
                {"source", config.image.source}}},
              {"question", config.question},
              {"base_patch_side", config.base_patch_side},
              {"max_level", config.max_level},
              {"policy", policy_to_json(config.policy)},
              {"multi_pass", config.multi_pass}};
}

SessionConfig config_from_json(const json& j) {
  SessionConfig c;
  c.id = j.at("session_id").get<std::string>();
  const auto& image = j.at("image");
  c.image.id = image.at("id").get<std::string>();
  c.image.width = image.at("width").get<int>();
  c.image.height = image.at("height").get<int>();
  c.image.source = image.value("source", std::string{});
  c.question = j.at("question").get<std::string>();
  c.base_patch_side = j.at("base_patch_side").get<int>();
  c.max_level = j.at("max_level").get<int>();
  c.policy = policy_from_json(j.at("policy"));
  c.multi_pass = j.value("multi_pass", false);
  return c;
}

std::string encode_header(const SessionConfig& config, const json& extra) {
  json j = config_to_json(config);
  for (const auto& [key, value] : extra.items()) j[key] = value;
  return j.dump();
}

std::string encode_answer(const Answer& answer) {
  json punched = json::array();
  for (const auto& id : answer.punched) punched.push_back({id.row, id.col});
  return json{{"worker_id", answer.worker_id},
              {"level", answer.level},
              {"punched", std::move(punched)},
              {"response", answer.response == Response::CanAnswer ? "can" : "cannot"},
              {"latency_s", answer.latency_s},
              {"at", format_timestamp(answer.at)}}
      .dump();
}

Answer decode_answer(const std::string& line) {
  const json j = json::parse(line);
  Answer a;
  a.worker_id = j.at("worker_id").get<std::string>();
  a.level = j.at("level").get<int>();
  for (const auto& pair : j.at("punched")) {
    a.punched.push_back({a.level, pair.at(0).get<int>(), pair.at(1).get<int>()});
  }
  const auto response = j.at("response").get<std::string>();
  if (response == "can") {
    a.response = Response::CanAnswer;
  } else if (response == "cannot") {
    a.response = Response::CannotAnswer;
  } else {
    throw InvalidArgument("response must be \"can\" or \"cannot\", got '" + response + "'");
  }
  a.latency_s = j.at("latency_s").get<double>();
  a.at = parse_timestamp(j.at("at").get<std::string>());
  return a;
}

SessionLog read_log(std::istream& in) {
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // Drop an interrupted trailing append.
  const auto last_newline = content.rfind('\n');
  content.resize(last_newline == std::string::npos ? 0 : last_newline + 1);

  std::istringstream lines(content);
  std::string line;
  SessionLog log;
  bool have_header = false;
  std::size_t index = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    try {
      if (!have_header) {
        log.header = json::parse(line);
        log.config = config_from_json(log.header);
        have_header = true;
      } else {
        log.answers.push_back(decode_answer(line));
        ++index;
      }
    } catch (const json::exception& e) {
      throw ReplayError(index, std::string("malformed log record: ") + e.what());
    } catch (const InvalidArgument& e) {
      throw ReplayError(index, e.what());
    }
  }
  if (!have_header) throw ReplayError(0, "log has no header record");
  return log;
}

SessionLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open log " + path.string());
  return read_log(in);
}

namespace {

void write_all(int fd, const std::string& data, const std::filesystem::path& path) {
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::system_error(errno, std::generic_category(), "write " + path.string());
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

}  // namespace

LogWriter::LogWriter(const std::filesystem::path& path, const std::string& header_line) : path_(path) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::system_error(errno, std::generic_category(), "open " + path.string());
  struct stat st {};
  ::fstat(fd_, &st);
  if (st.st_size == 0) {
    append(header_line);
    return;
  }
  // Cut off a partial record left by a crash so the next append starts on
  // a fresh line.
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto last_newline = content.rfind('\n');
  const auto keep = last_newline == std::string::npos ? 0 : static_cast<off_t>(last_newline + 1);
  if (keep != st.st_size && ::ftruncate(fd_, keep) != 0) {
    throw std::system_error(errno, std::generic_category(), "truncate " + path.string());
  }
  if (keep == 0) append(header_line);
}

LogWriter::~LogWriter() {
  if (fd_ >= 0) ::close(fd_);
}

LogWriter::LogWriter(LogWriter&& other) noexcept : path_(std::move(other.path_)), fd_(other.fd_) {
  other.fd_ = -1;
}

LogWriter& LogWriter::operator=(LogWriter&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    path_ = std::move(other.path_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

void LogWriter::append(const std::string& line) {
  write_all(fd_, line + "\n", path_);
  if (::fdatasync(fd_) != 0) {
    throw std::system_error(errno, std::generic_category(), "fdatasync " + path_.string());
  }
}

}  // namespace punchhole

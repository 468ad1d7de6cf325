#pragma once

// JSON-lines session log: a header record holding the SessionConfig,
// followed by one record per answer:
//
//   {"worker_id":..,"level":0,"punched":[[r,c],..],"response":"can"|"cannot",
//    "latency_s":1.2,"at":"2026-10-15T08:00:00.000Z"}

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "json.hpp"

#include "punchhole/session.hpp"

namespace punchhole {

std::string format_timestamp(Timestamp t);
/// Parses `YYYY-MM-DDTHH:MM:SS[.fff]Z`; extra fraction digits are truncated
/// to milliseconds.
Timestamp parse_timestamp(const std::string& text);

nlohmann::json policy_to_json(const SchedulerPolicy& policy);
SchedulerPolicy policy_from_json(const nlohmann::json& j);

nlohmann::json config_to_json(const SessionConfig& config);
SessionConfig config_from_json(const nlohmann::json& j);

/// Header line; `extra` fields (e.g. an owning task id) are merged in.
std::string encode_header(const SessionConfig& config, const nlohmann::json& extra = nlohmann::json::object());
std::string encode_answer(const Answer& answer);
Answer decode_answer(const std::string& line);

struct SessionLog {
  SessionConfig config;
  nlohmann::json header;
  std::vector<Answer> answers;
};

/// Reads a whole log. A final line without its newline is an interrupted
/// append and is dropped; any other malformed line throws.
SessionLog read_log(std::istream& in);
SessionLog read_log(const std::filesystem::path& path);

/// Append-only log file. Every append is flushed to stable storage before
/// returning.
class LogWriter {
 public:
  /// Opens (creating if needed) for append. If the file is new, the header
  /// is written first.
  LogWriter(const std::filesystem::path& path, const std::string& header_line);
  ~LogWriter();
  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;
  LogWriter(LogWriter&& other) noexcept;
  LogWriter& operator=(LogWriter&& other) noexcept;

  void append(const std::string& line);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace punchhole

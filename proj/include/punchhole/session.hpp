#pragma once

// Punch-hole session: hides one patch group at a time, records the binary
// answer and keeps every "can answer" patch hidden for the rest of the
// session. A level finishes when every patch has a verdict; Important
// patches are then refined at half the patch side.
//
// State is a pure function of (SessionConfig, answer log): scheduling is
// seeded per (policy seed, level, pass), so replay() rebuilds it exactly.

#include <chrono>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "punchhole/grid.hpp"

namespace punchhole {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

enum class PatchState : std::uint8_t { Unvisited, Punched, Unimportant, Important, Excluded };

enum class Response : std::uint8_t { CanAnswer, CannotAnswer };

enum class SessionStatus : std::uint8_t { Active, LevelComplete, Done };

std::string_view to_string(PatchState state);
std::string_view to_string(SessionStatus status);

struct SequentialPolicy {
  bool operator==(const SequentialPolicy&) const = default;
};

struct ShuffledPolicy {
  std::uint64_t seed = 0;
  bool operator==(const ShuffledPolicy&) const = default;
};

/// Adaptive binary splitting: punch whole groups, split a group in half
/// whenever its answer is "cannot answer".
struct GroupTestingPolicy {
  std::uint64_t seed = 0;
  int max_group = 8;
  bool operator==(const GroupTestingPolicy&) const = default;
};

using SchedulerPolicy = std::variant<SequentialPolicy, ShuffledPolicy, GroupTestingPolicy>;

/// "seq", "shuf" or "group".
std::string_view policy_name(const SchedulerPolicy& policy);
bool is_singleton_policy(const SchedulerPolicy& policy);

struct SessionConfig {
  std::string id;
  ImageRef image;
  std::string question;
  int base_patch_side = 16;
  int max_level = 0;
  SchedulerPolicy policy = SequentialPolicy{};
  /// Re-punch Important patches in further passes until a pass hides
  /// nothing new.
  bool multi_pass = false;

  bool operator==(const SessionConfig&) const = default;
};

struct Answer {
  std::string worker_id;
  int level = 0;
  std::vector<PatchId> punched;
  Response response = Response::CanAnswer;
  double latency_s = 0.0;
  Timestamp at{};

  bool operator==(const Answer&) const = default;
};

struct Stimulus {
  ImageRef image;
  std::string question;
  int level = 0;
  std::vector<PatchId> punched;
  /// Rects of every Unimportant, Excluded and punched patch, row-major.
  std::vector<PixelRect> hidden;
  std::size_t answered = 0;
  /// Questions answered plus those still queued at this level; unknown for
  /// group testing, whose splits are data dependent.
  std::optional<std::size_t> projected_total;
};

struct LevelCompleted {
  int level = 0;
};

struct SessionDone {
  std::size_t questions = 0;
};

using NextStep = std::variant<Stimulus, LevelCompleted, SessionDone>;

struct LevelRecord {
  GridLevel grid;
  std::vector<PatchState> states;
  std::size_t questions = 0;
  int passes = 1;

  bool operator==(const LevelRecord&) const = default;
};

class Session {
 public:
  /// Builds the level-0 grid with every patch Unvisited.
  explicit Session(SessionConfig config);

  const SessionConfig& config() const { return config_; }
  SessionStatus status() const { return status_; }
  int level() const { return levels_.back().grid.level; }
  const GridLevel& grid() const { return levels_.back().grid; }
  std::span<const PatchState> states() const { return levels_.back().states; }
  PatchState state(const PatchId& id) const;
  /// Every level visited so far, the current one last.
  std::span<const LevelRecord> levels() const { return levels_; }
  std::span<const Answer> log() const { return log_; }
  std::size_t question_count() const { return log_.size(); }

  bool has_pending() const { return pending_.has_value(); }
  std::vector<PatchId> pending() const;
  /// Unimportant, Excluded and punched patches of the current level.
  std::vector<PatchId> hidden_patches() const;
  std::vector<PatchId> important_patches(int level) const;
  std::vector<PatchId> important_patches() const { return important_patches(level()); }

  /// Punches the next group, or returns the already pending one unchanged.
  /// Throws SessionFinished once Done.
  NextStep next_stimulus();
  /// The pending stimulus, if any, without scheduling a new one.
  std::optional<Stimulus> current_stimulus() const;

  /// Applies one answer to the pending group. Throws ProtocolViolation if
  /// nothing is pending or the punched set or level differ.
  void submit_answer(const Answer& answer);

  /// Refines the grid after LevelComplete; children of Important patches
  /// become Unvisited, all others Excluded. Ends the session when the grid
  /// cannot be refined further.
  void advance_level();

  /// Rebuilds a session from its config and answer log. With auto_advance,
  /// a LevelComplete reached at the end of the log is advanced too, which
  /// mirrors what the annotation service does live.
  static Session replay(const SessionConfig& config, std::span<const Answer> log,
                        bool auto_advance = false);

  bool operator==(const Session&) const = default;

 private:
  LevelRecord& current() { return levels_.back(); }
  const LevelRecord& current() const { return levels_.back(); }
  void enqueue_pass();
  void settle();
  Stimulus make_stimulus() const;

  SessionConfig config_;
  std::vector<LevelRecord> levels_;
  std::deque<std::vector<std::uint32_t>> queue_;
  std::optional<std::vector<std::uint32_t>> pending_;
  std::vector<Answer> log_;
  SessionStatus status_ = SessionStatus::Active;
  int pass_ = 0;
  bool pass_hid_something_ = false;
};

/// Questions a singleton policy needs when every Important patch at level
/// k-1 has four unclipped children: rows*cols + 4 * sum(important_per_level).
std::size_t predicted_questions(const GridLevel& base, std::span<const std::size_t> important_per_level);

/// Exact size of the next level's pass: the number of distinct child
/// patches of the given Important parents.
std::size_t next_level_questions(const GridLevel& parent_grid, std::span<const PatchId> important);

}  // namespace punchhole

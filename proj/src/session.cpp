#include "punchhole/session.hpp"

#include <algorithm>
#include <set>

#include "punchhole/errors.hpp"
#include "punchhole/rng.hpp"

namespace punchhole {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool is_hidden(PatchState s) {
  return s == PatchState::Unimportant || s == PatchState::Excluded || s == PatchState::Punched;
}

}  // namespace

std::string_view to_string(PatchState state) {
  switch (state) {
    case PatchState::Unvisited: return "unvisited";
    case PatchState::Punched: return "punched";
    case PatchState::Unimportant: return "unimportant";
    case PatchState::Important: return "important";
    case PatchState::Excluded: return "excluded";
  }
  return "?";
}

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::Active: return "active";
    case SessionStatus::LevelComplete: return "level_complete";
    case SessionStatus::Done: return "done";
  }
  return "?";
}

std::string_view policy_name(const SchedulerPolicy& policy) {
  return std::visit(overloaded{[](const SequentialPolicy&) { return std::string_view("seq"); },
                               [](const ShuffledPolicy&) { return std::string_view("shuf"); },
                               [](const GroupTestingPolicy&) { return std::string_view("group"); }},
                    policy);
}

bool is_singleton_policy(const SchedulerPolicy& policy) {
  return !std::holds_alternative<GroupTestingPolicy>(policy);
}

Session::Session(SessionConfig config) : config_(std::move(config)) {
  if (config_.max_level < 0) throw InvalidArgument("max_level must be non-negative");
  if (const auto* group = std::get_if<GroupTestingPolicy>(&config_.policy);
      group && group->max_group < 1) {
    throw InvalidArgument("max_group must be at least 1");
  }
  GridLevel grid =
      partition(config_.image.width, config_.image.height, config_.base_patch_side);
  levels_.push_back({grid, std::vector<PatchState>(grid.patch_count(), PatchState::Unvisited), 0, 1});
  enqueue_pass();
  settle();
}

PatchState Session::state(const PatchId& id) const {
  if (id.level < 0 || id.level >= static_cast<int>(levels_.size())) {
    throw InvalidArgument("level of patch " + to_string(id) + " has not been reached");
  }
  const auto& record = levels_[static_cast<std::size_t>(id.level)];
  if (!record.grid.contains(id)) throw InvalidArgument("patch " + to_string(id) + " is out of range");
  return record.states[record.grid.index_of(id)];
}

std::vector<PatchId> Session::pending() const {
  std::vector<PatchId> out;
  if (pending_) {
    for (auto index : *pending_) out.push_back(grid().id_at(index));
  }
  return out;
}

std::vector<PatchId> Session::hidden_patches() const {
  std::vector<PatchId> out;
  const auto& rec = current();
  for (std::size_t i = 0; i < rec.states.size(); ++i) {
    if (is_hidden(rec.states[i])) out.push_back(rec.grid.id_at(i));
  }
  return out;
}

std::vector<PatchId> Session::important_patches(int level) const {
  if (level < 0 || level >= static_cast<int>(levels_.size())) return {};
  const auto& rec = levels_[static_cast<std::size_t>(level)];
  std::vector<PatchId> out;
  for (std::size_t i = 0; i < rec.states.size(); ++i) {
    if (rec.states[i] == PatchState::Important) out.push_back(rec.grid.id_at(i));
  }
  return out;
}

void Session::enqueue_pass() {
  auto& rec = current();
  std::vector<std::uint32_t> open;
  for (std::size_t i = 0; i < rec.states.size(); ++i) {
    if (rec.states[i] == PatchState::Unvisited) open.push_back(static_cast<std::uint32_t>(i));
  }
  const auto permute = [&](std::uint64_t seed) {
    SplitMix64 rng(derive_seed(seed, {static_cast<std::uint64_t>(rec.grid.level),
                                      static_cast<std::uint64_t>(pass_)}));
    shuffle(std::span<std::uint32_t>(open), rng);
  };
  std::visit(overloaded{[&](const SequentialPolicy&) {
                          for (auto i : open) queue_.push_back({i});
                        },
                        [&](const ShuffledPolicy& p) {
                          permute(p.seed);
                          for (auto i : open) queue_.push_back({i});
                        },
                        [&](const GroupTestingPolicy& p) {
                          permute(p.seed);
                          // Never punch more than half of the open patches at once.
                          const std::size_t half = (open.size() + 1) / 2;
                          const std::size_t size =
                              std::max<std::size_t>(1, std::min<std::size_t>(p.max_group, half));
                          for (std::size_t i = 0; i < open.size(); i += size) {
                            const auto end = std::min(open.size(), i + size);
                            queue_.emplace_back(open.begin() + static_cast<std::ptrdiff_t>(i),
                                                open.begin() + static_cast<std::ptrdiff_t>(end));
                          }
                        }},
             config_.policy);
}

void Session::settle() {
  if (status_ != SessionStatus::Active || pending_ || !queue_.empty()) return;
  auto& rec = current();
  const bool any_important =
      std::find(rec.states.begin(), rec.states.end(), PatchState::Important) != rec.states.end();
  if (config_.multi_pass && pass_hid_something_ && any_important) {
    ++pass_;
    ++rec.passes;
    pass_hid_something_ = false;
    std::replace(rec.states.begin(), rec.states.end(), PatchState::Important, PatchState::Unvisited);
    enqueue_pass();
    return;
  }
  if (!any_important || rec.grid.level >= config_.max_level || rec.grid.patch_side <= 1) {
    status_ = SessionStatus::Done;
  } else {
    status_ = SessionStatus::LevelComplete;
  }
}

Stimulus Session::make_stimulus() const {
  Stimulus s;
  s.image = config_.image;
  s.question = config_.question;
  s.level = level();
  s.punched = pending();
  for (const auto& id : hidden_patches()) s.hidden.push_back(grid().rect(id));
  s.answered = log_.size();
  if (is_singleton_policy(config_.policy)) {
    s.projected_total = log_.size() + queue_.size() + (pending_ ? 1 : 0);
  }
  return s;
}

NextStep Session::next_stimulus() {
  switch (status_) {
    case SessionStatus::Done:
      throw SessionFinished("session " + config_.id + " is finished");
    case SessionStatus::LevelComplete:
      return LevelCompleted{level()};
    case SessionStatus::Active:
      break;
  }
  if (!pending_) {
    pending_ = std::move(queue_.front());
    queue_.pop_front();
    for (auto index : *pending_) current().states[index] = PatchState::Punched;
  }
  return make_stimulus();
}

std::optional<Stimulus> Session::current_stimulus() const {
  if (!pending_) return std::nullopt;
  return make_stimulus();
}

void Session::submit_answer(const Answer& answer) {
  if (!pending_) throw ProtocolViolation("no punch group is pending");
  if (answer.level != level()) {
    throw ProtocolViolation("answer is for level " + std::to_string(answer.level) +
                            " but the session is at level " + std::to_string(level()));
  }
  const auto expected = pending();
  if (std::set<PatchId>(answer.punched.begin(), answer.punched.end()) !=
          std::set<PatchId>(expected.begin(), expected.end()) ||
      answer.punched.size() != expected.size()) {
    throw ProtocolViolation("answered patches do not match the pending punch group");
  }
  if (!(answer.latency_s >= 0.0)) throw InvalidArgument("latency must be non-negative");

  auto group = std::move(*pending_);
  pending_.reset();
  auto& rec = current();
  if (answer.response == Response::CanAnswer) {
    for (auto index : group) rec.states[index] = PatchState::Unimportant;
    pass_hid_something_ = true;
  } else if (group.size() == 1) {
    rec.states[group.front()] = PatchState::Important;
  } else {
    for (auto index : group) rec.states[index] = PatchState::Unvisited;
    const auto mid = group.begin() + static_cast<std::ptrdiff_t>(group.size() - group.size() / 2);
    queue_.emplace_front(mid, group.end());
    queue_.emplace_front(group.begin(), mid);
  }
  ++rec.questions;
  Answer logged = answer;
  logged.punched = expected;
  log_.push_back(std::move(logged));
  settle();
}

void Session::advance_level() {
  if (status_ != SessionStatus::LevelComplete) {
    throw ProtocolViolation("advance_level requires a completed level");
  }
  const auto& parent = current();
  GridLevel child_grid;
  try {
    child_grid = refine(parent.grid);
  } catch (const RefinementExhausted&) {
    status_ = SessionStatus::Done;
    return;
  }
  std::vector<PatchState> states(child_grid.patch_count(), PatchState::Excluded);
  for (std::size_t i = 0; i < parent.states.size(); ++i) {
    if (parent.states[i] != PatchState::Important) continue;
    for (const auto& child : children(parent.grid.id_at(i), parent.grid, child_grid)) {
      states[child_grid.index_of(child)] = PatchState::Unvisited;
    }
  }
  levels_.push_back({child_grid, std::move(states), 0, 1});
  pass_ = 0;
  pass_hid_something_ = false;
  status_ = SessionStatus::Active;
  enqueue_pass();
  settle();
}

Session Session::replay(const SessionConfig& config, std::span<const Answer> log, bool auto_advance) {
  Session session(config);
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (session.status() == SessionStatus::LevelComplete) session.advance_level();
    if (session.status() == SessionStatus::Done) {
      throw ReplayError(i, "session was already finished");
    }
    session.next_stimulus();
    try {
      session.submit_answer(log[i]);
    } catch (const ProtocolViolation& e) {
      throw ReplayError(i, e.what());
    } catch (const InvalidArgument& e) {
      throw ReplayError(i, e.what());
    }
  }
  if (auto_advance && session.status() == SessionStatus::LevelComplete) session.advance_level();
  return session;
}

std::size_t predicted_questions(const GridLevel& base,
                                std::span<const std::size_t> important_per_level) {
  std::size_t total = base.patch_count();
  for (auto count : important_per_level) total += 4 * count;
  return total;
}

std::size_t next_level_questions(const GridLevel& parent_grid, std::span<const PatchId> important) {
  const GridLevel child_grid = refine(parent_grid);
  std::set<PatchId> distinct;
  for (const auto& parent : important) {
    for (const auto& child : children(parent, parent_grid, child_grid)) distinct.insert(child);
  }
  return distinct.size();
}

}  // namespace punchhole

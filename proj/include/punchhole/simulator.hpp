#pragma once

// Synthetic annotators and a seeded experiment harness.
//
// The threshold oracle answers "can answer" iff at most a theta fraction of
// the ground-truth important area is hidden, then flips its answer with
// probability epsilon. With theta = 0 and epsilon = 0 a session recovers
// coarsen_mask exactly at every level, whatever the punch order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "punchhole/aggregate.hpp"
#include "punchhole/grid.hpp"
#include "punchhole/rng.hpp"
#include "punchhole/session.hpp"

namespace punchhole::sim {

inline constexpr double kDefaultSecondsPerQuestion = 1.32;

class AnnotatorModel {
 public:
  AnnotatorModel(GroundTruthMask mask, double theta, double epsilon, std::uint64_t seed);

  const GroundTruthMask& mask() const { return mask_; }
  double theta() const { return theta_; }
  double epsilon() const { return epsilon_; }
  std::uint64_t seed() const { return seed_; }
  std::int64_t important_area() const { return area_; }
  /// Important pixels inside a rect, from a summed-area table.
  std::int64_t important_in(const PixelRect& rect) const;

 private:
  GroundTruthMask mask_;
  double theta_;
  double epsilon_;
  std::uint64_t seed_;
  std::int64_t area_ = 0;
  std::vector<std::int64_t> integral_;  // (width+1) x (height+1)
};

/// Truthful answer for a hidden region of `hidden_important` pixels.
Response truthful_answer(const AnnotatorModel& model, std::int64_t hidden_important);

/// Important pixels covered by the union of arbitrary (possibly
/// overlapping) rects.
std::int64_t hidden_important_area(const AnnotatorModel& model, std::span<const PixelRect> hidden);

/// Draws exactly one value from `rng` per call, flipped or not, so streams
/// stay aligned across epsilon values.
Response oracle_answer(const AnnotatorModel& model, std::span<const PixelRect> hidden, SplitMix64& rng);

/// Same answer for hidden patches of one grid, which never overlap.
Response oracle_answer(const AnnotatorModel& model, const GridLevel& grid,
                       std::span<const PatchId> hidden, SplitMix64& rng);

struct SessionRun {
  Session session;
  std::vector<std::size_t> questions_per_level;
  std::vector<std::vector<PatchId>> important_per_level;

  std::size_t questions() const { return session.question_count(); }
};

struct RunOptions {
  std::string worker_id = "sim";
  double seconds_per_question = kDefaultSecondsPerQuestion;
  /// Overrides the model's seed for the answer-noise stream.
  std::optional<std::uint64_t> noise_seed;
};

/// Drives next_stimulus -> oracle -> submit_answer -> advance_level to Done.
SessionRun run_session(const AnnotatorModel& model, const SessionConfig& config,
                       const RunOptions& options = {});

/// n * seconds_per_question, computed in whole microseconds so that pilot
/// constants like 23 * 1.32 come out as the decimal value 30.36.
double estimate_time(std::size_t n_questions, double seconds_per_question = kDefaultSecondsPerQuestion);

/// Probability that a strict majority of m i.i.d. answers, each flipped
/// with probability epsilon, is wrong.
double analytic_majority_error(double epsilon, int m);

struct ExperimentConfig {
  int width = 0;
  int height = 0;
  int base_patch_side = 16;
  int max_level = 0;
  std::vector<SchedulerPolicy> policies;
  std::vector<AnnotatorModel> annotators;
  /// Punch orders per seeded policy; order 0 uses the policy's own seed.
  int orders = 1;
  /// Workers per condition, odd.
  int workers = 1;
  int trials = 1;
  double seconds_per_question = kDefaultSecondsPerQuestion;
  std::uint64_t seed = 0;
  /// Per-patch repetitions of the m-worker majority-vote noise check; 0 skips it.
  int majority_trials = 0;
  unsigned threads = 1;
};

struct RunRecord {
  std::size_t annotator = 0;
  std::size_t policy_index = 0;
  std::string policy;
  std::uint64_t order_seed = 0;
  int order = 0;
  int trial = 0;
  int worker = 0;
  int level = 0;
  std::size_t questions = 0;
  std::vector<std::size_t> questions_per_level;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double est_seconds = 0.0;
  /// Final Important indicator on the report grid.
  std::vector<std::uint8_t> important;

  bool operator==(const RunRecord&) const = default;
};

struct MajorityRecord {
  std::size_t annotator = 0;
  std::string policy;
  std::uint64_t order_seed = 0;
  int order = 0;
  int trial = 0;
  ImportanceMap map;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct NoiseRecord {
  std::size_t annotator = 0;
  double epsilon = 0.0;
  int workers = 1;
  std::size_t samples = 0;
  std::size_t errors = 0;
  double empirical = 0.0;
  double analytic = 0.0;
  /// Binomial standard error of the analytic rate at `samples`.
  double standard_error = 0.0;
};

struct ExperimentReport {
  /// Finest reachable level; every run is projected onto it.
  GridLevel grid;
  std::vector<RunRecord> runs;
  std::vector<MajorityRecord> majority;
  /// Per patch: fraction of order pairs whose final indicators differ,
  /// averaged over conditions with at least two orders.
  std::vector<double> disagreement;
  std::vector<NoiseRecord> noise;
  double total_est_seconds = 0.0;
};

ExperimentReport run_experiment(const ExperimentConfig& config);

/// Writes report.csv, majority.csv, noise.csv, disagreement.png and one
/// map_*.png per condition (trial 0).
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace punchhole::sim

#pragma once

// Cross-worker merging of finished sessions, consensus partitioning and
// comparison against box-annotation baselines.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "punchhole/grid.hpp"
#include "punchhole/session.hpp"

namespace punchhole {

struct ImportanceMap {
  GridLevel grid;
  /// Row-major, one entry per patch of `grid`.
  std::vector<double> scores;
  std::size_t n_workers = 0;

  double score(const PatchId& id) const { return scores[grid.index_of(id)]; }
};

struct AgreementReport {
  std::vector<PatchId> consensus_important;
  std::vector<PatchId> consensus_unimportant;
  std::vector<PatchId> controversial;
  double tau = 0.0;
};

struct BoxAnnotation {
  std::string worker_id;
  std::vector<PixelRect> boxes;
};

struct ComparisonMetrics {
  double iou_at_half = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  /// Empty when either score vector is constant.
  std::optional<double> pearson;
  std::optional<double> spearman;
};

/// Projects every session onto the finest level any of them reached and
/// scores each patch by the fraction of sessions that mark it Important.
/// A session that stopped at a coarser level marks a fine patch Important
/// when the patch overlaps one of its final-level Important patches.
ImportanceMap merge_sessions(std::span<const Session> sessions);
ImportanceMap merge_sessions(std::span<const Session* const> sessions);

/// Binary indicator of a single session projected onto `target`.
std::vector<std::uint8_t> project_important(const Session& session, const GridLevel& target);

/// tau must lie in (0.5, 1].
AgreementReport agreement(const ImportanceMap& map, double tau);

/// Strict majority of an odd number of answers.
Response majority_vote(std::span<const Response> answers);

/// A patch is marked for a worker when a single box covers at least
/// `overlap_frac` of the patch area.
ImportanceMap rasterize_boxes(std::span<const BoxAnnotation> annotations, const GridLevel& grid,
                              double overlap_frac = 0.5);

/// `a` is the prediction, `b` the reference. Set metrics binarize at
/// score > 0.5; empty sets count as perfect agreement.
ComparisonMetrics compare(const ImportanceMap& a, const ImportanceMap& b);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

}  // namespace punchhole

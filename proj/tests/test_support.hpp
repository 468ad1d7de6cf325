#pragma once

// Test-only helpers: random inputs and brute-force oracles that do not go
// through the library's own geometry code paths.

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "punchhole/grid.hpp"
#include "punchhole/rng.hpp"
#include "punchhole/session.hpp"

namespace punchhole::testing {

/// Mask made of a few random rectangles plus sparse single pixels.
inline GroundTruthMask random_mask(int width, int height, SplitMix64& rng, int blobs = 2,
                                   double speckle = 0.002) {
  GroundTruthMask mask(width, height);
  for (int b = 0; b < blobs; ++b) {
    const int w = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, width / 3))));
    const int h = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, height / 3))));
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - w + 1)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - h + 1)));
    mask.fill({x, y, w, h}, true);
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (rng.unit() < speckle) mask.set(x, y, true);
    }
  }
  return mask;
}

/// Patch containing each important pixel, found by plain division.
inline std::set<PatchId> coarsen_by_pixel_scan(const GroundTruthMask& mask, int level, int side) {
  std::set<PatchId> out;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.at(x, y)) out.insert({level, y / side, x / side});
    }
  }
  return out;
}

/// Child patches whose pixel sets intersect the parent's, by enumerating
/// every child patch and every pixel.
inline std::set<PatchId> children_by_enumeration(int width, int height, int parent_side, PatchId parent,
                                                 int child_side) {
  std::set<PatchId> out;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (y / parent_side == parent.row && x / parent_side == parent.col) {
        out.insert({parent.level + 1, y / child_side, x / child_side});
      }
    }
  }
  return out;
}

inline std::set<PatchId> as_set(const std::vector<PatchId>& ids) { return {ids.begin(), ids.end()}; }

inline SessionConfig make_config(int width, int height, int side, int max_level = 0,
                                 SchedulerPolicy policy = SequentialPolicy{}) {
  SessionConfig c;
  c.id = "test-session";
  c.image = {"img", width, height, ""};
  c.question = "Which fruit sold best?";
  c.base_patch_side = side;
  c.max_level = max_level;
  c.policy = policy;
  return c;
}

inline Answer answer_pending(const Session& s, Response r, double latency = 1.0) {
  Answer a;
  a.worker_id = "w";
  a.level = s.level();
  a.punched = s.pending();
  a.response = r;
  a.latency_s = latency;
  a.at = Timestamp{std::chrono::milliseconds(1000 * static_cast<long long>(s.question_count() + 1))};
  return a;
}

}  // namespace punchhole::testing

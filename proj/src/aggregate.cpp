#include "punchhole/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "punchhole/errors.hpp"

namespace punchhole {
namespace {

// Scores are ratios of small integers; this absorbs the rounding in 1 - tau.
constexpr double kScoreSlack = 1e-12;

bool same_task(const SessionConfig& a, const SessionConfig& b) {
  return a.image == b.image && a.question == b.question && a.base_patch_side == b.base_patch_side;
}

GridLevel level_grid(const GridLevel& base, int level) {
  GridLevel g = base;
  while (g.level < level) g = refine(g);
  return g;
}

void require_same_shape(const ImportanceMap& a, const ImportanceMap& b) {
  if (a.grid.level != b.grid.level || a.grid.rows != b.grid.rows || a.grid.cols != b.grid.cols ||
      a.scores.size() != b.scores.size()) {
    throw InvalidArgument("importance maps are on different grids");
  }
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::vector<std::uint8_t> project_important(const Session& session, const GridLevel& target) {
  const auto& final_level = session.levels().back();
  const GridLevel& source = final_level.grid;
  std::vector<std::uint8_t> marks(target.patch_count(), 0);
  if (source.level == target.level) {
    for (std::size_t i = 0; i < marks.size(); ++i) {
      marks[i] = final_level.states[i] == PatchState::Important;
    }
    return marks;
  }
  if (source.level > target.level) throw InvalidArgument("cannot project onto a coarser level");
  for (std::size_t i = 0; i < final_level.states.size(); ++i) {
    if (final_level.states[i] != PatchState::Important) continue;
    const PixelRect r = source.rect(source.id_at(i));
    const int side = target.patch_side;
    for (int row = r.y / side; row <= (r.y + r.h - 1) / side; ++row) {
      for (int col = r.x / side; col <= (r.x + r.w - 1) / side; ++col) {
        marks[static_cast<std::size_t>(row) * target.cols + col] = 1;
      }
    }
  }
  return marks;
}

ImportanceMap merge_sessions(std::span<const Session* const> sessions) {
  if (sessions.empty()) throw InvalidArgument("no sessions to merge");
  const auto& first = sessions.front()->config();
  int finest = 0;
  for (const auto* s : sessions) {
    if (!same_task(first, s->config())) {
      throw InvalidArgument("sessions disagree on image, question or base patch side");
    }
    if (s->status() != SessionStatus::Done) {
      throw InvalidArgument("session " + s->config().id + " is not finished");
    }
    finest = std::max(finest, s->level());
  }
  ImportanceMap map;
  map.grid = level_grid(sessions.front()->levels().front().grid, finest);
  map.scores.assign(map.grid.patch_count(), 0.0);
  map.n_workers = sessions.size();
  std::vector<std::size_t> counts(map.grid.patch_count(), 0);
  for (const auto* s : sessions) {
    const auto marks = project_important(*s, map.grid);
    for (std::size_t i = 0; i < marks.size(); ++i) counts[i] += marks[i];
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    map.scores[i] = static_cast<double>(counts[i]) / static_cast<double>(sessions.size());
  }
  return map;
}

ImportanceMap merge_sessions(std::span<const Session> sessions) {
  std::vector<const Session*> ptrs;
  ptrs.reserve(sessions.size());
  for (const auto& s : sessions) ptrs.push_back(&s);
  return merge_sessions(std::span<const Session* const>(ptrs));
}

AgreementReport agreement(const ImportanceMap& map, double tau) {
  if (!(tau > 0.5 && tau <= 1.0)) throw InvalidArgument("tau must lie in (0.5, 1]");
  AgreementReport report;
  report.tau = tau;
  for (std::size_t i = 0; i < map.scores.size(); ++i) {
    const double s = map.scores[i];
    const PatchId id = map.grid.id_at(i);
    if (s >= tau - kScoreSlack) {
      report.consensus_important.push_back(id);
    } else if (s <= 1.0 - tau + kScoreSlack) {
      report.consensus_unimportant.push_back(id);
    } else {
      report.controversial.push_back(id);
    }
  }
  return report;
}

Response majority_vote(std::span<const Response> answers) {
  if (answers.empty() || answers.size() % 2 == 0) {
    throw InvalidArgument("majority vote needs an odd number of answers");
  }
  const auto cannot = std::count(answers.begin(), answers.end(), Response::CannotAnswer);
  return static_cast<std::size_t>(cannot) * 2 > answers.size() ? Response::CannotAnswer
                                                               : Response::CanAnswer;
}

ImportanceMap rasterize_boxes(std::span<const BoxAnnotation> annotations, const GridLevel& grid,
                              double overlap_frac) {
  if (annotations.empty()) throw InvalidArgument("no box annotations");
  if (!(overlap_frac > 0.0 && overlap_frac <= 1.0)) {
    throw InvalidArgument("overlap fraction must lie in (0, 1]");
  }
  const PixelRect image{0, 0, grid.width, grid.height};
  ImportanceMap map{grid, std::vector<double>(grid.patch_count(), 0.0), annotations.size()};
  std::vector<std::size_t> counts(grid.patch_count(), 0);
  for (const auto& worker : annotations) {
    for (const auto& box : worker.boxes) {
      if (box.w < 1 || box.h < 1 || overlap_area(box, image) != box.area()) {
        throw InvalidArgument("box of worker " + worker.worker_id + " lies outside the image");
      }
    }
    for (std::size_t i = 0; i < grid.patch_count(); ++i) {
      const PixelRect patch = grid.rect(grid.id_at(i));
      const bool marked = std::any_of(worker.boxes.begin(), worker.boxes.end(), [&](const auto& box) {
        return static_cast<double>(overlap_area(box, patch)) >=
               overlap_frac * static_cast<double>(patch.area());
      });
      counts[i] += marked;
    }
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    map.scores[i] = static_cast<double>(counts[i]) / static_cast<double>(annotations.size());
  }
  return map;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

ComparisonMetrics compare(const ImportanceMap& a, const ImportanceMap& b) {
  require_same_shape(a, b);
  std::size_t both = 0, only_a = 0, only_b = 0;
  for (std::size_t i = 0; i < a.scores.size(); ++i) {
    const bool pa = a.scores[i] > 0.5;
    const bool pb = b.scores[i] > 0.5;
    both += pa && pb;
    only_a += pa && !pb;
    only_b += !pa && pb;
  }
  const auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  ComparisonMetrics m;
  m.iou_at_half = ratio(both, both + only_a + only_b);
  m.precision = ratio(both, both + only_a);
  m.recall = ratio(both, both + only_b);
  m.pearson = pearson(a.scores, b.scores);
  m.spearman = spearman(a.scores, b.scores);
  return m;
}

}  // namespace punchhole

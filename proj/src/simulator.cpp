#include "punchhole/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "punchhole/errors.hpp"
#include "punchhole/io.hpp"
#include "punchhole/kernels.hpp"

namespace punchhole::sim {
namespace {

SchedulerPolicy with_seed(SchedulerPolicy policy, std::uint64_t seed) {
  if (auto* p = std::get_if<ShuffledPolicy>(&policy)) p->seed = seed;
  if (auto* p = std::get_if<GroupTestingPolicy>(&policy)) p->seed = seed;
  return policy;
}

std::uint64_t policy_seed(const SchedulerPolicy& policy) {
  if (const auto* p = std::get_if<ShuffledPolicy>(&policy)) return p->seed;
  if (const auto* p = std::get_if<GroupTestingPolicy>(&policy)) return p->seed;
  return 0;
}

GridLevel report_grid(const ExperimentConfig& config) {
  GridLevel grid = partition(config.width, config.height, config.base_patch_side);
  while (grid.level < config.max_level && grid.patch_side > 1) grid = refine(grid);
  return grid;
}

std::vector<std::uint8_t> indicator(const GridLevel& grid, std::span<const PatchId> ids) {
  std::vector<std::uint8_t> out(grid.patch_count(), 0);
  for (const auto& id : ids) out[grid.index_of(id)] = 1;
  return out;
}

ImportanceMap binary_map(const GridLevel& grid, std::span<const std::uint8_t> marks) {
  ImportanceMap map{grid, std::vector<double>(marks.size()), 1};
  for (std::size_t i = 0; i < marks.size(); ++i) map.scores[i] = marks[i] ? 1.0 : 0.0;
  return map;
}

struct RunSpec {
  std::size_t annotator;
  std::size_t policy_index;
  int order;
  std::uint64_t order_seed;
  int trial;
  int worker;
};

template <typename Fn>
void for_each_index(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, count); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

}  // namespace

AnnotatorModel::AnnotatorModel(GroundTruthMask mask, double theta, double epsilon, std::uint64_t seed)
    : mask_(std::move(mask)), theta_(theta), epsilon_(epsilon), seed_(seed) {
  if (!(theta >= 0.0 && theta < 1.0)) throw InvalidArgument("theta must lie in [0, 1)");
  if (!(epsilon >= 0.0 && epsilon <= 0.5)) throw InvalidArgument("epsilon must lie in [0, 0.5]");
  const int w = mask_.width();
  const int h = mask_.height();
  integral_.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y) {
    std::int64_t row_sum = 0;
    const auto row = mask_.row(y);
    for (int x = 0; x < w; ++x) {
      row_sum += row[static_cast<std::size_t>(x)];
      integral_[static_cast<std::size_t>(y + 1) * (w + 1) + (x + 1)] =
          integral_[static_cast<std::size_t>(y) * (w + 1) + (x + 1)] + row_sum;
    }
  }
  area_ = mask_.area();
}

std::int64_t AnnotatorModel::important_in(const PixelRect& r) const {
  const auto stride = static_cast<std::size_t>(mask_.width() + 1);
  const auto at = [&](int x, int y) { return integral_[static_cast<std::size_t>(y) * stride + x]; };
  return at(r.x + r.w, r.y + r.h) - at(r.x, r.y + r.h) - at(r.x + r.w, r.y) + at(r.x, r.y);
}

Response truthful_answer(const AnnotatorModel& model, std::int64_t hidden_important) {
  if (model.important_area() == 0) return Response::CanAnswer;
  return static_cast<double>(hidden_important) <= model.theta() * static_cast<double>(model.important_area())
             ? Response::CanAnswer
             : Response::CannotAnswer;
}

std::int64_t hidden_important_area(const AnnotatorModel& model, std::span<const PixelRect> hidden) {
  const int w = model.mask().width();
  const int h = model.mask().height();
  const PixelRect image{0, 0, w, h};
  std::vector<std::uint8_t> cover(static_cast<std::size_t>(w) * h, 0);
  for (const auto& r : hidden) {
    if (r.w < 1 || r.h < 1 || overlap_area(r, image) != r.area()) {
      throw InvalidArgument("hidden rect lies outside the image");
    }
    for (int y = r.y; y < r.y + r.h; ++y) {
      std::fill_n(cover.begin() + static_cast<std::ptrdiff_t>(y) * w + r.x, r.w, std::uint8_t{1});
    }
  }
  return static_cast<std::int64_t>(kernels::count_both_nonzero(model.mask().pixels(), cover));
}

namespace {

Response apply_noise(const AnnotatorModel& model, Response truthful, SplitMix64& rng) {
  const bool flip = rng.unit() < model.epsilon();
  if (!flip) return truthful;
  return truthful == Response::CanAnswer ? Response::CannotAnswer : Response::CanAnswer;
}

}  // namespace

Response oracle_answer(const AnnotatorModel& model, std::span<const PixelRect> hidden, SplitMix64& rng) {
  return apply_noise(model, truthful_answer(model, hidden_important_area(model, hidden)), rng);
}

Response oracle_answer(const AnnotatorModel& model, const GridLevel& grid,
                       std::span<const PatchId> hidden, SplitMix64& rng) {
  if (grid.width != model.mask().width() || grid.height != model.mask().height()) {
    throw InvalidArgument("grid does not match the annotator's mask");
  }
  std::int64_t covered = 0;
  for (const auto& id : hidden) covered += model.important_in(grid.rect(id));
  return apply_noise(model, truthful_answer(model, covered), rng);
}

SessionRun run_session(const AnnotatorModel& model, const SessionConfig& config,
                       const RunOptions& options) {
  if (config.image.width != model.mask().width() || config.image.height != model.mask().height()) {
    throw InvalidArgument("session image does not match the annotator's mask");
  }
  SessionRun run{Session(config), {}, {}};
  SplitMix64 rng(options.noise_seed.value_or(model.seed()));
  const auto latency_ms = std::chrono::milliseconds(std::llround(options.seconds_per_question * 1000.0));
  Timestamp clock{};
  Session& session = run.session;
  // Important area under patches that stay hidden for the rest of the level
  // (unimportant or excluded). Patches only ever join this set, so it is
  // rebuilt when the level changes and grown after each answer.
  std::int64_t settled_hidden = 0;
  int cached_level = -1;
  while (session.status() != SessionStatus::Done) {
    if (session.status() == SessionStatus::LevelComplete) {
      session.advance_level();
      continue;
    }
    const GridLevel& grid = session.grid();
    if (session.level() != cached_level) {
      cached_level = session.level();
      settled_hidden = 0;
      const auto states = session.states();
      for (std::size_t i = 0; i < states.size(); ++i) {
        if (states[i] == PatchState::Unimportant || states[i] == PatchState::Excluded) {
          settled_hidden += model.important_in(grid.rect(grid.id_at(i)));
        }
      }
    }
    const auto step = session.next_stimulus();
    const auto& stimulus = std::get<Stimulus>(step);
    std::int64_t punched_area = 0;
    for (const auto& id : stimulus.punched) punched_area += model.important_in(grid.rect(id));
    Answer answer;
    answer.worker_id = options.worker_id;
    answer.level = stimulus.level;
    answer.punched = stimulus.punched;
    answer.response = apply_noise(model, truthful_answer(model, settled_hidden + punched_area), rng);
    answer.latency_s = options.seconds_per_question;
    clock += latency_ms;
    answer.at = clock;
    session.submit_answer(answer);
    if (session.level() == cached_level) {
      for (const auto& id : answer.punched) {
        if (session.state(id) == PatchState::Unimportant) settled_hidden += model.important_in(grid.rect(id));
      }
    }
  }
  for (const auto& level : session.levels()) {
    run.questions_per_level.push_back(level.questions);
    run.important_per_level.push_back(session.important_patches(level.grid.level));
  }
  return run;
}

double estimate_time(std::size_t n_questions, double seconds_per_question) {
  if (!(seconds_per_question >= 0.0)) throw InvalidArgument("seconds per question must be non-negative");
  const auto micros = std::llround(seconds_per_question * 1e6);
  return static_cast<double>(static_cast<long long>(n_questions) * micros) / 1e6;
}

double analytic_majority_error(double epsilon, int m) {
  if (m < 1 || m % 2 == 0) throw InvalidArgument("worker count must be odd");
  if (!(epsilon >= 0.0 && epsilon <= 0.5)) throw InvalidArgument("epsilon must lie in [0, 0.5]");
  double total = 0.0;
  double binom = 1.0;  // C(m, j), built up from C(m, 0)
  for (int j = 0; j <= m; ++j) {
    if (j > 0) binom = binom * (m - j + 1) / j;
    if (2 * j > m) total += binom * std::pow(epsilon, j) * std::pow(1.0 - epsilon, m - j);
  }
  return total;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  if (config.policies.empty()) throw InvalidArgument("experiment needs at least one policy");
  if (config.annotators.empty()) throw InvalidArgument("experiment needs at least one annotator");
  if (config.workers < 1 || config.workers % 2 == 0) throw InvalidArgument("worker count must be odd");
  if (config.trials < 1) throw InvalidArgument("trials must be at least 1");
  if (config.orders < 1) throw InvalidArgument("orders must be at least 1");
  if (config.majority_trials < 0) throw InvalidArgument("majority trials must be non-negative");
  if (!(config.seconds_per_question > 0.0)) throw InvalidArgument("seconds per question must be positive");
  for (const auto& a : config.annotators) {
    if (a.mask().width() != config.width || a.mask().height() != config.height) {
      throw InvalidArgument("annotator mask does not match the experiment image");
    }
  }

  ExperimentReport report;
  report.grid = report_grid(config);

  std::vector<RunSpec> specs;
  for (std::size_t a = 0; a < config.annotators.size(); ++a) {
    for (std::size_t p = 0; p < config.policies.size(); ++p) {
      const auto& policy = config.policies[p];
      const int orders = std::holds_alternative<SequentialPolicy>(policy) ? 1 : config.orders;
      for (int o = 0; o < orders; ++o) {
        const std::uint64_t base = policy_seed(policy);
        const std::uint64_t seed =
            o == 0 ? base : derive_seed(base, {static_cast<std::uint64_t>(o)});
        for (int t = 0; t < config.trials; ++t) {
          for (int w = 0; w < config.workers; ++w) specs.push_back({a, p, o, seed, t, w});
        }
      }
    }
  }

  std::vector<std::optional<SessionRun>> sessions(specs.size());
  report.runs.resize(specs.size());
  for_each_index(specs.size(), config.threads, [&](std::size_t i) {
    const auto& spec = specs[i];
    const auto& model = config.annotators[spec.annotator];
    SessionConfig sc;
    sc.id = "run-" + std::to_string(i);
    sc.image = {"simulated", config.width, config.height, ""};
    sc.question = "simulated question";
    sc.base_patch_side = config.base_patch_side;
    sc.max_level = config.max_level;
    sc.policy = with_seed(config.policies[spec.policy_index], spec.order_seed);
    RunOptions options;
    options.worker_id = "sim-" + std::to_string(spec.worker);
    options.seconds_per_question = config.seconds_per_question;
    options.noise_seed = derive_seed(config.seed ^ model.seed(), {static_cast<std::uint64_t>(i)});
    SessionRun run = run_session(model, sc, options);

    RunRecord& rec = report.runs[i];
    rec.annotator = spec.annotator;
    rec.policy_index = spec.policy_index;
    rec.policy = std::string(policy_name(sc.policy));
    rec.order_seed = spec.order_seed;
    rec.order = spec.order;
    rec.trial = spec.trial;
    rec.worker = spec.worker;
    rec.level = run.session.level();
    rec.questions = run.questions();
    rec.questions_per_level = run.questions_per_level;
    rec.important = project_important(run.session, report.grid);
    const auto truth = indicator(report.grid, coarsen_mask(model.mask(), report.grid));
    const auto metrics = compare(binary_map(report.grid, rec.important), binary_map(report.grid, truth));
    rec.iou = metrics.iou_at_half;
    rec.precision = metrics.precision;
    rec.recall = metrics.recall;
    rec.est_seconds = estimate_time(rec.questions, config.seconds_per_question);
    sessions[i] = std::move(run);
  });
  for (const auto& r : report.runs) report.total_est_seconds += r.est_seconds;

  // Majority maps: one per (annotator, policy, order, trial) over its m workers.
  for (std::size_t i = 0; i < specs.size(); i += static_cast<std::size_t>(config.workers)) {
    std::vector<const Session*> group;
    for (int w = 0; w < config.workers; ++w) group.push_back(&sessions[i + w]->session);
    const auto& spec = specs[i];
    MajorityRecord rec;
    rec.annotator = spec.annotator;
    rec.policy = report.runs[i].policy;
    rec.order_seed = spec.order_seed;
    rec.order = spec.order;
    rec.trial = spec.trial;
    // Same rule as merge_sessions, but always on the report grid since
    // workers may stop at different depths.
    rec.map = ImportanceMap{report.grid, std::vector<double>(report.grid.patch_count(), 0.0),
                            group.size()};
    for (const auto* s : group) {
      const auto marks = project_important(*s, report.grid);
      for (std::size_t k = 0; k < marks.size(); ++k) {
        rec.map.scores[k] += marks[k] / static_cast<double>(group.size());
      }
    }
    const auto truth = indicator(report.grid, coarsen_mask(config.annotators[spec.annotator].mask(), report.grid));
    const auto metrics = compare(rec.map, binary_map(report.grid, truth));
    rec.iou = metrics.iou_at_half;
    rec.precision = metrics.precision;
    rec.recall = metrics.recall;
    report.majority.push_back(std::move(rec));
  }

  // Order disagreement: compare orders within each (annotator, policy, trial, worker).
  std::map<std::tuple<std::size_t, std::size_t, int, int>, std::vector<std::size_t>> by_condition;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    by_condition[{s.annotator, s.policy_index, s.trial, s.worker}].push_back(i);
  }
  report.disagreement.assign(report.grid.patch_count(), 0.0);
  std::size_t conditions = 0;
  for (const auto& [key, runs] : by_condition) {
    if (runs.size() < 2) continue;
    ++conditions;
    const double pairs = static_cast<double>(runs.size() * (runs.size() - 1) / 2);
    for (std::size_t k = 0; k < report.grid.patch_count(); ++k) {
      std::size_t differ = 0;
      for (std::size_t x = 0; x < runs.size(); ++x) {
        for (std::size_t y = x + 1; y < runs.size(); ++y) {
          differ += report.runs[runs[x]].important[k] != report.runs[runs[y]].important[k];
        }
      }
      report.disagreement[k] += static_cast<double>(differ) / pairs;
    }
  }
  if (conditions > 0) {
    for (auto& d : report.disagreement) d /= static_cast<double>(conditions);
  }

  if (config.majority_trials > 0) {
    const GridLevel base = partition(config.width, config.height, config.base_patch_side);
    for (std::size_t a = 0; a < config.annotators.size(); ++a) {
      const auto& model = config.annotators[a];
      NoiseRecord rec;
      rec.annotator = a;
      rec.epsilon = model.epsilon();
      rec.workers = config.workers;
      std::vector<Response> votes(static_cast<std::size_t>(config.workers));
      for (std::size_t p = 0; p < base.patch_count(); ++p) {
        const PatchId id = base.id_at(p);
        const PixelRect rect = base.rect(id);
        const Response truth = truthful_answer(model, model.important_in(rect));
        SplitMix64 rng(derive_seed(config.seed ^ model.seed(), {0x6E6F697365ULL, a, p}));
        for (int t = 0; t < config.majority_trials; ++t) {
          for (auto& v : votes) v = oracle_answer(model, base, std::span<const PatchId>(&id, 1), rng);
          rec.errors += majority_vote(votes) != truth;
          ++rec.samples;
        }
      }
      rec.empirical = static_cast<double>(rec.errors) / static_cast<double>(rec.samples);
      rec.analytic = analytic_majority_error(model.epsilon(), config.workers);
      rec.standard_error = std::sqrt(rec.analytic * (1.0 - rec.analytic) / static_cast<double>(rec.samples));
      report.noise.push_back(rec);
    }
  }
  return report;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.csv", std::ios::trunc);
    out << "policy,seed,level,questions,iou,precision,recall,est_seconds,annotator,order,trial,worker\n";
    for (const auto& r : report.runs) {
      out << r.policy << ',' << r.order_seed << ',' << r.level << ',' << r.questions << ',' << r.iou << ','
          << r.precision << ',' << r.recall << ',' << r.est_seconds << ',' << r.annotator << ',' << r.order
          << ',' << r.trial << ',' << r.worker << '\n';
    }
  }
  {
    std::ofstream out(dir / "majority.csv", std::ios::trunc);
    out << "policy,seed,annotator,order,trial,workers,iou,precision,recall\n";
    for (const auto& m : report.majority) {
      out << m.policy << ',' << m.order_seed << ',' << m.annotator << ',' << m.order << ',' << m.trial << ','
          << m.map.n_workers << ',' << m.iou << ',' << m.precision << ',' << m.recall << '\n';
    }
  }
  {
    std::ofstream out(dir / "noise.csv", std::ios::trunc);
    out << "annotator,epsilon,workers,samples,errors,empirical,analytic,standard_error\n";
    for (const auto& n : report.noise) {
      out << n.annotator << ',' << n.epsilon << ',' << n.workers << ',' << n.samples << ',' << n.errors << ','
          << n.empirical << ',' << n.analytic << ',' << n.standard_error << '\n';
    }
  }
  const ImageRef image{"report", report.grid.width, report.grid.height, ""};
  const auto to_png = [&](std::span<const double> scores, const std::filesystem::path& path) {
    std::map<PatchId, double> patches;
    for (std::size_t i = 0; i < scores.size(); ++i) patches[report.grid.id_at(i)] = scores[i];
    io::write_png(path, io::quantize(rasterize_patches(patches, report.grid, image)));
  };
  to_png(report.disagreement, dir / "disagreement.png");
  for (const auto& m : report.majority) {
    if (m.trial != 0) continue;
    to_png(m.map.scores, dir / ("map_a" + std::to_string(m.annotator) + "_" + m.policy + "_o" +
                                std::to_string(m.order) + ".png"));
  }
}

}  // namespace punchhole::sim

// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status
// is non-zero if any criterion fails.

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <thread>

#include "httplib.h"
#include "punchhole/event_log.hpp"
#include "punchhole/io.hpp"
#include "punchhole/kernels.hpp"
#include "punchhole/service.hpp"
#include "punchhole/simulator.hpp"
#include "test_support.hpp"

using namespace punchhole;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Instance {
  int width, height, side, max_level;
  GroundTruthMask mask;
};

// Level-0 grids up to 16x16, clipped borders, odd and even sides.
Instance random_instance(SplitMix64& rng) {
  static constexpr int kSides[] = {1, 2, 3, 4, 5, 8, 16};
  const int side = kSides[rng.below(std::size(kSides))];
  const int cols = 1 + static_cast<int>(rng.below(16));
  const int rows = 1 + static_cast<int>(rng.below(16));
  const int w = std::max(1, cols * side - static_cast<int>(rng.below(static_cast<std::uint64_t>(side))));
  const int h = std::max(1, rows * side - static_cast<int>(rng.below(static_cast<std::uint64_t>(side))));
  GroundTruthMask mask(w, h);
  switch (rng.below(5)) {
    case 0: break;  // empty
    case 1: mask.fill({0, 0, w, h}, true); break;
    default: mask = punchhole::testing::random_mask(w, h, rng, 1 + static_cast<int>(rng.below(3)), rng.unit() * 0.01);
  }
  return {w, h, side, static_cast<int>(rng.below(4)), std::move(mask)};
}

std::vector<SchedulerPolicy> all_policies(SplitMix64& rng) {
  std::vector<SchedulerPolicy> out{SequentialPolicy{}};
  for (int i = 0; i < 10; ++i) out.push_back(ShuffledPolicy{rng.next()});
  for (int i = 0; i < 3; ++i) {
    const auto seed = rng.next();
    out.push_back(GroupTestingPolicy{seed, 4});
    out.push_back(GroupTestingPolicy{seed, 8});
  }
  return out;
}

SessionConfig config_for(const Instance& in, SchedulerPolicy policy) {
  SessionConfig c;
  c.id = "acceptance";
  c.image = {"img", in.width, in.height, ""};
  c.question = "q";
  c.base_patch_side = in.side;
  c.max_level = in.max_level;
  c.policy = policy;
  return c;
}

// Criteria 1-3 share the same instances.
void recovery_order_and_counts() {
  const auto start = std::chrono::steady_clock::now();
  SplitMix64 rng(0xACCE97);
  constexpr int kInstances = 240;
  int recovered = 0, invariant = 0, counted = 0;
  std::size_t runs = 0, singleton_runs = 0;
  for (int i = 0; i < kInstances; ++i) {
    const Instance in = random_instance(rng);
    const sim::AnnotatorModel model(in.mask, 0.0, 0.0, rng.next());
    bool all_recovered = true, all_counts = true, all_same = true;
    std::optional<std::vector<std::vector<std::uint8_t>>> reference;
    for (const auto& policy : all_policies(rng)) {
      const auto run = sim::run_session(model, config_for(in, policy));
      ++runs;
      std::vector<std::vector<std::uint8_t>> indicators;
      GridLevel grid = partition(in.width, in.height, in.side);
      for (std::size_t k = 0; k < run.important_per_level.size(); ++k) {
        const auto& found = run.important_per_level[k];
        all_recovered &= punchhole::testing::as_set(found) == punchhole::testing::as_set(coarsen_mask(in.mask, grid));
        std::vector<std::uint8_t> ind(grid.patch_count(), 0);
        for (const auto& id : found) ind[grid.index_of(id)] = 1;
        indicators.push_back(std::move(ind));
        if (is_singleton_policy(policy)) {
          const std::size_t expected =
              k == 0 ? grid.patch_count()
                     : next_level_questions(run.session.levels()[k - 1].grid, run.important_per_level[k - 1]);
          all_counts &= run.questions_per_level[k] == expected;
        }
        if (k + 1 < run.important_per_level.size()) grid = refine(grid);
      }
      if (is_singleton_policy(policy)) ++singleton_runs;
      if (!reference) {
        reference = indicators;
      } else {
        all_same &= indicators == *reference;
      }
    }
    recovered += all_recovered;
    invariant += all_same;
    counted += all_counts;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report(recovered == kInstances && secs < 30.0, "exact-recovery",
         fmt("%d/%d instances, %zu sessions, %.2f s (limit 30 s)", recovered, kInstances, runs, secs));
  report(invariant == kInstances, "order-invariance",
         fmt("%d/%d instances bitwise identical across 1 seq + 10 shuf + 3x{4,8} group", invariant, kInstances));
  report(counted == kInstances, "question-count-closed-form",
         fmt("%d/%d instances, %zu singleton sessions exact", counted, kInstances, singleton_runs));
}

void timing_constants() {
  const double one = sim::estimate_time(1, 1.32);
  const double chart = sim::estimate_time(23, 1.32);
  report(one == 1.32 && chart == 30.36, "timing-constants",
         fmt("estimate_time(1)=%.15g estimate_time(23)=%.15g", one, chart));
}

void noise_calibration() {
  bool ok = true;
  std::string detail;
  for (double eps : {0.1, 0.2}) {
    for (int m : {3, 5}) {
      sim::ExperimentConfig c;
      c.width = c.height = 16;
      c.base_patch_side = 16;  // one patch: 10,000 trials per (eps, m)
      GroundTruthMask mask(16, 16);
      mask.fill({4, 4, 8, 8}, true);
      c.annotators.emplace_back(mask, 0.0, eps, 1000 + m);
      c.policies = {SequentialPolicy{}};
      c.workers = m;
      c.majority_trials = 10000;
      c.seed = 0x5EED0000 + static_cast<std::uint64_t>(eps * 100) * 10 + static_cast<std::uint64_t>(m);
      const auto rep = sim::run_experiment(c);
      const auto& n = rep.noise.at(0);
      const double z = std::abs(n.empirical - n.analytic) / n.standard_error;
      ok &= n.samples == 10000 && z <= 3.0;
      detail += fmt("(%.1f,%d): %.5f vs %.5f z=%.2f; ", eps, m, n.empirical, n.analytic, z);
    }
  }
  const double v = sim::analytic_majority_error(0.2, 5);
  ok &= std::abs(v - 0.05792) < 1e-12;
  detail += fmt("analytic(0.2,5)=%.5f", v);
  report(ok, "noise-calibration", detail);
}

void group_efficiency() {
  SplitMix64 rng(0xEFF1C1E);
  constexpr int kInstances = 100;
  int wins = 0;
  std::string counts;
  std::size_t group_total = 0, single_total = 0;
  for (int i = 0; i < kInstances; ++i) {
    // 16x16 patches of side 4; a density in (0, 0.2] of them important.
    const int side = 4, n = 16;
    GroundTruthMask mask(n * side, n * side);
    const double density = 0.2 * (1 + static_cast<double>(rng.below(20))) / 20.0;
    const auto k = static_cast<std::size_t>(density * n * n);
    std::vector<std::uint32_t> cells(n * n);
    for (std::uint32_t c = 0; c < cells.size(); ++c) cells[c] = c;
    shuffle(std::span<std::uint32_t>(cells), rng);
    for (std::size_t c = 0; c < k; ++c) {
      const int row = static_cast<int>(cells[c]) / n, col = static_cast<int>(cells[c]) % n;
      mask.set(col * side + static_cast<int>(rng.below(side)), row * side + static_cast<int>(rng.below(side)), true);
    }
    const sim::AnnotatorModel model(mask, 0.0, 0.0, 1);
    Instance in{n * side, n * side, side, 0, mask};
    const auto single = sim::run_session(model, config_for(in, SequentialPolicy{})).questions();
    const auto group = sim::run_session(model, config_for(in, GroupTestingPolicy{rng.next(), 4})).questions();
    wins += group < single;
    group_total += group;
    single_total += single;
    counts += fmt("%s%zu/%zu", i ? " " : "", group, single);
  }
  std::printf("      group-testing counts (group/singleton, max_group 4): %s\n", counts.c_str());
  report(wins >= 95, "group-efficiency",
         fmt("%d/%d instances fewer questions (need 95); totals %zu vs %zu", wins, kInstances, group_total,
             single_total));
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("punchhole-accept-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

std::vector<std::uint8_t> blank_png(int w, int h) {
  return io::encode_png({w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 128)});
}

void durability() {
  SplitMix64 rng(0xD00AB1E);
  int ok = 0;
  std::size_t answers = 0;
  constexpr int kSequences = 50;
  const auto dir = scratch("durability");
  for (int seq = 0; seq < kSequences; ++seq) {
    std::map<std::string, Session> live;
    {
      service::AnnotationService svc(dir);
      service::TaskConfig cfg;
      cfg.base_patch_side = 4 << rng.below(3);
      cfg.max_level = static_cast<int>(rng.below(3));
      switch (rng.below(3)) {
        case 0: cfg.policy = SequentialPolicy{}; break;
        case 1: cfg.policy = ShuffledPolicy{rng.next()}; break;
        default: cfg.policy = GroupTestingPolicy{rng.next(), 1 + static_cast<int>(rng.below(8))};
      }
      const int w = 16 + static_cast<int>(rng.below(49)), h = 16 + static_cast<int>(rng.below(49));
      const auto task = svc.create_task(blank_png(w, h), "q", cfg);
      const int sessions = 1 + static_cast<int>(rng.below(3));
      std::vector<std::string> ids;
      for (int s = 0; s < sessions; ++s) ids.push_back(svc.open_session(task.task_id, "w").session_id);
      const int steps = static_cast<int>(rng.below(60));
      for (int step = 0; step < steps; ++step) {
        const auto& id = ids[rng.below(ids.size())];
        if (svc.current(id).status == SessionStatus::Done) continue;
        svc.answer(id, rng.unit() < 0.3 ? Response::CannotAnswer : Response::CanAnswer, rng.unit() * 3);
        ++answers;
      }
      for (const auto& id : svc.session_ids()) live.emplace(id, *svc.session_state(id));
    }  // "kill": drop every in-memory structure
    service::AnnotationService restarted(dir);
    bool same = restarted.session_ids().size() == live.size();
    for (const auto& [id, state] : live) {
      const auto r = restarted.session_state(id);
      same &= r.has_value() && *r == state;
      // Independent rebuild from the log file alone.
      const auto log = read_log(dir / "logs" / (id + ".jsonl"));
      Session s = Session::replay(log.config, log.answers, true);
      while (s.status() == SessionStatus::LevelComplete) s.advance_level();
      if (s.status() == SessionStatus::Active) s.next_stimulus();
      same &= s == state;
    }
    ok += same;
  }
  fs::remove_all(dir);
  report(ok == kSequences, "durability",
         fmt("%d/%d restarts bit-exact (%zu answers replayed across sequences)", ok, kSequences, answers));
}

void end_to_end_http() {
  const auto dir = scratch("e2e");
  GroundTruthMask mask(64, 64);
  mask.fill({20, 4, 6, 6}, true);
  mask.fill({40, 50, 3, 3}, true);
  const sim::AnnotatorModel model(mask, 0.0, 0.0, 1);
  bool ok = true;
  std::string detail;
  {
    service::AnnotationService svc(dir);
    service::HttpServer server(svc);
    const int port = server.bind_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);

    const auto png = blank_png(64, 64);
    httplib::MultipartFormDataItems items{{"image", std::string(png.begin(), png.end()), "c.png", "image/png"},
                                          {"question", "What is the trend?", "", ""},
                                          {"config", R"({"base_patch_side":16,"max_level":0,"policy":{"kind":"seq"}})", "", ""}};
    auto res = cli.Post("/v1/tasks", items);
    ok &= res && res->status == 201;
    const std::string task_id = ok ? json::parse(res->body).at("task_id").get<std::string>() : "";
    res = cli.Post("/v1/tasks/" + task_id + "/sessions", R"({"worker_id":"scripted"})", "application/json");
    ok &= res && res->status == 200;
    json step = ok ? json::parse(res->body) : json{{"status", "done"}};
    const std::string sid = step.value("session_id", "");
    SplitMix64 noise(1);
    int questions = 0;
    while (ok && step.at("status") == "active") {
      std::vector<PixelRect> hidden;
      for (const auto& r : step.at("hidden")) hidden.push_back({r.at("x"), r.at("y"), r.at("w"), r.at("h")});
      const auto answer = sim::oracle_answer(model, hidden, noise);
      const json body{{"response", answer == Response::CanAnswer ? "can" : "cannot"},
                      {"latency_s", 1.32},
                      {"seq", step.at("seq")}};
      res = cli.Post("/v1/sessions/" + sid + "/answer", body.dump(), "application/json");
      ok &= res && res->status == 200;
      if (ok) step = json::parse(res->body);
      ++questions;
    }
    ok &= step.at("status") == "done";
    res = cli.Get("/v1/tasks/" + task_id + "/map?tau=0.8");
    ok &= res && res->status == 200;
    std::vector<double> http_scores;
    if (ok) {
      const auto map = json::parse(res->body);
      for (const auto& s : map.at("scores")) http_scores.push_back(s.at("score"));
    }
    SessionConfig sc = config_for({64, 64, 16, 0, mask}, SequentialPolicy{});
    const auto in_process = sim::run_session(model, sc);
    const Session finished[] = {in_process.session};
    const auto expected = merge_sessions(finished);
    ok &= http_scores == expected.scores;
    ok &= static_cast<std::size_t>(questions) == in_process.questions();
    detail = fmt("status %s after %d questions over HTTP; map %s in-process simulator (%zu patches)",
                 step.at("status").get<std::string>().c_str(), questions,
                 http_scores == expected.scores ? "equals" : "differs from", expected.scores.size());
    server.stop();
    th.join();
  }
  fs::remove_all(dir);
  report(ok, "end-to-end-http", detail);
}

}  // namespace

int main() {
  std::printf("punchhole acceptance (kernels: %s)\n", kernels::active_kernels().name.data());
  recovery_order_and_counts();
  timing_constants();
  noise_calibration();
  group_efficiency();
  durability();
  end_to_end_http();
  std::printf("%s: %d failing criteria\n", g_failures ? "FAILED" : "ALL PASSED", g_failures);
  return g_failures ? 1 : 0;
}

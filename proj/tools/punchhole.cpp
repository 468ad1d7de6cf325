// punchhole: serve | simulate | export | compare

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "punchhole/aggregate.hpp"
#include "punchhole/errors.hpp"
#include "punchhole/io.hpp"
#include "punchhole/kernels.hpp"
#include "punchhole/rng.hpp"
#include "punchhole/service.hpp"
#include "punchhole/simulator.hpp"

namespace fs = std::filesystem;
using namespace punchhole;

namespace {

service::HttpServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

GroundTruthMask random_mask(int width, int height, double density, std::uint64_t seed) {
  GroundTruthMask mask(width, height);
  SplitMix64 rng(seed);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) mask.set(x, y, rng.unit() < density);
  }
  return mask;
}

int run_serve(const std::string& host, int port, const fs::path& data_dir) {
  service::AnnotationService svc(data_dir);
  service::HttpServer server(svc);
  g_server = &server;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::cerr << "punchhole: serving " << data_dir << " on " << host << ":" << port << " ("
            << kernels::active_kernels().name << " kernels)\n";
  if (!server.listen(host, port)) {
    std::cerr << "punchhole: cannot listen on " << host << ":" << port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Punch-hole importance labeling: annotation service, simulator and map tools"};
  app.require_subcommand(1);

  auto* serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "data";
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "TCP port");
  serve->add_option("--data-dir", data_dir, "Store directory");

  auto* simulate = app.add_subcommand("simulate", "Run simulated annotators and write a report directory");
  int width = 0, height = 0, patch_size = 16, levels = 0, max_group = 8, orders = 1, workers = 1;
  int trials = 1, majority_trials = 0;
  unsigned threads = 1;
  std::string mask_path, policy = "seq", out_dir = "sim-report";
  double theta = 0.0, eps = 0.0, density = 0.1, spq = sim::kDefaultSecondsPerQuestion;
  std::uint64_t seed = 0;
  simulate->add_option("--width", width, "Image width when no mask is given");
  simulate->add_option("--height", height, "Image height when no mask is given");
  simulate->add_option("--mask", mask_path, "Ground-truth mask PNG (non-zero = important)");
  simulate->add_option("--density", density, "Pixel density of a random mask when --mask is absent")
      ->check(CLI::Range(0.0, 1.0));
  simulate->add_option("--patch-size", patch_size, "Base patch side in pixels")->check(CLI::PositiveNumber);
  simulate->add_option("--levels", levels, "Deepest refinement level")->check(CLI::NonNegativeNumber);
  simulate->add_option("--policy", policy, "Punch scheduler")->check(CLI::IsMember({"seq", "shuf", "group"}));
  simulate->add_option("--max-group", max_group, "Largest punch group for --policy group")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--theta", theta, "Tolerated hidden fraction of important area");
  simulate->add_option("--eps", eps, "Answer flip probability");
  simulate->add_option("--orders", orders, "Punch orders per seeded policy")->check(CLI::PositiveNumber);
  simulate->add_option("--workers", workers, "Workers per condition (odd)")->check(CLI::PositiveNumber);
  simulate->add_option("--trials", trials, "Independent trials")->check(CLI::PositiveNumber);
  simulate->add_option("--majority-trials", majority_trials, "Per-patch majority-vote noise trials");
  simulate->add_option("--seconds-per-question", spq, "Time model constant");
  simulate->add_option("--threads", threads, "Worker threads");
  simulate->add_option("--seed", seed, "Master seed");
  simulate->add_option("--out", out_dir, "Report directory");

  auto* exporter = app.add_subcommand("export", "Export a task's merged importance map");
  std::string task_id, export_dir = ".";
  double tau = 0.8;
  exporter->add_option("--task", task_id, "Task id")->required();
  exporter->add_option("--tau", tau, "Agreement threshold in (0.5, 1]");
  exporter->add_option("--out", export_dir, "Output directory");
  exporter->add_option("--data-dir", data_dir, "Store directory");

  auto* comparer = app.add_subcommand("compare", "Compare two per-patch score CSVs");
  std::string a_path, b_path;
  comparer->add_option("--a", a_path, "Prediction CSV (level,row,col,score)")->required();
  comparer->add_option("--b", b_path, "Reference CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "punchhole: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*serve) return run_serve(host, port, data_dir);

    if (*simulate) {
      GroundTruthMask mask;
      if (!mask_path.empty()) {
        mask = io::read_mask_png(mask_path);
        if ((width && width != mask.width()) || (height && height != mask.height())) {
          throw InvalidArgument("--width/--height disagree with the mask size");
        }
      } else {
        if (width < 1 || height < 1) throw InvalidArgument("give --mask or both --width and --height");
        mask = random_mask(width, height, density, derive_seed(seed, {0x6D61736BULL}));
      }
      sim::ExperimentConfig config;
      config.width = mask.width();
      config.height = mask.height();
      config.base_patch_side = patch_size;
      config.max_level = levels;
      if (policy == "seq") {
        config.policies.push_back(SequentialPolicy{});
      } else if (policy == "shuf") {
        config.policies.push_back(ShuffledPolicy{seed});
      } else {
        config.policies.push_back(GroupTestingPolicy{seed, max_group});
      }
      config.annotators.emplace_back(mask, theta, eps, seed);
      config.orders = orders;
      config.workers = workers;
      config.trials = trials;
      config.majority_trials = majority_trials;
      config.seconds_per_question = spq;
      config.seed = seed;
      config.threads = threads;
      const auto report = sim::run_experiment(config);
      sim::write_report(report, out_dir);
      double mean_iou = 0.0;
      for (const auto& r : report.runs) mean_iou += r.iou;
      mean_iou /= static_cast<double>(report.runs.size());
      std::printf("runs %zu  mean iou %.4f  est seconds %.2f  report %s\n", report.runs.size(), mean_iou,
                  report.total_est_seconds, out_dir.c_str());
      return 0;
    }

    if (*exporter) {
      service::AnnotationService svc(data_dir);
      const auto result = svc.get_map(task_id, tau);
      fs::create_directories(export_dir);
      const fs::path base = fs::path(export_dir) / task_id;
      io::write_scores_csv(fs::path(base.string() + ".csv"), result.map);
      std::map<PatchId, double> patches;
      for (std::size_t i = 0; i < result.map.scores.size(); ++i) {
        patches[result.map.grid.id_at(i)] = result.map.scores[i];
      }
      const ImageRef image{task_id, result.map.grid.width, result.map.grid.height, ""};
      io::write_png(fs::path(base.string() + ".png"),
                    io::quantize(rasterize_patches(patches, result.map.grid, image)));
      std::ofstream(base.string() + ".json") << service::map_to_json(result).dump(2) << "\n";
      std::printf("exported %s (%zu workers, %zu controversial patches)\n", base.string().c_str(),
                  result.map.n_workers, result.agreement.controversial.size());
      return 0;
    }

    if (*comparer) {
      const auto a = io::read_scores_csv(fs::path(a_path));
      const auto b = io::read_scores_csv(fs::path(b_path));
      const auto m = compare(a, b);
      const auto fmt = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("undefined");
      };
      std::printf("iou %.6f\nprecision %.6f\nrecall %.6f\npearson %s\nspearman %s\n", m.iou_at_half,
                  m.precision, m.recall, fmt(m.pearson).c_str(), fmt(m.spearman).c_str());
      return 0;
    }
  } catch (const service::ServiceError& e) {
    std::cerr << "punchhole: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "punchhole: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

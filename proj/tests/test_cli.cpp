#include <unistd.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "punchhole/io.hpp"
#include "json.hpp"

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = PUNCHHOLE_CLI;

struct Result {
  int exit_code;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("punchhole-cli-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

pid_t spawn_server(int port, const fs::path& data) {
  const std::string port_s = std::to_string(port);
  const std::string data_s = data.string();
  std::vector<char*> argv{const_cast<char*>(kCli.c_str()), const_cast<char*>("serve"), const_cast<char*>("--port"),
                          const_cast<char*>(port_s.c_str()), const_cast<char*>("--data-dir"),
                          const_cast<char*>(data_s.c_str()), nullptr};
  pid_t pid = 0;
  REQUIRE(::posix_spawn(&pid, kCli.c_str(), nullptr, nullptr, argv.data(), environ) == 0);
  httplib::Client c("127.0.0.1", port);
  for (int i = 0; i < 200; ++i) {
    if (auto r = c.Get("/v1/health"); r && r->status == 200) return pid;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  ::kill(pid, SIGKILL);
  FAIL("server did not come up");
  return -1;
}

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

// Kills the server if an assertion leaves the test early.
struct ServerGuard {
  pid_t& pid;
  ~ServerGuard() {
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
    }
  }
};

}  // namespace

TEST_CASE("usage errors exit 2") {
  auto r = run("simulate --no-such-flag");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("Usage") != std::string::npos);
  CHECK(run("").exit_code == 2);
  CHECK(run("simulate --policy nope --width 8 --height 8").exit_code == 2);
}

TEST_CASE("runtime errors exit 1 with one line") {
  auto r = run("simulate --mask /nonexistent/mask.png");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("punchhole: ") == 0);
  CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
  CHECK(run("compare --a /nonexistent.csv --b /nonexistent.csv").exit_code == 1);
}

TEST_CASE("simulate noiseless gives iou 1 on every row") {
  const auto dir = scratch("sim");
  punchhole::GroundTruthMask mask(64, 48);
  mask.fill({10, 10, 12, 5}, true);
  mask.set(60, 40, true);
  punchhole::io::write_mask_png(dir / "mask.png", mask);
  for (const char* policy : {"seq", "shuf", "group"}) {
    const auto out = dir / policy;
    const auto r = run("simulate --mask " + (dir / "mask.png").string() + " --patch-size 16 --levels 2 --policy " +
                       policy + " --orders 3 --workers 3 --seed 5 --out " + out.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    std::ifstream in(out / "report.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("policy,seed,level,questions,iou,precision,recall,est_seconds", 0) == 0);
    int rows = 0;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      REQUIRE(cells.size() >= 8);
      CHECK(cells[0] == policy);
      CHECK(cells[4] == "1");
      ++rows;
    }
    CHECK(rows == (std::string(policy) == "seq" ? 3 : 9));
    CHECK(fs::exists(out / "disagreement.png"));
  }
  fs::remove_all(dir);
}

TEST_CASE("compare a file with itself") {
  const auto dir = scratch("cmp");
  {
    std::ofstream f(dir / "a.csv");
    f << "level,row,col,score\n0,0,0,1\n0,0,1,0\n0,1,0,0.6\n0,1,1,0.2\n";
  }
  const auto r = run("compare --a " + (dir / "a.csv").string() + " --b " + (dir / "a.csv").string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("iou 1.000000") != std::string::npos);
  CHECK(r.output.find("pearson 1.0") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("serve, scripted client, kill and restart, export") {
  const auto dir = scratch("serve");
  const int port = free_port();
  pid_t pid = spawn_server(port, dir / "data");
  ServerGuard guard{pid};
  httplib::Client c("127.0.0.1", port);

  punchhole::io::GrayImage img{64, 64, std::vector<std::uint8_t>(64 * 64, 90)};
  const auto png = punchhole::io::encode_png(img);
  auto res = c.Post("/v1/tasks?question=Which%20bar%3F", std::string(png.begin(), png.end()), "image/png");
  REQUIRE_MESSAGE(res, httplib::to_string(res.error()));
  REQUIRE(res->status == 201);
  const std::string task_id = json::parse(res->body).at("task_id");
  res = c.Post("/v1/tasks/" + task_id + "/sessions", R"({"worker_id":"w"})", "application/json");
  REQUIRE(res);
  const std::string sid = json::parse(res->body).at("session_id");

  const auto answer = [&](httplib::Client& client, int seq) {
    const json body{{"response", seq == 3 ? "cannot" : "can"}, {"latency_s", 1.0}, {"seq", seq}};
    auto r = client.Post("/v1/sessions/" + sid + "/answer", body.dump(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    return json::parse(r->body);
  };
  for (int i = 0; i < 7; ++i) answer(c, i);
  const auto before = json::parse(c.Get("/v1/sessions/" + sid)->body);

  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  pid = -1;
  pid = spawn_server(port, dir / "data");
  httplib::Client c2("127.0.0.1", port);
  const auto after = json::parse(c2.Get("/v1/sessions/" + sid)->body);
  CHECK(after == before);

  json step = after;
  while (step.at("status") != "done") step = answer(c2, step.at("seq").get<int>());
  CHECK(step.at("questions") == 16);
  ::kill(pid, SIGTERM);
  ::waitpid(pid, nullptr, 0);
  pid = -1;

  const auto r = run("export --task " + task_id + " --data-dir " + (dir / "data").string() + " --out " +
                     (dir / "export").string());
  CHECK_MESSAGE(r.exit_code == 0, r.output);
  CHECK(fs::exists(dir / "export" / (task_id + ".csv")));
  CHECK(fs::exists(dir / "export" / (task_id + ".png")));
  CHECK(run("export --task t-missing --data-dir " + (dir / "data").string()).exit_code == 1);
  fs::remove_all(dir);
}

#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>

#include <thread>

#include "aqmon/http_server.hpp"
#include "test_support.hpp"

using namespace aqmon;
using aqmon::testkit::TempDir;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(AQMON_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return {};
  RunResult r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.exit_code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string scenario() { return aqmon::testkit::source_path("scenarios/fleet_el_salvador.json").string(); }

int free_port() { return aqmon::testkit::unused_port(); }

/// `aqmon serve` as a child process.
class ServeProcess {
 public:
  ServeProcess(const fs::path& config) {
    pid_ = ::fork();
    if (pid_ == 0) {
      ::execl(AQMON_CLI_PATH, AQMON_CLI_PATH, "serve", "--config", config.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
  }
  ~ServeProcess() {
    if (pid_ > 0 && !reaped_) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }
  bool wait_ready(int port) {
    httplib::Client cli("127.0.0.1", port);
    for (int i = 0; i < 200; ++i) {
      if (auto res = cli.Get("/v1/stations")) return true;
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
    return false;
  }
  int interrupt() {
    ::kill(pid_, SIGINT);
    int st = 0;
    ::waitpid(pid_, &st, 0);
    reaped_ = true;
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }

 private:
  pid_t pid_ = -1;
  bool reaped_ = false;
};

fs::path write_server_config(const TempDir& dir, int port) {
  ojson cfg{{"listen", "127.0.0.1:" + std::to_string(port)},
            {"data_dir", (dir / "data").string()},
            {"sync_writes", false},
            {"rules", aqmon::testkit::source_path("scenarios/rules.json").string()},
            {"stations", scenario()}};
  const auto path = dir / "server.json";
  std::ofstream(path) << cfg.dump(2);
  return path;
}

}  // namespace

TEST(CliIcca, MatchesCore) {
  auto r = run("icca --pm25 15.3");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "50 Buena (green)\n");
  EXPECT_EQ(run("icca --pm25 0").out, "0 Buena (green)\n");
  const auto core = sub_index(Pollutant::PM25, 27.85);
  EXPECT_EQ(run("icca --pm25 27.85").out,
            std::to_string(core.value) + " " + std::string(core.cat().name) + " (yellow)\n");
  EXPECT_EQ(run("icca --pm25 10 --pm10 424").out.substr(0, 4), "300 ");
  EXPECT_NE(run("icca --pm25 750").out.find("beyond scale"), std::string::npos);
}

TEST(CliIcca, UsageErrors) {
  EXPECT_EQ(run("icca --pm25 -1").exit_code, 2);
  EXPECT_EQ(run("icca").exit_code, 2);
  EXPECT_EQ(run("icca --pm25 abc").exit_code, 2);
  EXPECT_EQ(run("").exit_code, 2);
  EXPECT_EQ(run("nonsense").exit_code, 2);
  EXPECT_EQ(run("--help").exit_code, 0);
}

TEST(CliFrame, EncodeAndDecode) {
  auto r = run("frame --pm25 37 --pm10 61");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("pm2_5_atm     37"), std::string::npos);
  const auto bytes = encode_pm_frame(PmFrame{});
  std::string hex;
  for (auto b : bytes) {
    char buf[4];
    std::snprintf(buf, sizeof buf, "%02X", b);
    hex += buf;
  }
  EXPECT_EQ(run("frame --hex " + hex).exit_code, 0);
  hex[10] = hex[10] == '0' ? '1' : '0';
  r = run("frame --hex " + hex);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.out.find("BadChecksum"), std::string::npos);
}

TEST(CliSimulate, OfflineIsDeterministic) {
  TempDir dir;
  const auto a = dir / "a.ndjson", b = dir / "b.ndjson";
  auto r = run("simulate --scenario " + scenario() + " --duration 24 --seed 7 --offline " + a.string() +
               " --report " + (dir / "rep.json").string());
  ASSERT_EQ(r.exit_code, 0);
  ASSERT_EQ(run("simulate --scenario " + scenario() + " --duration 24 --seed 7 --offline " + b.string()).exit_code, 0);
  EXPECT_EQ(read_file(a), read_file(b));
  const auto rep = ojson::parse(read_file(dir / "rep.json"));
  EXPECT_EQ(rep["delivered"], 360);
  EXPECT_NE(r.out.find("delivered 360"), std::string::npos);
}

TEST(CliSimulate, ZeroDurationIsEmpty) {
  TempDir dir;
  const auto a = dir / "a.ndjson";
  auto r = run("simulate --scenario " + scenario() + " --duration 0 --seed 7 --offline " + a.string() +
               " --report " + (dir / "rep.json").string());
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(read_file(a), "");
  EXPECT_EQ(ojson::parse(read_file(dir / "rep.json"))["delivered"], 0);
}

TEST(CliSimulate, UnreachableServerIsPartialNotFatal) {
  auto r = run("simulate --scenario " + scenario() + " --duration 2 --seed 1 --server http://127.0.0.1:" +
               std::to_string(free_port()));
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("delivered 0"), std::string::npos);
}

TEST(CliSimulate, UsageErrors) {
  EXPECT_EQ(run("simulate --scenario " + scenario() + " --duration 1").exit_code, 2);
  EXPECT_EQ(run("simulate --scenario /nonexistent.json --offline /tmp/x").exit_code, 2);
  EXPECT_EQ(run("simulate --scenario " + scenario() + " --duration -1 --offline /tmp/x").exit_code, 2);
}

TEST(CliServe, BadConfigExitsTwo) {
  TempDir dir;
  EXPECT_EQ(run("serve --config " + (dir / "missing.json").string()).exit_code, 2);
  std::ofstream(dir / "bad.json") << R"({"listen":"127.0.0.1:1"})";
  EXPECT_EQ(run("serve --config " + (dir / "bad.json").string()).exit_code, 2);
}

TEST(CliServe, EndToEndWithReportAndReplay) {
  TempDir dir;
  const int port = free_port();
  const auto cfg = write_server_config(dir, port);
  const std::string url = "http://127.0.0.1:" + std::to_string(port);
  ServeProcess serve(cfg);
  ASSERT_TRUE(serve.wait_ready(port));
  EXPECT_TRUE(fs::is_directory(dir / "data"));

  auto sim = run("simulate --scenario " + scenario() + " --duration 24 --seed 7 --server " + url);
  ASSERT_EQ(sim.exit_code, 0);
  EXPECT_NE(sim.out.find("delivered 360"), std::string::npos);

  auto rep = run("report --server " + url + " --window 24h --json " + (dir / "rows.json").string());
  ASSERT_EQ(rep.exit_code, 0);
  const auto rows = ojson::parse(read_file(dir / "rows.json"));
  ASSERT_EQ(rows.size(), 5u);

  // every number in the report equals the server's own /icca answer
  httplib::Client cli("127.0.0.1", port);
  for (const auto& row : rows) {
    const auto id = row["station"].get<std::string>();
    const auto icca = ojson::parse(cli.Get("/v1/stations/" + id + "/icca?window=86400")->body);
    EXPECT_EQ(row["icca"], icca["value"]);
    EXPECT_EQ(row["category"], icca["category"]);
    EXPECT_EQ(row["color"], icca["color"]);
    EXPECT_EQ(row["pm25_mean"], icca["pm25"]["mean"]);
    EXPECT_EQ(row["pm10_mean"], icca["pm10"]["mean"]);
    EXPECT_NE(rep.out.find(id), std::string::npos);
  }

  EXPECT_EQ(run("report --server " + url + " --station nowhere").exit_code, 1);
  auto one = run("report --server " + url + " --station sv-santa-ana");
  EXPECT_EQ(one.exit_code, 0);
  EXPECT_EQ(std::count(one.out.begin(), one.out.end(), '\n'), 2);

  // replaying the same day again is all duplicates
  const auto frames = dir / "frames.ndjson";
  ASSERT_EQ(run("simulate --scenario " + scenario() + " --duration 24 --seed 7 --offline " + frames.string()).exit_code, 0);
  auto rp = run("replay --input " + frames.string() + " --server " + url);
  EXPECT_EQ(rp.exit_code, 0);
  EXPECT_EQ(rp.out, "409 360\n");

  EXPECT_EQ(serve.interrupt(), 0);
  EXPECT_EQ(run("report --server " + url).exit_code, 1);

  Store store(dir / "data");
  EXPECT_EQ(store.total_count(), 360u);
}

TEST(CliReplay, InProcessMatchesCounts) {
  TempDir dir;
  const auto frames = dir / "frames.ndjson";
  ASSERT_EQ(run("simulate --scenario " + scenario() + " --duration 6 --seed 3 --offline " + frames.string()).exit_code, 0);
  const auto cfg = write_server_config(dir, 1);
  auto r = run("replay --input " + frames.string() + " --config " + cfg.string());
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "202 90\n");
  EXPECT_EQ(Store(dir / "data").total_count(), 90u);
}

TEST(CliBackup, RoundTrip) {
  TempDir dir;
  const auto frames = dir / "frames.ndjson";
  ASSERT_EQ(run("simulate --scenario " + scenario() + " --duration 2 --seed 3 --offline " + frames.string()).exit_code, 0);
  const auto cfg = write_server_config(dir, 1);
  ASSERT_EQ(run("replay --input " + frames.string() + " --config " + cfg.string()).exit_code, 0);
  ASSERT_EQ(run("backup --data-dir " + (dir / "data").string() + " --dest " + (dir / "bak").string()).exit_code, 0);
  auto r = run("restore --backup " + (dir / "bak").string() + " --data-dir " + (dir / "restored").string());
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "restored 30 records\n");
}

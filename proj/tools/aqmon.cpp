// aqmon: operator command line for the air-quality monitoring service.
//
// Exit codes: 0 success (including partial simulation delivery),
// 1 runtime failure, 2 usage or configuration error.

#include <signal.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "aqmon/http_server.hpp"
#include "aqmon/transports.hpp"

namespace {

using namespace aqmon;

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool stdout_is_tty() { return ::isatty(STDOUT_FILENO) == 1; }

std::string paint(const std::string& text, std::string_view color) {
  if (!stdout_is_tty()) return text;
  static const std::map<std::string_view, const char*> codes{
      {"green", "\x1b[32m"},  {"yellow", "\x1b[33m"},        {"orange", "\x1b[38;5;208m"},
      {"red", "\x1b[31m"},    {"purple", "\x1b[35m"},        {"maroon", "\x1b[38;5;88m"}};
  auto it = codes.find(color);
  if (it == codes.end()) return text;
  return it->second + text + "\x1b[0m";
}

/// "24h", "90m", "3600s" or bare seconds.
std::int64_t parse_window(const std::string& s) {
  if (s.empty()) throw UsageError("empty window");
  std::int64_t unit = 1;
  std::string digits = s;
  switch (s.back()) {
    case 'h': unit = 3600; digits.pop_back(); break;
    case 'm': unit = 60; digits.pop_back(); break;
    case 's': digits.pop_back(); break;
    default: break;
  }
  auto v = parse_int(digits);
  if (!v || *v <= 0) throw UsageError("bad window: " + s);
  return *v * unit;
}

// ---------------------------------------------------------------------------

int cmd_serve(const std::string& config_path, const std::string& data_dir_override) {
  ServiceConfig cfg;
  try {
    cfg = load_service_config(config_path);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (!data_dir_override.empty()) cfg.data_dir = data_dir_override;

  // block before any thread exists so only sigwait sees these
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Service svc(cfg);
  HttpServer server(svc);
  if (!server.bind(cfg.listen_host, cfg.listen_port)) {
    std::fprintf(stderr, "aqmon: cannot bind %s:%d\n", cfg.listen_host.c_str(), cfg.listen_port);
    return kRuntime;
  }
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  std::fprintf(stderr, "aqmon: listening on %s:%d, data in %s, %zu stations\n", cfg.listen_host.c_str(),
               cfg.listen_port, cfg.data_dir.c_str(), svc.store().stations().size());

  int sig = 0;
  sigwait(&set, &sig);
  std::fprintf(stderr, "aqmon: caught signal %d, shutting down\n", sig);
  server.stop();
  listener.join();
  svc.flush();
  return kOk;
}

// ---------------------------------------------------------------------------

void print_run_report(const RunReport& r) {
  std::printf("%-24s %7s %9s %9s %8s %8s %8s\n", "station", "cycles", "generated", "delivered", "buffered",
              "rejected", "dropped");
  for (const auto& n : r.nodes)
    std::printf("%-24s %7llu %9llu %9llu %8llu %8llu %8llu\n", n.station_id.c_str(),
                static_cast<unsigned long long>(n.cycles), static_cast<unsigned long long>(n.counters.generated),
                static_cast<unsigned long long>(n.counters.delivered), static_cast<unsigned long long>(n.buffered),
                static_cast<unsigned long long>(n.counters.rejected),
                static_cast<unsigned long long>(n.counters.dropped));
  std::printf("delivered %llu  send failures %llu  phase violations %llu\n",
              static_cast<unsigned long long>(r.total_delivered()),
              [&] {
                unsigned long long f = 0;
                for (const auto& n : r.nodes) f += n.counters.send_failures;
                return f;
              }(),
              static_cast<unsigned long long>(r.phase_violations));
}

int cmd_simulate(const std::string& scenario_path, double hours, std::uint64_t seed, const std::string& server,
                 const std::string& offline, const std::string& report_path, bool show_display) {
  if (server.empty() == offline.empty()) throw UsageError("simulate needs exactly one of --server or --offline");
  if (!(hours >= 0.0)) throw UsageError("--duration must be >= 0");
  Fleet fleet;
  try {
    fleet = fleet_from_json(load_json_file(scenario_path));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  std::unique_ptr<Transport> tx;
  if (!server.empty()) {
    try {
      tx = std::make_unique<HttpTransport>(server);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  } else {
    tx = std::make_unique<OfflineFileTransport>(offline);
  }
  FleetOptions opts;
  if (show_display)
    opts.on_effects = [](const StepEffects& fx) {
      if (!fx.display.empty()) std::puts(fx.display.c_str());
    };
  const auto horizon = static_cast<std::int64_t>(std::llround(hours * 3600.0));
  const RunReport rep = run_fleet(fleet, horizon, seed, *tx, opts);
  print_run_report(rep);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << to_json(rep).dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + report_path);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_replay(const std::string& input, const std::string& server, const std::string& config_path) {
  if (server.empty() == config_path.empty()) throw UsageError("replay needs exactly one of --server or --config");
  std::ifstream in(input);
  if (!in) throw UsageError("cannot read " + input);

  std::unique_ptr<Service> svc;
  std::unique_ptr<Transport> tx;
  if (!server.empty()) {
    tx = std::make_unique<HttpTransport>(server);
  } else {
    try {
      svc = std::make_unique<Service>(load_service_config(config_path));
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    tx = std::make_unique<ServiceTransport>(*svc);
  }
  std::map<int, std::uint64_t> by_status;
  std::uint64_t failed = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto r = tx->send(line, 0);
    if (r.status == SendStatus::Failed && r.http_status == 0) ++failed;
    else ++by_status[r.http_status];
  }
  if (svc) svc->flush();
  for (const auto& [status, n] : by_status) std::printf("%d %llu\n", status, static_cast<unsigned long long>(n));
  if (failed) {
    std::fprintf(stderr, "aqmon: %llu frames could not be sent\n", static_cast<unsigned long long>(failed));
    return kRuntime;
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_icca(std::optional<double> pm25, std::optional<double> pm10, const std::string& aggregation) {
  if (!pm25 && !pm10) throw UsageError("give --pm25 and/or --pm10");
  if ((pm25 && !(*pm25 >= 0.0)) || (pm10 && !(*pm10 >= 0.0)))
    throw UsageError("concentrations must be >= 0");
  const auto agg = aggregation == "pm25_only" ? Aggregation::Pm25Only : Aggregation::Max;
  if (agg == Aggregation::Pm25Only && !pm25) throw UsageError("pm25_only needs --pm25");
  const IccaResult r = combined_icca(pm25, pm10, agg);
  const auto& c = r.cat();
  std::string line = std::to_string(r.value) + " " + std::string(c.name) + " (" + std::string(c.color) + ")";
  if (r.beyond_scale) line += " beyond scale";
  std::puts(paint(line, c.color).c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct ReportRow {
  std::string station;
  std::int64_t window_s = 0;
  std::optional<double> pm25_mean, pm10_mean;
  std::optional<int> value;
  std::string category;
  std::string color;
  double coverage = 0.0;
};

ojson to_json(const ReportRow& r) {
  auto opt = [](const auto& v) { return v ? ojson(*v) : ojson(nullptr); };
  return ojson{{"station", r.station},     {"window_s", r.window_s},     {"pm25_mean", opt(r.pm25_mean)},
               {"pm10_mean", opt(r.pm10_mean)}, {"icca", opt(r.value)}, {"category", r.category},
               {"color", r.color},         {"coverage", r.coverage}};
}

ojson get_json(httplib::Client& cli, const std::string& path, int& status) {
  auto res = cli.Get(path);
  if (!res) throw std::runtime_error("request failed: " + httplib::to_string(res.error()));
  status = res->status;
  auto j = ojson::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("server sent invalid JSON for " + path);
  return j;
}

int cmd_report(const std::string& server, const std::string& station, const std::string& window,
               const std::string& json_path) {
  const std::int64_t window_s = parse_window(window);
  auto url = parse_url(server);
  if (!url) throw UsageError("unsupported server url: " + server);
  auto cli = make_client(url->origin, std::chrono::milliseconds(5000));
  const std::string base = url->path == "/" ? "" : url->path;

  std::vector<std::string> ids;
  int status = 0;
  if (station.empty()) {
    const auto list = get_json(*cli, base + "/v1/stations", status);
    if (status != 200) throw std::runtime_error("GET /v1/stations: HTTP " + std::to_string(status));
    for (const auto& s : list) ids.push_back(s.at("station_id").get<std::string>());
  } else {
    ids.push_back(station);
  }

  std::vector<ReportRow> rows;
  for (const auto& id : ids) {
    const auto j = get_json(*cli, base + "/v1/stations/" + id + "/icca?window=" + std::to_string(window_s), status);
    if (status == 404) {
      std::fprintf(stderr, "aqmon: unknown station %s\n", id.c_str());
      return kRuntime;
    }
    if (status != 200) throw std::runtime_error("GET icca for " + id + ": HTTP " + std::to_string(status));
    ReportRow row;
    row.station = id;
    row.window_s = window_s;
    if (j.at("pm25").at("sample_count").get<std::int64_t>() > 0) row.pm25_mean = j["pm25"]["mean"].get<double>();
    if (j.at("pm10").at("sample_count").get<std::int64_t>() > 0) row.pm10_mean = j["pm10"]["mean"].get<double>();
    if (j.value("sufficient", false)) {
      row.value = j.at("value").get<int>();
      row.category = j.at("category").get<std::string>();
      row.color = j.at("color").get<std::string>();
    }
    row.coverage = j.value("coverage", 0.0);
    rows.push_back(std::move(row));
  }

  auto num = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("-");
    std::snprintf(buf, sizeof buf, "%.1f", *v);
    return std::string(buf);
  };
  std::printf("%-24s %8s %9s %9s %5s %-8s %-42s\n", "station", "coverage", "pm25_mean", "pm10_mean", "icca",
              "color", "category");
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %7.0f%% %9s %9s %5s %-8s %-42s", r.station.c_str(),
                  100.0 * std::min(r.coverage, 1.0), num(r.pm25_mean).c_str(), num(r.pm10_mean).c_str(),
                  r.value ? std::to_string(*r.value).c_str() : "-", r.value ? r.color.c_str() : "-",
                  r.value ? r.category.c_str() : "insufficient data");
    std::puts(paint(line, r.color).c_str());
  }
  if (!json_path.empty()) {
    ojson arr = ojson::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    std::ofstream out(json_path);
    out << arr.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + json_path);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> parse_hex(const std::string& text) {
  std::vector<std::uint8_t> out;
  std::string digits;
  for (char ch : text)
    if (std::isxdigit(static_cast<unsigned char>(ch))) digits += ch;
    else if (!std::isspace(static_cast<unsigned char>(ch)) && ch != ':' && ch != ',')
      throw UsageError(std::string("bad hex character: ") + ch);
  if (digits.size() % 2) throw UsageError("odd number of hex digits");
  for (std::size_t i = 0; i < digits.size(); i += 2)
    out.push_back(static_cast<std::uint8_t>(std::stoi(digits.substr(i, 2), nullptr, 16)));
  return out;
}

int cmd_frame(const std::string& hex, std::optional<int> pm25, std::optional<int> pm10) {
  std::vector<std::uint8_t> bytes;
  if (!hex.empty()) {
    bytes = parse_hex(hex);
  } else {
    PmFrame f;
    auto clamp = [](int v) {
      if (v < 0 || v > 0xFFFF) throw UsageError("frame values must be in 0..65535");
      return static_cast<std::uint16_t>(v);
    };
    f.pm2_5_std = f.pm2_5_atm = clamp(pm25.value_or(0));
    f.pm10_std = f.pm10_atm = clamp(pm10.value_or(0));
    const auto enc = encode_pm_frame(f);
    bytes.assign(enc.begin(), enc.end());
  }
  std::fputs(dump_pm_frame(bytes).c_str(), stdout);
  return decode_pm_frame(bytes).ok() ? kOk : kRuntime;
}

// ---------------------------------------------------------------------------

int cmd_backup(const std::string& data_dir, const std::string& dest) {
  Store store(data_dir);
  const auto man = store.backup(dest);
  for (const auto& [id, n] : man.record_counts) std::printf("%s %llu\n", id.c_str(), static_cast<unsigned long long>(n));
  return kOk;
}

int cmd_restore(const std::string& backup_dir, const std::string& data_dir) {
  const auto bad = Store::verify_backup(backup_dir);
  for (const auto& f : bad) std::fprintf(stderr, "aqmon: checksum mismatch: %s\n", f.c_str());
  if (!bad.empty()) return kRuntime;
  Store::restore(backup_dir, data_dir);
  Store check(data_dir);
  std::printf("restored %zu records\n", check.total_count());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aqmon: air-quality monitoring service and tools"};
  app.require_subcommand(1);

  std::string config, data_dir;
  auto* serve = app.add_subcommand("serve", "Run the ingestion and query server");
  serve->add_option("--config", config, "Server config file")->required();
  serve->add_option("--data-dir", data_dir, "Override the config's data_dir");

  std::string scenario, server, offline, report_json;
  double hours = 24.0;
  std::uint64_t seed = 0;
  bool show_display = false;
  auto* sim = app.add_subcommand("simulate", "Run a virtual station fleet");
  sim->add_option("--scenario", scenario, "Fleet scenario file")->required();
  sim->add_option("--duration", hours, "Simulated hours")->capture_default_str();
  sim->add_option("--seed", seed, "Noise seed")->capture_default_str();
  sim->add_option("--server", server, "Server base URL, e.g. http://127.0.0.1:8080");
  sim->add_option("--offline", offline, "Write frames to this NDJSON file instead of sending");
  sim->add_option("--report", report_json, "Also write the run report as JSON");
  sim->add_flag("--display", show_display, "Print each node's display line");

  std::string input;
  auto* replay = app.add_subcommand("replay", "Submit an offline frame file");
  replay->add_option("--input", input, "NDJSON frame file")->required();
  replay->add_option("--server", server, "Server base URL");
  replay->add_option("--config", config, "Server config; ingest in-process instead of over HTTP");

  std::optional<double> pm25, pm10;
  std::string aggregation = "max";
  auto* icca = app.add_subcommand("icca", "Index for concentrations in ug/m3");
  icca->add_option("--pm25", pm25, "PM2.5 concentration");
  icca->add_option("--pm10", pm10, "PM10 concentration");
  icca->add_option("--aggregation", aggregation, "max or pm25_only")
      ->check(CLI::IsMember({"max", "pm25_only"}))
      ->capture_default_str();

  std::string station, window = "24h";
  auto* report = app.add_subcommand("report", "Per-station rolling summary from a running server");
  report->add_option("--server", server, "Server base URL")->required();
  report->add_option("--station", station, "Only this station");
  report->add_option("--window", window, "Window length: 24h, 90m, 3600s")->capture_default_str();
  report->add_option("--json", report_json, "Also write the rows as JSON");

  std::string hex;
  std::optional<int> frame_pm25, frame_pm10;
  auto* frame = app.add_subcommand("frame", "Decode a 32-byte sensor frame, or encode one");
  frame->add_option("--hex", hex, "Frame bytes as hex");
  frame->add_option("--pm25", frame_pm25, "Encode a frame with this PM2.5 reading");
  frame->add_option("--pm10", frame_pm10, "Encode a frame with this PM10 reading");

  std::string dest;
  auto* backup = app.add_subcommand("backup", "Copy a data directory with a checksum manifest");
  backup->add_option("--data-dir", data_dir, "Data directory")->required();
  backup->add_option("--dest", dest, "Backup directory")->required();

  std::string backup_dir;
  auto* restore = app.add_subcommand("restore", "Verify a backup and copy it into a data directory");
  restore->add_option("--backup", backup_dir, "Backup directory")->required();
  restore->add_option("--data-dir", data_dir, "Target data directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*serve) return cmd_serve(config, data_dir);
    if (*sim) return cmd_simulate(scenario, hours, seed, server, offline, report_json, show_display);
    if (*replay) return cmd_replay(input, server, config);
    if (*icca) return cmd_icca(pm25, pm10, aggregation);
    if (*report) return cmd_report(server, station, window, report_json);
    if (*frame) return cmd_frame(hex, frame_pm25, frame_pm10);
    if (*backup) return cmd_backup(data_dir, dest);
    if (*restore) return cmd_restore(backup_dir, data_dir);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "aqmon: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aqmon: %s\n", e.what());
    return kRuntime;
  }
  return kUsage;
}

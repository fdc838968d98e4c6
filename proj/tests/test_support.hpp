#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "aqmon/node_sim.hpp"
#include "aqmon/service.hpp"

namespace aqmon::testkit {

/// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("aqmon-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(AQMON_SOURCE_DIR) / rel;
}

inline Fleet reference_fleet() {
  return fleet_from_json(load_json_file(source_path("scenarios/fleet_el_salvador.json")));
}

inline RuleConfig reference_rules() {
  return rule_config_from_json(load_json_file(source_path("scenarios/rules.json")));
}

inline StationRecord station_of(const NodeConfig& n) {
  return {n.station_id, n.display_name, n.latitude, n.longitude, n.token, n.report_period_s, 0};
}

/// Service config for a fleet, writing under `dir`; fsync off for speed.
inline ServiceConfig config_for(const Fleet& fleet, const std::filesystem::path& dir,
                                RuleConfig rules = reference_rules()) {
  ServiceConfig c;
  c.data_dir = dir;
  c.rules = std::move(rules);
  c.sync_writes = false;
  for (const auto& n : fleet.nodes) c.seed_stations.push_back(station_of(n));
  return c;
}

/// A loopback port with nothing listening on it (bound, then released).
inline int unused_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

inline Measurement make_measurement(const std::string& id, std::uint64_t seq, std::int64_t ts,
                                    double pm25 = 10.0, double pm10 = 20.0, double temp = 25.0) {
  return Measurement{id, seq, ts, pm25, pm10, temp, 0};
}

inline StationRecord simple_station(const std::string& id, std::string token = "secret",
                                    std::int64_t period = 1200) {
  return {id, id, 13.7, -89.2, std::move(token), period, 0};
}

}  // namespace aqmon::testkit

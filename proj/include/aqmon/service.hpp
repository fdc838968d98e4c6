#pragma once

// Ingestion and query service: validates telemetry, persists it, keeps each
// station's rolling ICCA current and drives the alert rules.
//
// Every accepted frame goes through its station's pipeline under that
// station's lock, so sequence checks, appends and rule state updates happen
// in one total order per station while different stations proceed in
// parallel.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aqmon/icca.hpp"
#include "aqmon/rules.hpp"
#include "aqmon/sinks.hpp"
#include "aqmon/store.hpp"
#include "aqmon/telemetry.hpp"

namespace aqmon {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WindowSettings {
  std::int64_t window_s = 24 * 3600;
  double coverage_min = kDefaultCoverageMin;
  Aggregation aggregation = Aggregation::Max;
};

struct ServiceConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::filesystem::path data_dir = "data";
  WindowSettings window;
  AcceptRanges ranges;
  RuleConfig rules;
  std::vector<StationRecord> seed_stations;
  std::array<std::string, 6> colors{"green", "yellow", "orange", "red", "purple", "maroon"};
  bool sync_writes = true;
  std::optional<std::filesystem::path> request_log;
};

/// Station records from either a bare array or an object with "stations".
inline std::vector<StationRecord> stations_from_json(const ojson& j) {
  const ojson& arr = j.is_object() ? j.at("stations") : j;
  std::vector<StationRecord> out;
  for (const auto& e : arr) out.push_back(station_from_json(e));
  return out;
}

inline ojson load_json_file(const std::filesystem::path& p) {
  std::string text;
  try {
    text = read_file(p);
  } catch (const StoreError& e) {
    throw ConfigError(e.what());
  }
  ojson j = ojson::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in " + p.string());
  return j;
}

/// Relative paths inside the config resolve against the config file's folder.
inline ServiceConfig service_config_from_json(const ojson& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ServiceConfig c;
  auto rel = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() ? base_dir / path : path;
  };
  try {
    if (j.contains("listen")) {
      const auto listen = j.at("listen").get<std::string>();
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) throw ConfigError("listen must be host:port");
      c.listen_host = listen.substr(0, colon);
      c.listen_port = std::stoi(listen.substr(colon + 1));
      if (c.listen_port < 0 || c.listen_port > 65535) throw ConfigError("bad listen port");
    }
    if (!j.contains("data_dir")) throw ConfigError("config needs data_dir");
    c.data_dir = rel(j.at("data_dir").get<std::string>());
    c.window.coverage_min = j.value("coverage_min", c.window.coverage_min);
    if (!(c.window.coverage_min >= 0.0 && c.window.coverage_min <= 1.0))
      throw ConfigError("coverage_min must be in [0, 1]");
    c.window.window_s = static_cast<std::int64_t>(j.value("window_hours", 24.0) * 3600.0);
    if (c.window.window_s <= 0) throw ConfigError("window_hours must be positive");
    const auto agg = j.value("aggregation", std::string("max"));
    if (agg == "max")
      c.window.aggregation = Aggregation::Max;
    else if (agg == "pm25_only")
      c.window.aggregation = Aggregation::Pm25Only;
    else
      throw ConfigError("aggregation must be max or pm25_only");
    if (j.contains("rules")) {
      const auto& r = j.at("rules");
      c.rules = rule_config_from_json(r.is_string() ? load_json_file(rel(r.get<std::string>())) : r);
    }
    if (j.contains("stations")) {
      const auto& s = j.at("stations");
      c.seed_stations = stations_from_json(s.is_string() ? load_json_file(rel(s.get<std::string>())) : s);
    }
    if (j.contains("colors")) {
      const auto colors = j.at("colors").get<std::vector<std::string>>();
      if (colors.size() != 6) throw ConfigError("colors needs six entries");
      std::copy(colors.begin(), colors.end(), c.colors.begin());
    }
    c.sync_writes = j.value("sync_writes", true);
    if (j.contains("request_log")) c.request_log = rel(j.at("request_log").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  return service_config_from_json(load_json_file(path), path.parent_path());
}

inline ojson to_json(const WindowAverage& w) {
  return ojson{{"mean", w.mean},
               {"sample_count", w.sample_count},
               {"expected_count", w.expected_count},
               {"coverage", w.coverage},
               {"sufficient", w.sufficient}};
}

struct IccaSnapshot {
  std::optional<std::int64_t> window_end;
  WindowAverage pm25;
  WindowAverage pm10;
  std::optional<IccaResult> icca;  // present only for a sufficient window
};

/// Rolling ICCA over `series` (ordered by ts) for the window ending at `end`.
inline IccaSnapshot compute_snapshot(std::span<const Measurement> series, std::int64_t end,
                                     std::int64_t report_period_s, const WindowSettings& w) {
  std::vector<Sample> pm25, pm10;
  pm25.reserve(series.size());
  pm10.reserve(series.size());
  for (const auto& m : series) {
    pm25.push_back({m.ts, m.pm25});
    pm10.push_back({m.ts, m.pm10});
  }
  IccaSnapshot s;
  s.window_end = end;
  s.pm25 = rolling_average(pm25, end, w.window_s, report_period_s, w.coverage_min);
  s.pm10 = rolling_average(pm10, end, w.window_s, report_period_s, w.coverage_min);
  if (s.pm25.sufficient || (s.pm10.sufficient && w.aggregation == Aggregation::Max))
    s.icca = overall_icca(s.pm25, s.pm10, w.aggregation);
  return s;
}

/// Per-station rule evaluation, shared by live ingestion and replay.
class StationAlerting {
 public:
  StationAlerting(std::string station_id, std::int64_t report_period_s, const RuleConfig& rules,
                  WindowSettings window)
      : station_id_(std::move(station_id)),
        report_period_s_(report_period_s),
        rules_(&rules),
        window_(window) {}

  /// Feeds one accepted measurement (in acceptance order) and returns the
  /// alert events it produces.
  std::vector<std::pair<AlertEvent, const Rule*>> accept(const Measurement& m) {
    auto pos = std::upper_bound(history_.begin(), history_.end(), m,
                                [](const Measurement& a, const Measurement& b) { return a.ts < b.ts; });
    history_.insert(pos, m);
    // keep two windows so late arrivals still see their full window
    const std::int64_t horizon = history_.back().ts - 2 * window_.window_s;
    auto keep = std::upper_bound(history_.begin(), history_.end(), horizon,
                                 [](std::int64_t t, const Measurement& a) { return t < a.ts; });
    history_.erase(history_.begin(), keep);

    std::optional<IccaResult> icca;
    if (rules_->mode == AlertMode::Rolling) {
      icca = compute_snapshot(history_, m.ts, report_period_s_, window_).icca;
    } else {
      icca = combined_icca(m.pm25, m.pm10, window_.aggregation);
    }
    std::vector<std::pair<AlertEvent, const Rule*>> out;
    if (!icca) return out;
    for (const auto& rule : rules_->rules) {
      auto ev = evaluate(rule, states_[rule.rule_id], *icca, m.ts, station_id_);
      states_[rule.rule_id] = ev.state;
      for (auto& e : ev.events) out.emplace_back(std::move(e), &rule);
    }
    return out;
  }

  const std::map<std::string, RuleState>& states() const { return states_; }

 private:
  std::string station_id_;
  std::int64_t report_period_s_;
  const RuleConfig* rules_;
  WindowSettings window_;
  std::vector<Measurement> history_;
  std::map<std::string, RuleState> states_;
};

/// Replays a station log (any order; sorted here by seq) through the rules.
inline std::vector<AlertEvent> replay_alerts(std::vector<Measurement> log, const StationRecord& station,
                                             const RuleConfig& rules, const WindowSettings& window) {
  std::sort(log.begin(), log.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  StationAlerting alerting(station.station_id, station.report_period_s, rules, window);
  std::vector<AlertEvent> out;
  for (const auto& m : log)
    for (auto& [e, _] : alerting.accept(m)) out.push_back(std::move(e));
  return out;
}

struct ServiceResponse {
  int status = 200;
  ojson body;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg)
      : cfg_(std::move(cfg)),
        store_(cfg_.data_dir, StoreOptions{cfg_.sync_writes}),
        dispatcher_([this](const DeliveryRecord& r) { log_delivery(r); }) {
    for (const auto& s : cfg_.seed_stations) {
      auto existing = store_.station(s.station_id);
      if (!existing || !(*existing == s)) store_.register_station(s);
    }
    for (const auto& sc : cfg_.rules.sinks) dispatcher_.add_sink(make_sink(sc, cfg_.data_dir));
    for (const auto& s : store_.stations()) add_pipeline(s);
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { dispatcher_.flush(); }

  const ServiceConfig& config() const { return cfg_; }
  Store& store() { return store_; }
  const Store& store() const { return store_; }
  AlertDispatcher& alerts() { return dispatcher_; }

  /// Waits for queued alert deliveries.
  void flush() { dispatcher_.flush(); }

  void register_station(const StationRecord& s) {
    store_.register_station(s);
    add_pipeline(s);
  }

  std::string_view color(const Category& c) const { return cfg_.colors[static_cast<std::size_t>(c.ordinal)]; }

  /// POST /v1/telemetry
  ServiceResponse submit(std::string_view text) {
    auto parsed = parse_frame(text);
    if (!parsed) return reject(parsed.error());
    Pipeline* p = pipeline(parsed->station_id);
    if (!p) return reject({RejectReason::UnknownStation, "unknown station " + parsed->station_id});

    std::lock_guard lk(p->mu);
    auto outcome = parse_and_validate(
        text,
        [&](std::string_view id) -> std::optional<std::string> {
          auto s = store_.station(id);
          if (!s) return std::nullopt;
          return s->token;
        },
        [&](std::string_view id) { return store_.last_seq(id); }, cfg_.ranges);
    if (!outcome) return reject(outcome.error());
    const Measurement& m = *outcome;

    try {
      auto ack = store_.append(m);
      if (!ack) return reject({RejectReason::DuplicateSeq, "seq already stored"});
    } catch (const StoreError& e) {
      return {500, ojson{{"error", "StorageFailure"}, {"detail", e.what()}}};
    }

    for (auto& [event, rule] : p->alerting.accept(m)) dispatcher_.submit(event, rule->sink_ids);
    return {202, ojson{{"station_id", m.station_id}, {"seq", m.seq}}};
  }

  /// Rolling ICCA for a station; the window ends at `at` or at the latest
  /// measurement.
  IccaSnapshot snapshot(const std::string& station_id, std::optional<std::int64_t> window_s = {},
                        std::optional<std::int64_t> at = {}) const {
    auto st = store_.station(station_id);
    if (!st) throw UnknownStationError(station_id);
    WindowSettings w = cfg_.window;
    if (window_s) w.window_s = *window_s;
    std::optional<std::int64_t> end = at;
    if (!end) {
      auto last = store_.latest(station_id);
      if (!last) return {};
      end = last->ts;
    }
    const auto series = store_.query_range(station_id, *end - w.window_s + 1, *end);
    return compute_snapshot(series, *end, st->report_period_s, w);
  }

  ServiceResponse stations() const {
    ojson arr = ojson::array();
    for (const auto& s : store_.stations()) {
      ojson j = to_json(s);
      j.erase("token");
      arr.push_back(std::move(j));
    }
    return {200, arr};
  }

  ServiceResponse latest(const std::string& id) const {
    if (!store_.station(id)) return not_found(id);
    auto m = store_.latest(id);
    return {200, m ? to_json(*m) : ojson(nullptr)};
  }

  ServiceResponse history(const std::string& id, std::int64_t from, std::int64_t to) const {
    if (!store_.station(id)) return not_found(id);
    if (from > to) return {400, ojson{{"error", "InvalidRange"}, {"detail", "from > to"}}};
    ojson arr = ojson::array();
    for (const auto& m : store_.query_range(id, from, to)) arr.push_back(to_json(m));
    return {200, arr};
  }

  ServiceResponse icca(const std::string& id, std::optional<std::int64_t> window_s = {},
                       std::optional<std::int64_t> at = {}) const {
    if (!store_.station(id)) return not_found(id);
    if (window_s && *window_s <= 0) return {400, ojson{{"error", "InvalidWindow"}}};
    const auto snap = snapshot(id, window_s, at);
    ojson j{{"station_id", id}, {"window_s", window_s.value_or(cfg_.window.window_s)}};
    j["window_end"] = snap.window_end ? ojson(*snap.window_end) : ojson(nullptr);
    j["sufficient"] = snap.icca.has_value();
    append_icca_fields(j, snap);
    j["pm25"] = to_json(snap.pm25);
    j["pm10"] = to_json(snap.pm10);
    return {200, j};
  }

  ServiceResponse overview() const {
    ojson arr = ojson::array();
    for (const auto& s : store_.stations()) {
      ojson e{{"station_id", s.station_id},
              {"display_name", s.display_name},
              {"location", {{"latitude", s.latitude}, {"longitude", s.longitude}}}};
      auto m = store_.latest(s.station_id);
      if (m) {
        e["latest"] = {{"seq", m->seq}, {"ts", m->ts}, {"pm25", m->pm25}, {"pm10", m->pm10}, {"temp_c", m->temp_c}};
        e["last_seen"] = m->ts;
      } else {
        e["latest"] = nullptr;
        e["last_seen"] = nullptr;
      }
      const auto snap = snapshot(s.station_id);
      ojson icca{{"sufficient", snap.icca.has_value()}};
      append_icca_fields(icca, snap);
      e["icca"] = std::move(icca);
      arr.push_back(std::move(e));
    }
    return {200, arr};
  }

 private:
  struct Pipeline {
    Pipeline(const StationRecord& s, const RuleConfig& rules, WindowSettings w)
        : alerting(s.station_id, s.report_period_s, rules, w) {}
    std::mutex mu;
    StationAlerting alerting;
  };

  void append_icca_fields(ojson& j, const IccaSnapshot& snap) const {
    if (!snap.icca) {
      j["coverage"] = std::min(snap.pm25.coverage, 1.0);
      return;
    }
    const auto& r = *snap.icca;
    j["value"] = r.value;
    j["category"] = r.cat().name;
    j["color"] = color(r.cat());
    j["dominant"] = r.dominant ? ojson(to_string(*r.dominant)) : ojson(nullptr);
    j["beyond_scale"] = r.beyond_scale;
    j["coverage"] = r.dominant == Pollutant::PM10 ? snap.pm10.coverage : snap.pm25.coverage;
  }

  static ServiceResponse reject(const Rejection& r) {
    return {http_status(r.reason), ojson{{"error", to_string(r.reason)}, {"detail", r.detail}}};
  }

  static ServiceResponse not_found(const std::string& id) {
    return {404, ojson{{"error", "UnknownStation"}, {"detail", "unknown station " + id}}};
  }

  void add_pipeline(const StationRecord& s) {
    std::unique_lock lk(pipelines_mu_);
    if (pipelines_.count(s.station_id)) return;
    auto p = std::make_unique<Pipeline>(s, cfg_.rules, cfg_.window);
    // restore rule state without re-sending anything
    auto log = store_.all(s.station_id);
    std::sort(log.begin(), log.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
    for (const auto& m : log) p->alerting.accept(m);
    pipelines_.emplace(s.station_id, std::move(p));
  }

  Pipeline* pipeline(const std::string& id) {
    std::shared_lock lk(pipelines_mu_);
    auto it = pipelines_.find(id);
    return it == pipelines_.end() ? nullptr : it->second.get();
  }

  void log_delivery(const DeliveryRecord& r) {
    for (const auto& d : r.deliveries)
      if (!d.ok)
        std::fprintf(stderr, "alert delivery failed: sink=%s rule=%s station=%s attempts=%d error=%s\n",
                     d.sink_id.c_str(), r.event.rule_id.c_str(), r.event.station_id.c_str(), d.attempts,
                     d.error.c_str());
  }

  ServiceConfig cfg_;
  Store store_;
  std::shared_mutex pipelines_mu_;
  std::map<std::string, std::unique_ptr<Pipeline>> pipelines_;
  AlertDispatcher dispatcher_;  // last: drained before the rest is torn down
};

}  // namespace aqmon

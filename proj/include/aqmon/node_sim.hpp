#pragma once

// Virtual monitoring stations running the firmware cycle
//   Configure -> (Read -> StoreLocal -> Display -> Format -> Send -> Wait)*
// on a simulated clock, with scenario-driven particulate and temperature
// signals and a pluggable (possibly faulty) transport.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aqmon/measurement.hpp"
#include "aqmon/sensor_codec.hpp"
#include "aqmon/telemetry.hpp"

namespace aqmon {

// ---------------------------------------------------------------------------
// Scenario signals

struct RainEvent {
  std::int64_t start = 0;
  std::int64_t duration_s = 0;
  double attenuation = 1.0;  // in (0, 1]
};

struct Scenario {
  std::string archetype;
  double base_pm25 = 10.0;
  double base_pm10 = 20.0;
  double traffic_amplitude = 0.0;
  double traffic_amplitude_pm10 = 0.0;
  double morning_peak_h = 7.0;
  double evening_peak_h = 18.0;
  double peak_width_h = 3.0;  // half-width of each traffic bump
  double utc_offset_h = -6.0;
  std::vector<RainEvent> rain;
  std::int64_t rain_recovery_s = 4 * 3600;
  double temp_mean = 27.0;
  double temp_amplitude = 4.0;  // afternoon maximum at 14:00 local
  double noise = 0.10;
};

inline void validate(const Scenario& s) {
  if (!(s.noise >= 0.0 && s.noise <= 0.5)) throw std::invalid_argument("noise must be in [0, 0.5]");
  if (!(s.peak_width_h > 0.0)) throw std::invalid_argument("peak_width_h must be positive");
  if (s.rain_recovery_s < 0) throw std::invalid_argument("recovery_s must be >= 0");
  for (const auto& r : s.rain) {
    if (!(r.attenuation > 0.0 && r.attenuation <= 1.0))
      throw std::invalid_argument("rain attenuation must be in (0, 1]");
    if (r.duration_s < 0) throw std::invalid_argument("rain duration must be >= 0");
  }
}

inline Scenario scenario_from_json(const ojson& j) {
  Scenario s;
  try {
    s.archetype = j.value("archetype", std::string{});
    s.base_pm25 = j.value("base_pm25", s.base_pm25);
    s.base_pm10 = j.value("base_pm10", s.base_pm10);
    s.traffic_amplitude = j.value("traffic_amplitude", s.traffic_amplitude);
    s.traffic_amplitude_pm10 = j.value("traffic_amplitude_pm10", s.traffic_amplitude);
    if (j.contains("peak_hours")) {
      const auto& p = j.at("peak_hours");
      s.morning_peak_h = p.at(0).get<double>();
      s.evening_peak_h = p.at(1).get<double>();
    }
    s.peak_width_h = j.value("peak_width_h", s.peak_width_h);
    s.utc_offset_h = j.value("utc_offset_h", s.utc_offset_h);
    s.rain_recovery_s = j.value("recovery_s", s.rain_recovery_s);
    for (const auto& r : j.value("rain", ojson::array()))
      s.rain.push_back({r.at("start").get<std::int64_t>(), r.at("duration").get<std::int64_t>(),
                        r.at("attenuation").get<double>()});
    s.temp_mean = j.value("temp_mean", s.temp_mean);
    s.temp_amplitude = j.value("temp_amplitude", s.temp_amplitude);
    s.noise = j.value("noise", s.noise);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad scenario: ") + e.what());
  }
  validate(s);
  return s;
}

struct Signal {
  double pm25 = 0.0;
  double pm10 = 0.0;
  double temp_c = 0.0;

  friend bool operator==(const Signal&, const Signal&) = default;
};

/// Local hour of day in [0, 24).
inline double local_hour(const Scenario& s, std::int64_t ts) {
  const double secs = static_cast<double>(ts) + s.utc_offset_h * 3600.0;
  double h = std::fmod(secs / 3600.0, 24.0);
  if (h < 0) h += 24.0;
  return h;
}

/// Double-peak traffic profile with unit maximum: raised-cosine bumps around
/// the morning and evening peaks, summed and capped at 1.
inline double diurnal_profile(const Scenario& s, std::int64_t ts) {
  const double h = local_hour(s, ts);
  auto bump = [&](double peak) {
    double d = std::abs(h - peak);
    d = std::min(d, 24.0 - d);
    if (d >= s.peak_width_h) return 0.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * d / s.peak_width_h));
  };
  return std::min(1.0, bump(s.morning_peak_h) + bump(s.evening_peak_h));
}

/// Product of rain attenuations; after a shower the factor relaxes back to 1
/// exponentially with time constant `rain_recovery_s`.
inline double rain_factor(const Scenario& s, std::int64_t ts) {
  double r = 1.0;
  for (const auto& e : s.rain) {
    const std::int64_t end = e.start + e.duration_s;
    if (ts >= e.start && ts < end) {
      r *= e.attenuation;
    } else if (ts >= end && s.rain_recovery_s > 0) {
      const double k = std::exp(-static_cast<double>(ts - end) / static_cast<double>(s.rain_recovery_s));
      r *= 1.0 - (1.0 - e.attenuation) * k;
    }
  }
  return r;
}

inline Signal true_signal(const Scenario& s, std::int64_t ts) {
  const double d = diurnal_profile(s, ts);
  const double r = rain_factor(s, ts);
  Signal out;
  out.pm25 = std::max(0.0, s.base_pm25 + s.traffic_amplitude * d) * r;
  out.pm10 = std::max(0.0, s.base_pm10 + s.traffic_amplitude_pm10 * d) * r;
  const double h = local_hour(s, ts);
  out.temp_c = s.temp_mean + s.temp_amplitude * std::cos(2.0 * std::numbers::pi * (h - 14.0) / 24.0);
  return out;
}

/// Seeded generator; only raw 64-bit draws are used so sequences do not
/// depend on the standard library's distribution implementations.
class NodeRng {
 public:
  explicit NodeRng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    eng_.seed(seq);
  }

  /// Uniform in [-a, a].
  double symmetric(double a) {
    const double unit = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    return a * (2.0 * unit - 1.0);
  }

 private:
  std::mt19937_64 eng_;
};

/// True signal with multiplicative noise in [-noise, +noise] per channel.
inline Signal sample(const Scenario& s, std::int64_t ts, NodeRng& rng) {
  const Signal t = true_signal(s, ts);
  Signal out;
  out.pm25 = std::max(0.0, t.pm25 * (1.0 + rng.symmetric(s.noise)));
  out.pm10 = std::max(0.0, t.pm10 * (1.0 + rng.symmetric(s.noise)));
  out.temp_c = std::max(0.0, t.temp_c * (1.0 + rng.symmetric(s.noise)));
  return out;
}

// ---------------------------------------------------------------------------
// Sensor boundary

struct SensorReading {
  std::uint16_t pm25 = 0;
  std::uint16_t pm10 = 0;
  std::int16_t temp_raw = 0;
  PmFrameBytes frame{};
};

inline std::uint16_t saturate_u16(double v) {
  const double r = std::nearbyint(v);
  if (!(r > 0.0)) return 0;
  if (r >= 65535.0) return 65535;
  return static_cast<std::uint16_t>(r);
}

/// Quantizes a sample the way the sensors report it and builds the frame.
inline SensorReading quantize(const Signal& s) {
  SensorReading r;
  r.pm25 = saturate_u16(s.pm25);
  r.pm10 = saturate_u16(s.pm10);
  r.temp_raw = encode_temp(s.temp_c);
  PmFrame f;
  f.pm1_0_std = f.pm1_0_atm = saturate_u16(0.65 * r.pm25);
  f.pm2_5_std = f.pm2_5_atm = r.pm25;
  f.pm10_std = f.pm10_atm = r.pm10;
  f.counts_0_3um = saturate_u16(60.0 * r.pm25);
  f.counts_0_5um = saturate_u16(18.0 * r.pm25);
  f.counts_1_0um = saturate_u16(4.0 * r.pm25);
  f.counts_2_5um = saturate_u16(0.6 * r.pm25);
  f.counts_5_0um = saturate_u16(0.2 * std::max(0, r.pm10 - r.pm25));
  f.counts_10um = saturate_u16(0.05 * std::max(0, r.pm10 - r.pm25));
  r.frame = encode_pm_frame(f);
  return r;
}

// ---------------------------------------------------------------------------
// Transport

enum class SendStatus : std::uint8_t { Delivered, Duplicate, Rejected, Failed };

struct SendOutcome {
  SendStatus status = SendStatus::Failed;
  int http_status = 0;
  std::string detail;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// `sim_ts` is the sender's simulated clock, for time-based fault models.
  virtual SendOutcome send(const std::string& frame_text, std::int64_t sim_ts) = 0;
};

inline SendOutcome outcome_from_http(int status, std::string detail = {}) {
  if (status == 202) return {SendStatus::Delivered, status, std::move(detail)};
  if (status == 409) return {SendStatus::Duplicate, status, std::move(detail)};
  if (status == 401 || status == 404 || status == 422) return {SendStatus::Rejected, status, std::move(detail)};
  return {SendStatus::Failed, status, std::move(detail)};
}

/// Writes every frame as one NDJSON line; used for offline runs.
class OfflineFileTransport final : public Transport {
 public:
  explicit OfflineFileTransport(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path);
  }
  SendOutcome send(const std::string& frame_text, std::int64_t) override {
    out_ << frame_text << '\n';
    out_.flush();
    return {SendStatus::Delivered, 202, {}};
  }

 private:
  std::ofstream out_;
};

/// Fails every send whose simulated time falls in [start, end).
class BlackoutTransport final : public Transport {
 public:
  BlackoutTransport(Transport& inner, std::int64_t start, std::int64_t end)
      : inner_(inner), start_(start), end_(end) {}
  SendOutcome send(const std::string& frame_text, std::int64_t sim_ts) override {
    if (sim_ts >= start_ && sim_ts < end_) return {SendStatus::Failed, 0, "link down"};
    return inner_.send(frame_text, sim_ts);
  }

 private:
  Transport& inner_;
  std::int64_t start_, end_;
};

/// Delivers every frame twice, reporting the first outcome.
class DuplicatingTransport final : public Transport {
 public:
  explicit DuplicatingTransport(Transport& inner) : inner_(inner) {}
  SendOutcome send(const std::string& frame_text, std::int64_t sim_ts) override {
    auto first = inner_.send(frame_text, sim_ts);
    inner_.send(frame_text, sim_ts);
    return first;
  }

 private:
  Transport& inner_;
};

/// Delivers to the inner transport but reports failure: a lost acknowledgment.
class LostAckTransport final : public Transport {
 public:
  LostAckTransport(Transport& inner, std::int64_t start, std::int64_t end)
      : inner_(inner), start_(start), end_(end) {}
  SendOutcome send(const std::string& frame_text, std::int64_t sim_ts) override {
    auto r = inner_.send(frame_text, sim_ts);
    if (sim_ts >= start_ && sim_ts < end_) return {SendStatus::Failed, 0, "ack lost"};
    return r;
  }

 private:
  Transport& inner_;
  std::int64_t start_, end_;
};

// ---------------------------------------------------------------------------
// Firmware state machine

enum class Phase : std::uint8_t { Configure, Read, StoreLocal, Display, Format, Send, Wait };

inline constexpr std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Configure: return "Configure";
    case Phase::Read: return "Read";
    case Phase::StoreLocal: return "StoreLocal";
    case Phase::Display: return "Display";
    case Phase::Format: return "Format";
    case Phase::Send: return "Send";
    case Phase::Wait: return "Wait";
  }
  return "?";
}

inline constexpr Phase next_phase(Phase p) {
  switch (p) {
    case Phase::Configure: return Phase::Read;
    case Phase::Read: return Phase::StoreLocal;
    case Phase::StoreLocal: return Phase::Display;
    case Phase::Display: return Phase::Format;
    case Phase::Format: return Phase::Send;
    case Phase::Send: return Phase::Wait;
    case Phase::Wait: return Phase::Read;
  }
  return Phase::Read;
}

struct NodeConfig {
  std::string station_id;
  std::string display_name;
  double latitude = 0.0;
  double longitude = 0.0;
  std::string token;
  std::int64_t report_period_s = 1200;
  std::size_t buffer_cap = 0;  // 0 = unbounded
  Scenario scenario;
};

inline NodeConfig node_config_from_json(const ojson& j) {
  NodeConfig c;
  try {
    c.station_id = j.at("station_id").get<std::string>();
    c.display_name = j.value("display_name", c.station_id);
    c.latitude = j.value("latitude", 0.0);
    c.longitude = j.value("longitude", 0.0);
    c.token = j.at("token").get<std::string>();
    c.report_period_s = j.value("report_period", c.report_period_s);
    c.buffer_cap = j.value("buffer_cap", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad station entry: ") + e.what());
  }
  if (!valid_station_id(c.station_id)) throw std::invalid_argument("bad station id: " + c.station_id);
  if (c.report_period_s <= 0) throw std::invalid_argument("report_period must be positive");
  c.scenario = scenario_from_json(j.value("scenario", ojson::object()));
  return c;
}

struct NodeCounters {
  std::uint64_t generated = 0;
  std::uint64_t delivered = 0;
  std::uint64_t rejected = 0;
  std::uint64_t dropped = 0;  // evicted by buffer_cap
  std::uint64_t send_failures = 0;
};

struct NodeState {
  NodeConfig config;
  Phase phase = Phase::Configure;
  bool configured = false;
  std::int64_t clock = 0;
  std::uint64_t next_seq = 1;
  NodeRng rng;
  SensorReading current;
  Measurement reading;  // last decoded reading, before framing
  std::deque<Measurement> local_log;
  std::deque<TelemetryFrame> buffer;
  NodeCounters counters;

  NodeState(NodeConfig cfg, std::int64_t start_ts, std::uint64_t seed, std::uint64_t stream)
      : config(std::move(cfg)), clock(start_ts), rng(seed, stream) {}

  /// Invariant: generated = delivered + buffered + rejected + dropped.
  bool conserved() const {
    return counters.generated ==
           counters.delivered + buffer.size() + counters.rejected + counters.dropped;
  }
};

inline constexpr std::size_t kLocalLogCap = 576;  // two days at 5-minute cadence

struct DeliveryAttempt {
  std::uint64_t seq;
  SendOutcome outcome;
};

struct StepEffects {
  Phase phase;
  std::int64_t ts;
  std::string display;
  std::vector<DeliveryAttempt> attempts;
};

inline std::string format_utc(std::int64_t ts) {
  std::time_t t = static_cast<std::time_t>(ts);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Executes the node's current phase and advances to the next one.
inline StepEffects step(NodeState& node, Transport& transport) {
  StepEffects fx{node.phase, node.clock, {}, {}};
  switch (node.phase) {
    case Phase::Configure:
      validate(node.config.scenario);
      node.configured = true;
      break;
    case Phase::Read: {
      node.current = quantize(sample(node.config.scenario, node.clock, node.rng));
      auto decoded = decode_pm_frame(node.current.frame);
      if (!decoded) throw std::logic_error("sensor frame failed to decode");
      node.reading = Measurement{node.config.station_id,
                                 0,
                                 node.clock,
                                 static_cast<double>(decoded->pm2_5_atm),
                                 static_cast<double>(decoded->pm10_atm),
                                 decode_temp(node.current.temp_raw),
                                 0};
      break;
    }
    case Phase::StoreLocal:
      node.local_log.push_back(node.reading);
      if (node.local_log.size() > kLocalLogCap) node.local_log.pop_front();
      break;
    case Phase::Display: {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s %s] PM2.5 %.0f ug/m3  PM10 %.0f ug/m3  T %.2f C  queued %zu",
                    node.config.station_id.c_str(), format_utc(node.clock).c_str(),
                    node.reading.pm25, node.reading.pm10, node.reading.temp_c, node.buffer.size());
      fx.display = buf;
      break;
    }
    case Phase::Format: {
      TelemetryFrame f{node.config.station_id, node.config.token, node.next_seq++,
                       node.reading.ts,        node.reading.pm25, node.reading.pm10,
                       node.reading.temp_c};
      node.buffer.push_back(std::move(f));
      ++node.counters.generated;
      if (node.config.buffer_cap > 0 && node.buffer.size() > node.config.buffer_cap) {
        node.buffer.pop_front();
        ++node.counters.dropped;
      }
      break;
    }
    case Phase::Send:
      while (!node.buffer.empty()) {
        const TelemetryFrame& head = node.buffer.front();
        SendOutcome r = transport.send(serialize(head), node.clock);
        fx.attempts.push_back({head.seq, r});
        if (r.status == SendStatus::Failed) {
          ++node.counters.send_failures;
          break;
        }
        if (r.status == SendStatus::Rejected)
          ++node.counters.rejected;
        else
          ++node.counters.delivered;
        node.buffer.pop_front();
      }
      break;
    case Phase::Wait:
      node.clock += node.config.report_period_s;
      break;
  }
  node.phase = next_phase(node.phase);
  return fx;
}

/// Checks that observed phases follow the firmware cycle exactly.
class PhaseTraceMonitor {
 public:
  void observe(const std::string& station_id, Phase p) {
    auto [it, fresh] = last_.try_emplace(station_id, p);
    if (fresh) {
      if (p != Phase::Configure) ++violations_;
    } else {
      if (next_phase(it->second) != p || p == Phase::Configure) ++violations_;
      it->second = p;
    }
    ++observed_;
  }
  std::uint64_t violations() const { return violations_; }
  std::uint64_t observed() const { return observed_; }

 private:
  std::map<std::string, Phase> last_;
  std::uint64_t violations_ = 0;
  std::uint64_t observed_ = 0;
};

// ---------------------------------------------------------------------------
// Fleet

struct Fleet {
  std::int64_t start_ts = 0;
  std::vector<NodeConfig> nodes;
};

inline Fleet fleet_from_json(const ojson& j) {
  Fleet f;
  try {
    f.start_ts = j.at("start_ts").get<std::int64_t>();
    for (const auto& s : j.at("stations")) f.nodes.push_back(node_config_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad fleet file: ") + e.what());
  }
  if (f.nodes.empty()) throw std::invalid_argument("fleet has no stations");
  return f;
}

struct NodeReport {
  std::string station_id;
  NodeCounters counters;
  std::uint64_t buffered = 0;
  std::uint64_t cycles = 0;
};

struct RunReport {
  std::int64_t start_ts = 0;
  std::int64_t horizon_s = 0;
  std::uint64_t seed = 0;
  std::vector<NodeReport> nodes;
  std::uint64_t phase_violations = 0;
  std::uint64_t conservation_violations = 0;

  std::uint64_t total_delivered() const {
    std::uint64_t n = 0;
    for (const auto& r : nodes) n += r.counters.delivered;
    return n;
  }
};

inline ojson to_json(const RunReport& r) {
  ojson nodes = ojson::array();
  for (const auto& n : r.nodes)
    nodes.push_back({{"station_id", n.station_id},
                     {"cycles", n.cycles},
                     {"generated", n.counters.generated},
                     {"delivered", n.counters.delivered},
                     {"buffered", n.buffered},
                     {"rejected", n.counters.rejected},
                     {"dropped", n.counters.dropped},
                     {"send_failures", n.counters.send_failures}});
  return ojson{{"start_ts", r.start_ts},
               {"horizon_s", r.horizon_s},
               {"seed", r.seed},
               {"delivered", r.total_delivered()},
               {"phase_violations", r.phase_violations},
               {"conservation_violations", r.conservation_violations},
               {"nodes", std::move(nodes)}};
}

struct FleetOptions {
  std::function<void(const StepEffects&)> on_effects;  // e.g. print Display lines
};

/// Runs every node from `fleet.start_ts` for `horizon_s` simulated seconds.
/// Nodes interleave by simulated clock (ties by position in the fleet).
inline RunReport run_fleet(const Fleet& fleet, std::int64_t horizon_s, std::uint64_t seed,
                           Transport& transport, const FleetOptions& opts = {}) {
  RunReport report;
  report.start_ts = fleet.start_ts;
  report.horizon_s = horizon_s;
  report.seed = seed;
  const std::int64_t end = fleet.start_ts + std::max<std::int64_t>(horizon_s, 0);

  std::vector<NodeState> nodes;
  nodes.reserve(fleet.nodes.size());
  for (std::size_t i = 0; i < fleet.nodes.size(); ++i)
    nodes.emplace_back(fleet.nodes[i], fleet.start_ts, seed, i);
  std::vector<std::uint64_t> cycles(nodes.size(), 0);

  PhaseTraceMonitor monitor;
  auto runnable = [&](const NodeState& n) {
    return n.phase != Phase::Read || n.clock < end;
  };
  for (;;) {
    NodeState* next = nullptr;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!runnable(nodes[i])) continue;
      if (!next || nodes[i].clock < next->clock) {
        next = &nodes[i];
        idx = i;
      }
    }
    if (!next) break;
    monitor.observe(next->config.station_id, next->phase);
    if (next->phase == Phase::Read) ++cycles[idx];
    StepEffects fx = step(*next, transport);
    if (!next->conserved()) ++report.conservation_violations;
    if (opts.on_effects) opts.on_effects(fx);
  }

  report.phase_violations = monitor.violations();
  for (std::size_t i = 0; i < nodes.size(); ++i)
    report.nodes.push_back({nodes[i].config.station_id, nodes[i].counters, nodes[i].buffer.size(), cycles[i]});
  return report;
}

}  // namespace aqmon

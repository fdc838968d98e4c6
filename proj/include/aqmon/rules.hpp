#pragma once

// Alert rules over a station's ICCA stream.
//
// A rule raises once when the index reaches its trigger category and clears
// only after `clear_consecutive` evaluations in a row strictly below it.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "aqmon/icca.hpp"
#include "aqmon/measurement.hpp"

namespace aqmon {

struct Rule {
  std::string rule_id;
  int trigger_category_min = 3;
  int clear_consecutive = 3;
  std::vector<std::string> sink_ids;
};

struct RuleState {
  bool active = false;
  int below_count = 0;

  friend bool operator==(const RuleState&, const RuleState&) = default;
};

enum class AlertKind : std::uint8_t { Raised, Cleared };

inline constexpr std::string_view to_string(AlertKind k) {
  return k == AlertKind::Raised ? "Raised" : "Cleared";
}

struct AlertEvent {
  std::string rule_id;
  std::string station_id;
  AlertKind kind = AlertKind::Raised;
  int icca_value = 0;
  std::string category;
  std::int64_t ts = 0;

  friend bool operator==(const AlertEvent&, const AlertEvent&) = default;
};

inline ojson to_json(const AlertEvent& e) {
  return ojson{{"rule_id", e.rule_id},       {"station_id", e.station_id},
               {"kind", to_string(e.kind)},  {"icca_value", e.icca_value},
               {"category", e.category},     {"ts", e.ts}};
}

struct Evaluation {
  std::vector<AlertEvent> events;
  RuleState state;
};

/// Pure state transition for one (rule, station) pair.
inline Evaluation evaluate(const Rule& rule, RuleState state, const IccaResult& icca,
                           std::int64_t ts, const std::string& station_id) {
  Evaluation out{{}, state};
  auto emit = [&](AlertKind kind) {
    out.events.push_back(AlertEvent{rule.rule_id, station_id, kind, icca.value,
                                    std::string(icca.cat().name), ts});
  };
  if (icca.cat().ordinal >= rule.trigger_category_min) {
    out.state.below_count = 0;
    if (!out.state.active) {
      out.state.active = true;
      emit(AlertKind::Raised);
    }
  } else if (out.state.active) {
    if (++out.state.below_count >= rule.clear_consecutive) {
      out.state = RuleState{};
      emit(AlertKind::Cleared);
    }
  }
  return out;
}

enum class AlertMode : std::uint8_t { Rolling, Instantaneous };

struct SinkConfig {
  std::string id;
  std::string type;  // "file" | "webhook"
  std::string target;  // path or URL
};

struct RuleConfig {
  AlertMode mode = AlertMode::Rolling;
  std::vector<Rule> rules;
  std::vector<SinkConfig> sinks;
};

inline int category_ordinal_from_json(const ojson& j) {
  if (j.is_number_integer()) return j.get<int>();
  const auto name = j.get<std::string>();
  for (const auto& c : kCategories)
    if (c.name == name) return c.ordinal;
  throw std::invalid_argument("unknown category: " + name);
}

/// Throws std::invalid_argument on a bad configuration.
inline RuleConfig rule_config_from_json(const ojson& j) {
  RuleConfig cfg;
  try {
    const auto mode = j.value("mode", std::string("rolling"));
    if (mode == "rolling")
      cfg.mode = AlertMode::Rolling;
    else if (mode == "instantaneous")
      cfg.mode = AlertMode::Instantaneous;
    else
      throw std::invalid_argument("unknown alert mode: " + mode);
    for (const auto& s : j.value("sinks", ojson::array())) {
      SinkConfig sc{s.at("id").get<std::string>(), s.at("type").get<std::string>(), {}};
      if (sc.type == "file")
        sc.target = s.at("path").get<std::string>();
      else if (sc.type == "webhook")
        sc.target = s.at("url").get<std::string>();
      else
        throw std::invalid_argument("unknown sink type: " + sc.type);
      cfg.sinks.push_back(std::move(sc));
    }
    for (const auto& r : j.value("rules", ojson::array())) {
      Rule rule;
      rule.rule_id = r.at("rule_id").get<std::string>();
      rule.trigger_category_min = category_ordinal_from_json(r.at("trigger_category_min"));
      rule.clear_consecutive = r.value("clear_consecutive", 3);
      rule.sink_ids = r.value("sinks", std::vector<std::string>{});
      if (rule.trigger_category_min < 1 || rule.trigger_category_min > 5)
        throw std::invalid_argument("trigger_category_min must be in 1..5");
      if (rule.clear_consecutive < 1)
        throw std::invalid_argument("clear_consecutive must be >= 1");
      for (const auto& sid : rule.sink_ids) {
        bool known = false;
        for (const auto& s : cfg.sinks) known = known || s.id == sid;
        if (!known) throw std::invalid_argument("rule " + rule.rule_id + " names unknown sink " + sid);
      }
      cfg.rules.push_back(std::move(rule));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad rule config: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Notification sinks

struct SinkResult {
  bool ok = true;
  std::string error;
};

class AlertSink {
 public:
  virtual ~AlertSink() = default;
  virtual const std::string& id() const = 0;
  virtual SinkResult deliver(const AlertEvent& e) = 0;
};

/// Appends one NDJSON line per event.
class FileSink final : public AlertSink {
 public:
  FileSink(std::string id, std::filesystem::path path) : id_(std::move(id)), path_(std::move(path)) {}

  const std::string& id() const override { return id_; }

  SinkResult deliver(const AlertEvent& e) override {
    std::lock_guard lk(mu_);
    std::ofstream out(path_, std::ios::app);
    if (!out) return {false, "cannot open " + path_.string()};
    out << to_json(e).dump() << '\n';
    out.flush();
    if (!out) return {false, "write failed: " + path_.string()};
    return {};
  }

 private:
  std::string id_;
  std::filesystem::path path_;
  std::mutex mu_;
};

struct SinkDelivery {
  std::string sink_id;
  bool ok = false;
  int attempts = 0;
  std::string error;
};

struct DeliveryRecord {
  AlertEvent event;
  std::vector<SinkDelivery> deliveries;
};

/// Delivers to each sink, retrying a failed delivery once.
inline DeliveryRecord dispatch(const AlertEvent& event, const std::vector<AlertSink*>& sinks) {
  DeliveryRecord rec{event, {}};
  for (AlertSink* sink : sinks) {
    SinkDelivery d{sink->id(), false, 0, {}};
    for (int attempt = 0; attempt < 2 && !d.ok; ++attempt) {
      ++d.attempts;
      SinkResult r;
      try {
        r = sink->deliver(event);
      } catch (const std::exception& ex) {
        r = {false, ex.what()};
      }
      d.ok = r.ok;
      d.error = r.error;
    }
    rec.deliveries.push_back(std::move(d));
  }
  return rec;
}

/// Background delivery queue so slow or dead sinks never hold up ingestion.
class AlertDispatcher {
 public:
  using Logger = std::function<void(const DeliveryRecord&)>;

  explicit AlertDispatcher(Logger log = {}) : log_(std::move(log)), worker_([this] { run(); }) {}
  AlertDispatcher(const AlertDispatcher&) = delete;
  AlertDispatcher& operator=(const AlertDispatcher&) = delete;

  ~AlertDispatcher() {
    {
      std::lock_guard lk(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  void add_sink(std::unique_ptr<AlertSink> sink) {
    std::lock_guard lk(mu_);
    const std::string id = sink->id();
    sinks_[id] = std::move(sink);
  }

  void submit(AlertEvent event, std::vector<std::string> sink_ids) {
    {
      std::lock_guard lk(mu_);
      queue_.push_back({std::move(event), std::move(sink_ids)});
    }
    cv_.notify_all();
  }

  /// Blocks until everything submitted so far has been attempted.
  void flush() {
    std::unique_lock lk(mu_);
    idle_cv_.wait(lk, [&] { return queue_.empty() && !busy_; });
  }

  std::vector<DeliveryRecord> history() const {
    std::lock_guard lk(mu_);
    return history_;
  }

 private:
  struct Job {
    AlertEvent event;
    std::vector<std::string> sink_ids;
  };

  void run() {
    std::unique_lock lk(mu_);
    for (;;) {
      cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stopping and drained
      Job job = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
      std::vector<AlertSink*> targets;
      for (const auto& id : job.sink_ids) {
        auto it = sinks_.find(id);
        if (it != sinks_.end()) targets.push_back(it->second.get());
      }
      lk.unlock();
      DeliveryRecord rec = dispatch(job.event, targets);
      if (log_) log_(rec);
      lk.lock();
      history_.push_back(std::move(rec));
      busy_ = false;
      idle_cv_.notify_all();
    }
  }

  Logger log_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  std::map<std::string, std::unique_ptr<AlertSink>> sinks_;
  std::vector<DeliveryRecord> history_;
  bool stopping_ = false;
  bool busy_ = false;
  std::thread worker_;  // last: starts after the members it uses
};

}  // namespace aqmon

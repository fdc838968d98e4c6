#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace aqmon {

using ojson = nlohmann::ordered_json;

enum class QualityFlag : std::uint8_t { BeyondSensorRange = 1u << 0 };

/// One accepted reading from one station.
struct Measurement {
  std::string station_id;
  std::uint64_t seq = 0;
  std::int64_t ts = 0;
  double pm25 = 0.0;
  double pm10 = 0.0;
  double temp_c = 0.0;
  std::uint8_t flags = 0;

  bool has(QualityFlag f) const { return (flags & static_cast<std::uint8_t>(f)) != 0; }
  void set(QualityFlag f) { flags |= static_cast<std::uint8_t>(f); }

  friend bool operator==(const Measurement&, const Measurement&) = default;
};

inline ojson to_json(const Measurement& m) {
  ojson flags = ojson::array();
  if (m.has(QualityFlag::BeyondSensorRange)) flags.push_back("beyond_sensor_range");
  return ojson{{"station_id", m.station_id}, {"seq", m.seq},       {"ts", m.ts},
               {"pm25", m.pm25},             {"pm10", m.pm10},     {"temp_c", m.temp_c},
               {"flags", std::move(flags)}};
}

/// Inverse of to_json; nullopt on any schema mismatch.
inline std::optional<Measurement> measurement_from_json(const ojson& j) {
  if (!j.is_object() || j.size() != 7) return std::nullopt;
  try {
    Measurement m;
    m.station_id = j.at("station_id").get<std::string>();
    if (!j.at("seq").is_number_unsigned()) return std::nullopt;
    m.seq = j.at("seq").get<std::uint64_t>();
    if (!j.at("ts").is_number_integer()) return std::nullopt;
    m.ts = j.at("ts").get<std::int64_t>();
    for (auto [key, dst] : {std::pair{"pm25", &m.pm25}, std::pair{"pm10", &m.pm10},
                            std::pair{"temp_c", &m.temp_c}}) {
      if (!j.at(key).is_number()) return std::nullopt;
      *dst = j.at(key).get<double>();
    }
    for (const auto& f : j.at("flags")) {
      if (f == "beyond_sensor_range")
        m.set(QualityFlag::BeyondSensorRange);
      else
        return std::nullopt;
    }
    return m;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

inline bool valid_station_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace aqmon

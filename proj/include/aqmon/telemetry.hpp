#pragma once

// Station -> platform telemetry frame: one JSON object per submission.
//
//   {"station_id":"utec-01","token":"...","seq":1,"ts":1700000000,
//    "pm25":12.3,"pm10":20.0,"temp_c":28.5}
//
// Serialization is canonical (that key order, shortest round-trip numbers,
// integral decimals written with a trailing ".0"). Parsing accepts any key
// order but rejects missing, unknown or repeated keys.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "aqmon/measurement.hpp"
#include "aqmon/result.hpp"

namespace aqmon {

struct TelemetryFrame {
  std::string station_id;
  std::string token;
  std::uint64_t seq = 0;
  std::int64_t ts = 0;
  double pm25 = 0.0;
  double pm10 = 0.0;
  double temp_c = 0.0;

  friend bool operator==(const TelemetryFrame&, const TelemetryFrame&) = default;
};

enum class RejectReason : std::uint8_t {
  BadToken,
  UnknownStation,
  DuplicateSeq,
  StaleSeq,
  OutOfRange,
  Malformed,
};

inline constexpr std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::BadToken: return "BadToken";
    case RejectReason::UnknownStation: return "UnknownStation";
    case RejectReason::DuplicateSeq: return "DuplicateSeq";
    case RejectReason::StaleSeq: return "StaleSeq";
    case RejectReason::OutOfRange: return "OutOfRange";
    case RejectReason::Malformed: return "Malformed";
  }
  return "?";
}

/// HTTP status the ingestion endpoint answers for each rejection.
inline constexpr int http_status(RejectReason r) {
  switch (r) {
    case RejectReason::BadToken: return 401;
    case RejectReason::UnknownStation: return 404;
    case RejectReason::DuplicateSeq:
    case RejectReason::StaleSeq: return 409;
    case RejectReason::OutOfRange:
    case RejectReason::Malformed: return 422;
  }
  return 500;
}

struct Rejection {
  RejectReason reason;
  std::string detail;
};

using ValidationOutcome = Result<Measurement, Rejection>;

struct AcceptRanges {
  double pm_max_exclusive = 1000.0;
  double pm_flag_above = 500.0;  // nominal sensor range
  double temp_min = 0.0;
  double temp_max = 150.0;
};

inline ojson to_json(const TelemetryFrame& f) {
  return ojson{{"station_id", f.station_id}, {"token", f.token}, {"seq", f.seq},
               {"ts", f.ts},                 {"pm25", f.pm25},   {"pm10", f.pm10},
               {"temp_c", f.temp_c}};
}

inline std::string serialize(const TelemetryFrame& f) { return to_json(f).dump(); }

inline constexpr std::array<std::string_view, 7> kFrameKeys{
    "station_id", "token", "seq", "ts", "pm25", "pm10", "temp_c"};

namespace detail {

inline Rejection malformed(std::string detail) {
  return {RejectReason::Malformed, std::move(detail)};
}

}  // namespace detail

/// Syntax and schema check only: no registry, sequence or range rules.
inline Result<TelemetryFrame, Rejection> parse_frame(std::string_view text) {
  std::array<int, kFrameKeys.size()> seen{};
  bool unknown_key = false;
  bool duplicate_key = false;
  auto cb = [&](int depth, ojson::parse_event_t event, ojson& parsed) {
    if (event == ojson::parse_event_t::key && depth == 1) {
      const auto& key = parsed.get_ref<const std::string&>();
      bool known = false;
      for (std::size_t i = 0; i < kFrameKeys.size(); ++i) {
        if (key == kFrameKeys[i]) {
          known = true;
          if (++seen[i] > 1) duplicate_key = true;
        }
      }
      if (!known) unknown_key = true;
    }
    return true;
  };
  ojson j = ojson::parse(text.begin(), text.end(), cb, /*allow_exceptions=*/false);
  if (j.is_discarded()) return detail::malformed("invalid JSON");
  if (!j.is_object()) return detail::malformed("frame is not a JSON object");
  if (unknown_key) return detail::malformed("unknown key");
  if (duplicate_key) return detail::malformed("repeated key");
  for (std::size_t i = 0; i < kFrameKeys.size(); ++i)
    if (seen[i] == 0) return detail::malformed("missing key: " + std::string(kFrameKeys[i]));

  TelemetryFrame f;
  const auto& sid = j["station_id"];
  const auto& tok = j["token"];
  if (!sid.is_string() || !tok.is_string()) return detail::malformed("station_id/token not strings");
  f.station_id = sid.get<std::string>();
  f.token = tok.get<std::string>();
  if (!valid_station_id(f.station_id)) return detail::malformed("invalid station_id");
  if (!j["seq"].is_number_unsigned()) return detail::malformed("seq must be an unsigned integer");
  f.seq = j["seq"].get<std::uint64_t>();
  const auto& ts = j["ts"];
  if (!ts.is_number_integer()) return detail::malformed("ts must be an integer");
  if (ts.is_number_unsigned() && ts.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
    return detail::malformed("ts out of range");
  f.ts = ts.get<std::int64_t>();
  for (auto [key, dst] : {std::pair{"pm25", &f.pm25}, std::pair{"pm10", &f.pm10},
                          std::pair{"temp_c", &f.temp_c}}) {
    if (!j[key].is_number()) return detail::malformed(std::string(key) + " must be a number");
    *dst = j[key].get<double>();
  }
  return f;
}

namespace detail {

inline bool tokens_equal(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

}  // namespace detail

using TokenLookup = std::function<std::optional<std::string>(std::string_view station_id)>;
using LastSeqLookup = std::function<std::uint64_t(std::string_view station_id)>;

/// Full admission check for one submitted frame. Pure in its inputs.
/// Check order: syntax, station, token, value ranges, sequence.
inline ValidationOutcome parse_and_validate(std::string_view text, const TokenLookup& registry,
                                            const LastSeqLookup& last_seq,
                                            const AcceptRanges& ranges = {}) {
  auto parsed = parse_frame(text);
  if (!parsed) return parsed.error();
  const TelemetryFrame& f = *parsed;

  const auto token = registry(f.station_id);
  if (!token) return Rejection{RejectReason::UnknownStation, "unknown station " + f.station_id};
  if (!detail::tokens_equal(*token, f.token))
    return Rejection{RejectReason::BadToken, "token mismatch"};

  auto pm_ok = [&](double v) {
    return std::isfinite(v) && v >= 0.0 && v < ranges.pm_max_exclusive;
  };
  if (!pm_ok(f.pm25) || !pm_ok(f.pm10))
    return Rejection{RejectReason::OutOfRange, "particulate value out of range"};
  if (!std::isfinite(f.temp_c) || f.temp_c < ranges.temp_min || f.temp_c > ranges.temp_max)
    return Rejection{RejectReason::OutOfRange, "temperature out of range"};

  const std::uint64_t last = last_seq(f.station_id);
  if (f.seq == last) return Rejection{RejectReason::DuplicateSeq, "seq already accepted"};
  if (f.seq < last) return Rejection{RejectReason::StaleSeq, "seq below last accepted"};

  Measurement m{f.station_id, f.seq, f.ts, f.pm25, f.pm10, f.temp_c, 0};
  if (f.pm25 > ranges.pm_flag_above || f.pm10 > ranges.pm_flag_above)
    m.set(QualityFlag::BeyondSensorRange);
  return m;
}

/// Convenience overload over plain tables.
inline ValidationOutcome parse_and_validate(std::string_view text,
                                            const std::map<std::string, std::string, std::less<>>& registry,
                                            const std::map<std::string, std::uint64_t, std::less<>>& last_seq,
                                            const AcceptRanges& ranges = {}) {
  return parse_and_validate(
      text,
      [&](std::string_view id) -> std::optional<std::string> {
        auto it = registry.find(id);
        if (it == registry.end()) return std::nullopt;
        return it->second;
      },
      [&](std::string_view id) -> std::uint64_t {
        auto it = last_seq.find(id);
        return it == last_seq.end() ? 0 : it->second;
      },
      ranges);
}

}  // namespace aqmon

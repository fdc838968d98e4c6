#pragma once

// Wire emulation of the particulate sensor's 32-byte serial frame and the
// digital thermometer's 16-bit temperature register.
//
// Frame layout (all multi-byte fields big-endian):
//   0x42 0x4D | length (=28) | 13 data words | checksum
// checksum = sum of bytes 0..29, modulo 65536.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include "aqmon/result.hpp"

namespace aqmon {

struct PmFrame {
  std::uint16_t pm1_0_std = 0;
  std::uint16_t pm2_5_std = 0;
  std::uint16_t pm10_std = 0;
  std::uint16_t pm1_0_atm = 0;
  std::uint16_t pm2_5_atm = 0;
  std::uint16_t pm10_atm = 0;
  std::uint16_t counts_0_3um = 0;
  std::uint16_t counts_0_5um = 0;
  std::uint16_t counts_1_0um = 0;
  std::uint16_t counts_2_5um = 0;
  std::uint16_t counts_5_0um = 0;
  std::uint16_t counts_10um = 0;
  std::uint16_t reserved = 0;

  friend bool operator==(const PmFrame&, const PmFrame&) = default;
};

inline constexpr std::size_t kPmFrameSize = 32;
inline constexpr std::uint8_t kPmHeader0 = 0x42;
inline constexpr std::uint8_t kPmHeader1 = 0x4D;
inline constexpr std::uint16_t kPmFrameLength = 28;

using PmFrameBytes = std::array<std::uint8_t, kPmFrameSize>;

enum class FrameError : std::uint8_t { BadHeader, BadLength, BadChecksum };

inline constexpr std::string_view to_string(FrameError e) {
  switch (e) {
    case FrameError::BadHeader: return "BadHeader";
    case FrameError::BadLength: return "BadLength";
    case FrameError::BadChecksum: return "BadChecksum";
  }
  return "?";
}

namespace detail {

inline std::array<std::uint16_t, 13> frame_words(const PmFrame& f) {
  return {f.pm1_0_std,    f.pm2_5_std,    f.pm10_std,     f.pm1_0_atm,    f.pm2_5_atm,
          f.pm10_atm,     f.counts_0_3um, f.counts_0_5um, f.counts_1_0um, f.counts_2_5um,
          f.counts_5_0um, f.counts_10um,  f.reserved};
}

inline void put_be16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v >> 8);
  p[1] = static_cast<std::uint8_t>(v & 0xFF);
}

inline std::uint16_t get_be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

inline std::uint16_t byte_sum(std::span<const std::uint8_t> bytes) {
  unsigned sum = 0;
  for (auto b : bytes) sum += b;
  return static_cast<std::uint16_t>(sum & 0xFFFF);
}

}  // namespace detail

inline PmFrameBytes encode_pm_frame(const PmFrame& frame) {
  PmFrameBytes out{};
  out[0] = kPmHeader0;
  out[1] = kPmHeader1;
  detail::put_be16(&out[2], kPmFrameLength);
  const auto words = detail::frame_words(frame);
  for (std::size_t i = 0; i < words.size(); ++i) detail::put_be16(&out[4 + 2 * i], words[i]);
  detail::put_be16(&out[30], detail::byte_sum(std::span(out).first(30)));
  return out;
}

/// Decodes the first frame in `bytes`. Trailing bytes beyond 32 are ignored.
inline Result<PmFrame, FrameError> decode_pm_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPmFrameSize) return FrameError::BadLength;
  if (bytes[0] != kPmHeader0 || bytes[1] != kPmHeader1) return FrameError::BadHeader;
  if (detail::get_be16(&bytes[2]) != kPmFrameLength) return FrameError::BadLength;
  if (detail::get_be16(&bytes[30]) != detail::byte_sum(bytes.first(30)))
    return FrameError::BadChecksum;

  std::array<std::uint16_t, 13> w{};
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = detail::get_be16(&bytes[4 + 2 * i]);
  return PmFrame{w[0], w[1], w[2], w[3], w[4], w[5], w[6], w[7], w[8], w[9], w[10], w[11], w[12]};
}

/// Temperature register: signed 16-bit, 1/16 °C per LSB.
inline double decode_temp(std::int16_t raw) { return static_cast<double>(raw) / 16.0; }

/// Nearest register value for a temperature, saturating at the 16-bit range.
inline std::int16_t encode_temp(double celsius) {
  const double scaled = std::nearbyint(celsius * 16.0);
  if (scaled >= 32767.0) return 32767;
  if (scaled <= -32768.0) return -32768;
  return static_cast<std::int16_t>(scaled);
}

/// Hex dump plus decoded fields, for debugging frames on the command line.
inline std::string dump_pm_frame(std::span<const std::uint8_t> bytes) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%02X%s", bytes[i], (i % 16 == 15) ? "\n" : " ");
    out += buf;
  }
  if (!out.empty() && out.back() != '\n') out += '\n';
  auto r = decode_pm_frame(bytes);
  if (!r) {
    out += "error: ";
    out += to_string(r.error());
    out += '\n';
    return out;
  }
  const PmFrame& f = *r;
  static constexpr std::array<std::string_view, 13> names{
      "pm1_0_std",    "pm2_5_std",    "pm10_std",     "pm1_0_atm",    "pm2_5_atm",
      "pm10_atm",     "counts_0_3um", "counts_0_5um", "counts_1_0um", "counts_2_5um",
      "counts_5_0um", "counts_10um",  "reserved"};
  const auto words = detail::frame_words(f);
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-13.*s %u\n", static_cast<int>(names[i].size()),
                  names[i].data(), static_cast<unsigned>(words[i]));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "checksum      0x%04X ok\n", detail::get_be16(&bytes[30]));
  out += buf;
  return out;
}

}  // namespace aqmon

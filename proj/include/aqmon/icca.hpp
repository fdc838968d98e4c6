#pragma once

// Central American Air Quality Index (ICCA) for particulate matter.
//
// Concentrations are truncated to one decimal and handled internally as
// integer tenths of a µg/m³, so interpolation and rounding are exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace aqmon {

enum class Pollutant : std::uint8_t { PM25, PM10 };

inline constexpr std::string_view to_string(Pollutant p) {
  return p == Pollutant::PM25 ? "PM25" : "PM10";
}

inline std::optional<Pollutant> pollutant_from_string(std::string_view s) {
  if (s == "PM25" || s == "pm25") return Pollutant::PM25;
  if (s == "PM10" || s == "pm10") return Pollutant::PM10;
  return std::nullopt;
}

struct Category {
  int ordinal;
  std::string_view name;
  int index_lo;
  int index_hi;
  std::string_view color;

  friend bool operator==(const Category&, const Category&) = default;
};

inline constexpr std::array<Category, 6> kCategories{{
    {0, "Buena", 0, 50, "green"},
    {1, "Moderada", 51, 100, "yellow"},
    {2, "Dañina a la Salud de los Grupos Sensibles", 101, 150, "orange"},
    {3, "Dañina a la Salud", 151, 200, "red"},
    {4, "Muy dañina a la Salud", 201, 300, "purple"},
    {5, "Peligroso", 301, 500, "maroon"},
}};

inline constexpr int kIndexMax = 500;

/// Category whose index range contains `value` (clamped to 0..500).
inline constexpr const Category& category_for_index(int value) {
  for (const auto& c : kCategories)
    if (value <= c.index_hi) return c;
  return kCategories.back();
}

/// One row of a breakpoint ladder, bounds in tenths of µg/m³.
struct Breakpoint {
  std::int64_t c_lo_tenths;
  std::int64_t c_hi_tenths;
  int category;

  constexpr double c_lo() const { return static_cast<double>(c_lo_tenths) / 10.0; }
  constexpr double c_hi() const { return static_cast<double>(c_hi_tenths) / 10.0; }
};

using Ladder = std::array<Breakpoint, 6>;

// Transcribed verbatim, including the gaps between rows and the PM10 bound at
// 424 shared by the last two rows.
inline constexpr Ladder kPm25Ladder{{
    {0, 153, 0},
    {155, 402, 1},
    {405, 654, 2},
    {660, 1590, 3},
    {1600, 2500, 4},
    {2510, 5000, 5},
}};

inline constexpr Ladder kPm10Ladder{{
    {0, 540, 0},
    {560, 1540, 1},
    {1550, 2540, 2},
    {2550, 3540, 3},
    {3550, 4240, 4},
    {4240, 6040, 5},
}};

inline constexpr const Ladder& ladder(Pollutant p) {
  return p == Pollutant::PM25 ? kPm25Ladder : kPm10Ladder;
}

struct IccaResult {
  int value = 0;
  const Category* category = &kCategories[0];
  std::optional<Pollutant> dominant;
  bool beyond_scale = false;

  const Category& cat() const { return *category; }

  friend bool operator==(const IccaResult& a, const IccaResult& b) {
    return a.value == b.value && a.category == b.category && a.dominant == b.dominant &&
           a.beyond_scale == b.beyond_scale;
  }
};

class InsufficientData : public std::runtime_error {
 public:
  InsufficientData() : std::runtime_error("insufficient data: no sufficient average available") {}
};

/// Truncates a concentration to whole tenths. Throws std::domain_error for
/// negative or non-finite input.
inline std::int64_t to_tenths(double concentration) {
  if (!std::isfinite(concentration) || concentration < 0.0)
    throw std::domain_error("concentration must be finite and non-negative");
  return static_cast<std::int64_t>(std::floor(concentration * 10.0 + 1e-9));
}

inline IccaResult sub_index_tenths(Pollutant pollutant, std::int64_t tenths) {
  IccaResult r;
  r.dominant = pollutant;
  for (const auto& row : ladder(pollutant)) {
    const auto& cat = kCategories[static_cast<std::size_t>(row.category)];
    if (tenths < row.c_lo_tenths) {
      // inside a printed gap: next-higher category at its floor
      r.value = cat.index_lo;
      r.category = &cat;
      return r;
    }
    if (tenths <= row.c_hi_tenths) {
      const std::int64_t span = cat.index_hi - cat.index_lo;
      const std::int64_t num = span * (tenths - row.c_lo_tenths);
      const std::int64_t den = row.c_hi_tenths - row.c_lo_tenths;
      r.value = cat.index_lo + static_cast<int>((2 * num + den) / (2 * den));
      r.category = &cat;
      return r;
    }
  }
  r.value = kIndexMax;
  r.category = &kCategories.back();
  r.beyond_scale = true;
  return r;
}

/// Sub-index of one pollutant for a concentration in µg/m³.
inline IccaResult sub_index(Pollutant pollutant, double concentration) {
  return sub_index_tenths(pollutant, to_tenths(concentration));
}

enum class Aggregation : std::uint8_t { Max, Pm25Only };

/// Combines per-pollutant concentrations. Ties resolve to PM2.5.
inline IccaResult combined_icca(std::optional<double> pm25, std::optional<double> pm10,
                               Aggregation agg = Aggregation::Max) {
  if (agg == Aggregation::Pm25Only) pm10.reset();
  if (!pm25 && !pm10) throw InsufficientData{};
  std::optional<IccaResult> a, b;
  if (pm25) a = sub_index(Pollutant::PM25, *pm25);
  if (pm10) b = sub_index(Pollutant::PM10, *pm10);
  if (!a) return *b;
  if (!b) return *a;
  IccaResult r = (b->value > a->value) ? *b : *a;
  r.beyond_scale = a->beyond_scale || b->beyond_scale;
  return r;
}

struct Sample {
  std::int64_t ts;
  double value;
};

struct WindowAverage {
  double mean = 0.0;
  std::size_t sample_count = 0;
  std::size_t expected_count = 0;
  double coverage = 0.0;
  bool sufficient = false;
};

inline constexpr double kDefaultCoverageMin = 0.75;

/// Mean over samples with ts in (window_end - window, window_end].
/// `series` must be ordered by strictly increasing timestamp.
inline WindowAverage rolling_average(std::span<const Sample> series, std::int64_t window_end,
                                     std::int64_t window_s, std::int64_t report_period_s,
                                     double coverage_min = kDefaultCoverageMin) {
  if (window_s <= 0 || report_period_s <= 0)
    throw std::invalid_argument("window and report period must be positive");
  const std::int64_t start = window_end - window_s;
  auto first = std::upper_bound(series.begin(), series.end(), start,
                                [](std::int64_t t, const Sample& s) { return t < s.ts; });
  auto last = std::upper_bound(series.begin(), series.end(), window_end,
                               [](std::int64_t t, const Sample& s) { return t < s.ts; });
  WindowAverage w;
  w.expected_count = static_cast<std::size_t>(window_s / report_period_s);
  w.sample_count = static_cast<std::size_t>(std::distance(first, last));
  if (w.sample_count > 0) {
    double sum = 0.0;
    for (auto it = first; it != last; ++it) sum += it->value;
    w.mean = sum / static_cast<double>(w.sample_count);
  }
  if (w.expected_count > 0)
    w.coverage = std::min(
        1.0, static_cast<double>(w.sample_count) / static_cast<double>(w.expected_count));
  w.sufficient = w.sample_count > 0 && w.coverage >= coverage_min;
  return w;
}

/// Overall index from window averages; only sufficient windows take part.
inline IccaResult overall_icca(const std::optional<WindowAverage>& pm25,
                               const std::optional<WindowAverage>& pm10,
                               Aggregation agg = Aggregation::Max) {
  auto usable = [](const std::optional<WindowAverage>& w) -> std::optional<double> {
    if (w && w->sufficient) return w->mean;
    return std::nullopt;
  };
  return combined_icca(usable(pm25), usable(pm10), agg);
}

struct SummaryStats {
  double mean;
  double median;
  double max;
  double min;

  friend bool operator==(const SummaryStats&, const SummaryStats&) = default;
};

inline SummaryStats summary_stats(std::span<const double> series) {
  if (series.empty()) throw std::domain_error("summary_stats of an empty series");
  double sum = 0.0;
  for (double v : series) sum += v;
  std::vector<double> work(series.begin(), series.end());
  const std::size_t n = work.size();
  const auto mid = work.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(work.begin(), mid, work.end());
  double median = *mid;
  if (n % 2 == 0) {
    const double lower = *std::max_element(work.begin(), mid);
    median = (lower + median) / 2.0;
  }
  const auto [mn, mx] = std::minmax_element(series.begin(), series.end());
  return {sum / static_cast<double>(n), median, *mx, *mn};
}

}  // namespace aqmon

#pragma once

// Append-only per-station time series.
//
// Layout under the data directory:
//   stations.json              station registry (JSON array)
//   series/<station_id>.ndjson one measurement per line
//
// A line is a record only once its trailing newline is on disk; an
// unterminated final line is a torn write and is cut off when the store is
// opened.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "aqmon/measurement.hpp"
#include "aqmon/result.hpp"

namespace aqmon {

namespace fs = std::filesystem;

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownStationError : public StoreError {
 public:
  explicit UnknownStationError(const std::string& id) : StoreError("unknown station: " + id) {}
};

struct StationRecord {
  std::string station_id;
  std::string display_name;
  double latitude = 0.0;
  double longitude = 0.0;
  std::string token;
  std::int64_t report_period_s = 1200;
  std::int64_t created_at = 0;

  friend bool operator==(const StationRecord&, const StationRecord&) = default;
};

inline ojson to_json(const StationRecord& s) {
  return ojson{{"station_id", s.station_id}, {"display_name", s.display_name},
               {"latitude", s.latitude},     {"longitude", s.longitude},
               {"token", s.token},           {"report_period", s.report_period_s},
               {"created_at", s.created_at}};
}

/// Throws std::invalid_argument when the record breaks its invariants.
inline StationRecord station_from_json(const ojson& j) {
  StationRecord s;
  try {
    s.station_id = j.at("station_id").get<std::string>();
    s.display_name = j.value("display_name", s.station_id);
    s.latitude = j.value("latitude", 0.0);
    s.longitude = j.value("longitude", 0.0);
    s.token = j.at("token").get<std::string>();
    s.report_period_s = j.value("report_period", std::int64_t{1200});
    s.created_at = j.value("created_at", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad station record: ") + e.what());
  }
  if (!valid_station_id(s.station_id))
    throw std::invalid_argument("bad station id: " + s.station_id);
  if (s.report_period_s <= 0) throw std::invalid_argument("report_period must be positive");
  if (!(std::abs(s.latitude) <= 90.0) || !(std::abs(s.longitude) <= 180.0))
    throw std::invalid_argument("location out of bounds for " + s.station_id);
  return s;
}

struct AppendAck {
  std::uint64_t offset;  // byte offset of the record in its station log
};

struct DuplicateSeq {
  std::string station_id;
  std::uint64_t seq;
};

struct BackupManifest {
  std::map<std::string, std::uint64_t> record_counts;
  std::map<std::string, std::uint32_t> checksums;  // relative path -> crc32

  friend bool operator==(const BackupManifest&, const BackupManifest&) = default;
};

inline ojson to_json(const BackupManifest& m) {
  ojson counts = ojson::object(), files = ojson::object();
  for (const auto& [k, v] : m.record_counts) counts[k] = v;
  for (const auto& [k, v] : m.checksums) files[k] = {{"crc32", v}};
  return ojson{{"stations", counts}, {"files", files}};
}

inline BackupManifest manifest_from_json(const ojson& j) {
  BackupManifest m;
  for (const auto& [k, v] : j.at("stations").items()) m.record_counts[k] = v.get<std::uint64_t>();
  for (const auto& [k, v] : j.at("files").items()) m.checksums[k] = v.at("crc32").get<std::uint32_t>();
  return m;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw StoreError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(c);
}

namespace detail {

class FileHandle {
 public:
  FileHandle() = default;
  explicit FileHandle(int fd) : fd_(fd) {}
  FileHandle(FileHandle&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FileHandle& operator=(FileHandle&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
  ~FileHandle() { reset(); }

  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw StoreError(std::string("write failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

/// Writes to a sibling temp file and renames over the target.
inline void write_file_atomic(const fs::path& p, std::string_view data) {
  const fs::path tmp = p.string() + ".tmp";
  {
    FileHandle fh(::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (fh.get() < 0) throw StoreError("cannot write " + tmp.string());
    write_all(fh.get(), data);
    ::fsync(fh.get());
  }
  fs::rename(tmp, p);
}

}  // namespace detail

struct StoreOptions {
  bool sync_writes = true;  // fsync each append before acknowledging
};

class Store {
 public:
  /// Opens (creating if needed) the store in `data_dir`, rebuilding the
  /// in-memory index and cutting off torn tails.
  explicit Store(fs::path data_dir, StoreOptions opts = {})
      : dir_(std::move(data_dir)), opts_(opts) {
    std::error_code ec;
    fs::create_directories(dir_ / "series", ec);
    if (ec) throw StoreError("cannot create data dir " + dir_.string() + ": " + ec.message());
    load_registry();
  }

  const fs::path& data_dir() const { return dir_; }

  /// Adds or replaces a station. Replacing keeps its stored series.
  void register_station(const StationRecord& rec) {
    std::unique_lock lk(mu_);
    if (!valid_station_id(rec.station_id)) throw StoreError("bad station id: " + rec.station_id);
    stations_[rec.station_id] = rec;
    persist_registry();
    if (!series_.count(rec.station_id)) open_series(rec.station_id);
  }

  std::vector<StationRecord> stations() const {
    std::shared_lock lk(mu_);
    std::vector<StationRecord> out;
    for (const auto& [_, s] : stations_) out.push_back(s);
    return out;
  }

  std::optional<StationRecord> station(std::string_view id) const {
    std::shared_lock lk(mu_);
    auto it = stations_.find(std::string(id));
    if (it == stations_.end()) return std::nullopt;
    return it->second;
  }

  /// Durably appends one record. Duplicate (station, seq) leaves the store
  /// untouched. Throws StoreError on I/O failure or unknown station.
  Result<AppendAck, DuplicateSeq> append(const Measurement& m) {
    std::unique_lock lk(mu_);
    Series& s = series_for(m.station_id);
    if (s.seqs.count(m.seq)) return DuplicateSeq{m.station_id, m.seq};

    std::string line = to_json(m).dump();
    line += '\n';
    const std::uint64_t offset = s.size;
    try {
      detail::write_all(s.fd.get(), line);
      if (opts_.sync_writes && ::fdatasync(s.fd.get()) != 0)
        throw StoreError(std::string("fdatasync failed: ") + std::strerror(errno));
    } catch (...) {
      // drop whatever partial bytes made it so the log stays line-aligned
      [[maybe_unused]] const int rc = ::ftruncate(s.fd.get(), static_cast<off_t>(offset));
      throw;
    }
    s.size += line.size();
    insert_sorted(s, m);
    return AppendAck{offset};
  }

  /// Records with ts in [t0, t1], ascending by ts (then seq).
  std::vector<Measurement> query_range(std::string_view station, std::int64_t t0,
                                       std::int64_t t1) const {
    if (t0 > t1) throw std::invalid_argument("query_range: t0 > t1");
    std::shared_lock lk(mu_);
    const Series& s = series_for(station);
    auto lo = std::lower_bound(s.by_ts.begin(), s.by_ts.end(), t0,
                               [](const Measurement& m, std::int64_t t) { return m.ts < t; });
    auto hi = std::upper_bound(s.by_ts.begin(), s.by_ts.end(), t1,
                               [](std::int64_t t, const Measurement& m) { return t < m.ts; });
    return {lo, hi};
  }

  std::vector<Measurement> all(std::string_view station) const {
    std::shared_lock lk(mu_);
    return series_for(station).by_ts;
  }

  std::optional<Measurement> latest(std::string_view station) const {
    std::shared_lock lk(mu_);
    const Series& s = series_for(station);
    if (s.by_ts.empty()) return std::nullopt;
    return s.by_ts.back();
  }

  std::uint64_t last_seq(std::string_view station) const {
    std::shared_lock lk(mu_);
    auto it = series_.find(std::string(station));
    return it == series_.end() ? 0 : it->second.last_seq;
  }

  std::size_t count(std::string_view station) const {
    std::shared_lock lk(mu_);
    return series_for(station).by_ts.size();
  }

  std::size_t total_count() const {
    std::shared_lock lk(mu_);
    std::size_t n = 0;
    for (const auto& [_, s] : series_) n += s.by_ts.size();
    return n;
  }

  /// Copies the registry and every series file into `dest` (same layout) and
  /// writes `dest/manifest.json`.
  BackupManifest backup(const fs::path& dest) const {
    std::unique_lock lk(mu_);  // no appends while copying
    fs::create_directories(dest / "series");
    BackupManifest man;
    auto copy_one = [&](const fs::path& rel) {
      const std::string bytes = read_file(dir_ / rel);
      detail::write_file_atomic(dest / rel, bytes);
      man.checksums[rel.generic_string()] = crc32_of(bytes);
    };
    copy_one("stations.json");
    for (const auto& [id, s] : series_) {
      copy_one(fs::path("series") / (id + ".ndjson"));
      man.record_counts[id] = s.by_ts.size();
    }
    detail::write_file_atomic(dest / "manifest.json", to_json(man).dump(2) + "\n");
    return man;
  }

  /// Relative paths whose content no longer matches the manifest.
  static std::vector<std::string> verify_backup(const fs::path& backup_dir) {
    const auto man = manifest_from_json(ojson::parse(read_file(backup_dir / "manifest.json")));
    std::vector<std::string> bad;
    for (const auto& [rel, crc] : man.checksums) {
      std::error_code ec;
      if (!fs::exists(backup_dir / rel, ec) || crc32_of(read_file(backup_dir / rel)) != crc)
        bad.push_back(rel);
    }
    return bad;
  }

  /// Copies a verified backup into `data_dir`. Throws StoreError when any
  /// file fails its checksum.
  static void restore(const fs::path& backup_dir, const fs::path& data_dir) {
    const auto bad = verify_backup(backup_dir);
    if (!bad.empty()) throw StoreError("backup checksum mismatch: " + bad.front());
    const auto man = manifest_from_json(ojson::parse(read_file(backup_dir / "manifest.json")));
    fs::create_directories(data_dir / "series");
    for (const auto& [rel, _] : man.checksums)
      detail::write_file_atomic(data_dir / rel, read_file(backup_dir / rel));
  }

 private:
  struct Series {
    std::vector<Measurement> by_ts;
    std::unordered_set<std::uint64_t> seqs;
    std::uint64_t last_seq = 0;
    std::uint64_t size = 0;
    detail::FileHandle fd;
  };

  fs::path series_path(const std::string& id) const { return dir_ / "series" / (id + ".ndjson"); }

  Series& series_for(std::string_view id) {
    auto it = series_.find(std::string(id));
    if (it == series_.end()) throw UnknownStationError(std::string(id));
    return it->second;
  }
  const Series& series_for(std::string_view id) const {
    auto it = series_.find(std::string(id));
    if (it == series_.end()) throw UnknownStationError(std::string(id));
    return it->second;
  }

  static void insert_sorted(Series& s, const Measurement& m) {
    auto pos = std::upper_bound(s.by_ts.begin(), s.by_ts.end(), m, [](const auto& a, const auto& b) {
      return a.ts != b.ts ? a.ts < b.ts : a.seq < b.seq;
    });
    s.by_ts.insert(pos, m);
    s.seqs.insert(m.seq);
    s.last_seq = std::max(s.last_seq, m.seq);
  }

  void load_registry() {
    const fs::path reg = dir_ / "stations.json";
    if (fs::exists(reg)) {
      ojson j;
      try {
        j = ojson::parse(read_file(reg));
      } catch (const nlohmann::json::exception& e) {
        throw StoreError("corrupt stations.json: " + std::string(e.what()));
      }
      for (const auto& e : j) {
        auto rec = station_from_json(e);
        stations_[rec.station_id] = rec;
      }
    }
    for (const auto& [id, _] : stations_) open_series(id);
  }

  void persist_registry() const {
    ojson arr = ojson::array();
    for (const auto& [_, s] : stations_) arr.push_back(to_json(s));
    detail::write_file_atomic(dir_ / "stations.json", arr.dump(2) + "\n");
  }

  void open_series(const std::string& id) {
    const fs::path p = series_path(id);
    Series s;
    s.fd = detail::FileHandle(::open(p.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
    if (s.fd.get() < 0) throw StoreError("cannot open " + p.string() + ": " + std::strerror(errno));

    const std::string bytes = read_file(p);
    const std::size_t end = bytes.rfind('\n');
    const std::size_t keep = (end == std::string::npos) ? 0 : end + 1;
    std::size_t pos = 0;
    while (pos < keep) {
      const std::size_t nl = bytes.find('\n', pos);
      const std::string_view line(bytes.data() + pos, nl - pos);
      ojson j = ojson::parse(line, nullptr, false);
      auto m = j.is_discarded() ? std::nullopt : measurement_from_json(j);
      if (!m || m->station_id != id)
        throw StoreError("corrupt record in " + p.string() + " at byte " + std::to_string(pos));
      if (!s.seqs.count(m->seq)) insert_sorted(s, *m);
      pos = nl + 1;
    }
    if (keep != bytes.size() && ::ftruncate(s.fd.get(), static_cast<off_t>(keep)) != 0)
      throw StoreError("cannot truncate torn tail of " + p.string());
    s.size = keep;
    series_[id] = std::move(s);
  }

  fs::path dir_;
  StoreOptions opts_;
  mutable std::shared_mutex mu_;
  std::map<std::string, StationRecord> stations_;
  std::map<std::string, Series> series_;
};

}  // namespace aqmon

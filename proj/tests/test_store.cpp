#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "aqmon/store.hpp"
#include "test_support.hpp"

using namespace aqmon;
using aqmon::testkit::make_measurement;
using aqmon::testkit::simple_station;
using aqmon::testkit::TempDir;

namespace {

StoreOptions fast() { return {.sync_writes = false}; }

}  // namespace

TEST(Store, AppendAcknowledgesOffsets) {
  TempDir dir;
  Store s(dir.path());
  s.register_station(simple_station("a"));
  auto r1 = s.append(make_measurement("a", 1, 100));
  auto r2 = s.append(make_measurement("a", 2, 200));
  ASSERT_TRUE(r1.ok() && r2.ok());
  EXPECT_EQ(r1->offset, 0u);
  EXPECT_GT(r2->offset, 0u);
  const std::string bytes = read_file(dir / "series/a.ndjson");
  EXPECT_EQ(r2->offset, bytes.find('\n') + 1);
  EXPECT_EQ(bytes.size(), bytes.rfind('\n') + 1);
  EXPECT_EQ(s.count("a"), 2u);
  EXPECT_EQ(s.last_seq("a"), 2u);
}

TEST(Store, DuplicateSeqLeavesStoreUntouched) {
  TempDir dir;
  Store s(dir.path());
  s.register_station(simple_station("a"));
  ASSERT_TRUE(s.append(make_measurement("a", 7, 100)).ok());
  const auto size = fs::file_size(dir / "series/a.ndjson");
  auto dup = s.append(make_measurement("a", 7, 500, 99.0));
  ASSERT_FALSE(dup.ok());
  EXPECT_EQ(dup.error().seq, 7u);
  EXPECT_EQ(fs::file_size(dir / "series/a.ndjson"), size);
  EXPECT_EQ(s.count("a"), 1u);
  EXPECT_EQ(s.latest("a")->pm25, 10.0);
}

TEST(Store, UnknownStationThrows) {
  TempDir dir;
  Store s(dir.path());
  EXPECT_THROW(s.append(make_measurement("ghost", 1, 1)), UnknownStationError);
  EXPECT_THROW(s.query_range("ghost", 0, 1), UnknownStationError);
  EXPECT_EQ(s.last_seq("ghost"), 0u);
}

TEST(Store, FiveStationsOfSeventyTwo) {
  TempDir dir;
  Store s(dir.path(), fast());
  const std::int64_t t0 = 1699941600;
  for (int k = 0; k < 5; ++k) {
    const std::string id = "st-" + std::to_string(k);
    s.register_station(simple_station(id));
    for (int i = 1; i <= 72; ++i) ASSERT_TRUE(s.append(make_measurement(id, i, t0 + i * 1200)).ok());
  }
  for (int k = 0; k < 5; ++k) {
    const std::string id = "st-" + std::to_string(k);
    EXPECT_EQ(s.count(id), 72u);
    EXPECT_EQ(s.query_range(id, t0, t0 + 86400).size(), 72u);
  }
  EXPECT_EQ(s.total_count(), 360u);
}

TEST(Store, QueryRangeMatchesBruteForce) {
  TempDir dir;
  Store s(dir.path(), fast());
  s.register_station(simple_station("q"));
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::int64_t> ts(0, 10000);
  std::vector<Measurement> all;
  // out-of-order arrivals on purpose
  for (std::uint64_t seq = 1; seq <= 500; ++seq) {
    auto m = make_measurement("q", seq, ts(rng), static_cast<double>(seq));
    all.push_back(m);
    ASSERT_TRUE(s.append(m).ok());
  }
  for (int trial = 0; trial < 300; ++trial) {
    std::int64_t a = ts(rng), b = ts(rng);
    if (a > b) std::swap(a, b);
    std::multiset<std::pair<std::int64_t, std::uint64_t>> want;
    for (const auto& m : all)
      if (m.ts >= a && m.ts <= b) want.emplace(m.ts, m.seq);
    const auto got = s.query_range("q", a, b);
    ASSERT_EQ(got.size(), want.size());
    auto it = want.begin();
    for (const auto& m : got) {
      ASSERT_EQ(m.ts, it->first);
      ASSERT_EQ(m.seq, it->second);
      ++it;
    }
  }
  EXPECT_THROW(s.query_range("q", 10, 9), std::invalid_argument);
  EXPECT_EQ(s.latest("q")->ts, std::max_element(all.begin(), all.end(), [](auto& x, auto& y) {
                                  return x.ts < y.ts;
                                })->ts);
}

TEST(Store, ReopenRestoresIndexAndUniqueness) {
  TempDir dir;
  {
    Store s(dir.path());
    s.register_station(simple_station("a"));
    for (std::uint64_t i = 1; i <= 10; ++i) ASSERT_TRUE(s.append(make_measurement("a", i, 100 * i)).ok());
  }
  Store s(dir.path());
  EXPECT_EQ(s.count("a"), 10u);
  EXPECT_EQ(s.last_seq("a"), 10u);
  EXPECT_FALSE(s.append(make_measurement("a", 4, 9999)).ok());
  EXPECT_TRUE(s.append(make_measurement("a", 11, 1100)).ok());
  EXPECT_EQ(s.station("a")->token, "secret");
}

TEST(Store, TornTailIsCutOnOpen) {
  TempDir dir;
  {
    Store s(dir.path());
    s.register_station(simple_station("a"));
    for (std::uint64_t i = 1; i <= 3; ++i) ASSERT_TRUE(s.append(make_measurement("a", i, 100 * i)).ok());
  }
  const auto path = dir / "series/a.ndjson";
  const auto good_size = fs::file_size(path);
  {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << R"({"station_id":"a","seq":4,"ts":400,"pm)";
  }
  Store s(dir.path());
  EXPECT_EQ(s.count("a"), 3u);
  EXPECT_EQ(fs::file_size(path), good_size);
  ASSERT_TRUE(s.append(make_measurement("a", 4, 400)).ok());
  Store again(dir.path());
  EXPECT_EQ(again.count("a"), 4u);
}

TEST(Store, CorruptCompleteLineIsAnError) {
  TempDir dir;
  {
    Store s(dir.path());
    s.register_station(simple_station("a"));
  }
  {
    std::ofstream out(dir / "series/a.ndjson", std::ios::app);
    out << "garbage\n";
  }
  EXPECT_THROW(Store s(dir.path()), StoreError);
}

TEST(Store, ConcurrentAppendsAndReads) {
  TempDir dir;
  Store s(dir.path(), fast());
  for (int k = 0; k < 4; ++k) s.register_station(simple_station("c" + std::to_string(k)));
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k)
    threads.emplace_back([&, k] {
      const std::string id = "c" + std::to_string(k);
      for (std::uint64_t i = 1; i <= 200; ++i) {
        ASSERT_TRUE(s.append(make_measurement(id, i, static_cast<std::int64_t>(i))).ok());
        (void)s.query_range(id, 0, 1000);
      }
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(s.total_count(), 800u);
}

TEST(Store, BackupVerifyRestore) {
  TempDir dir, bak, dest;
  {
    Store s(dir.path(), fast());
    s.register_station(simple_station("a"));
    s.register_station(simple_station("b"));
    for (std::uint64_t i = 1; i <= 20; ++i) {
      ASSERT_TRUE(s.append(make_measurement("a", i, 10 * i)).ok());
      if (i % 2) { ASSERT_TRUE(s.append(make_measurement("b", i, 10 * i)).ok()); }
    }
    const auto man = s.backup(bak.path());
    EXPECT_EQ(man.record_counts.at("a"), 20u);
    EXPECT_EQ(man.record_counts.at("b"), 10u);
    EXPECT_EQ(man.checksums.size(), 3u);
  }
  EXPECT_TRUE(Store::verify_backup(bak.path()).empty());
  Store::restore(bak.path(), dest.path());
  Store restored(dest.path());
  EXPECT_EQ(restored.count("a"), 20u);
  EXPECT_EQ(restored.count("b"), 10u);
  EXPECT_EQ(restored.all("a"), Store(dir.path()).all("a"));
}

TEST(Store, TamperedBackupIsRejected) {
  TempDir dir, bak, dest;
  {
    Store s(dir.path(), fast());
    s.register_station(simple_station("a"));
    ASSERT_TRUE(s.append(make_measurement("a", 1, 10, 12.5)).ok());
    s.backup(bak.path());
  }
  const auto victim = bak / "series/a.ndjson";
  std::string bytes = read_file(victim);
  bytes[bytes.find("12.5")] = '9';
  {
    std::ofstream out(victim, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  EXPECT_EQ(Store::verify_backup(bak.path()), std::vector<std::string>{"series/a.ndjson"});
  EXPECT_THROW(Store::restore(bak.path(), dest.path()), StoreError);
  EXPECT_FALSE(fs::exists(dest / "series/a.ndjson"));
}

TEST(StationRecord, JsonRoundTripAndValidation) {
  auto rec = simple_station("sv-01", "tok");
  rec.created_at = 42;
  EXPECT_EQ(station_from_json(to_json(rec)), rec);
  auto j = to_json(rec);
  j["report_period"] = 0;
  EXPECT_THROW(station_from_json(j), std::invalid_argument);
  j = to_json(rec);
  j["latitude"] = 91.0;
  EXPECT_THROW(station_from_json(j), std::invalid_argument);
  j = to_json(rec);
  j["station_id"] = "Bad Id";
  EXPECT_THROW(station_from_json(j), std::invalid_argument);
  j = to_json(rec);
  j.erase("token");
  EXPECT_THROW(station_from_json(j), std::invalid_argument);
}

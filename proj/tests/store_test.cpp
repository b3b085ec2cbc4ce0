#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "curate/store.hpp"

using namespace curate;
using namespace curate::store;

namespace {

const SynsetId kA("n20000001");

EngineConfig config() {
  EngineConfig c;
  const auto gold = imageability::default_gold_standard();
  c.imageability = imageability::EngineConfig::with_gold(gold);
  const std::vector<demographics::DemographicGold> dg{{"gold_00", {demographics::Category::Male}}};
  c.demographics = demographics::EngineConfig::with_gold(dg);
  return c;
}

std::string temp_path(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("curate_store_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove(p);
  return p.string();
}

json random_record(std::mt19937_64& rng, std::int64_t ts) {
  const auto w = "w" + std::to_string(rng() % 200);
  if (rng() % 2) {
    const auto sid = rng() % 20 == 0 ? std::string("n10605253") : "n200" + std::to_string(10000 + rng() % 2000);
    return imageability_record(w, SynsetId(sid), 1 + static_cast<int>(rng() % 5), ts);
  }
  demographics::Judgment j;
  j.worker = w;
  j.image = rng() % 20 == 0 ? "gold_00" : "img" + std::to_string(rng() % 3000);
  j.synset = SynsetId("n30000001");
  if (rng() % 10 == 0) {
    j.none_found = true;
  } else {
    for (auto a : demographics::kAttributes) {
      const auto cats = demographics::categories_of(a);
      j[a].insert(cats[rng() % 2]);
    }
  }
  return demographic_record(j, ts);
}

/// Submits n records, skipping the ones the engines refuse.
void drive(Pipeline& p, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    try {
      p.submit(random_record(rng, static_cast<std::int64_t>(k)));
    } catch (const Rejected&) {
    }
  }
}

}  // namespace

TEST(Records, Validation) {
  EXPECT_EQ(validate_record(imageability_record("w", kA, 3, 1)), Kind::Imageability);
  EXPECT_THROW(validate_record(json{{"kind", "imageability"}}), ValidationError);
  auto bad = imageability_record("w", kA, 6, 1);
  EXPECT_THROW(validate_record(bad), ValidationError);
  bad = imageability_record("w", kA, 3, 1);
  bad["timestamp"] = "now";
  EXPECT_THROW(validate_record(bad), ValidationError);
  bad = imageability_record("", kA, 3, 1);
  EXPECT_THROW(validate_record(bad), ValidationError);
  EXPECT_THROW(validate_record(json{{"kind", "unknown"}, {"timestamp", 1}}), ValidationError);
  EXPECT_THROW(validate_record(json::array()), ValidationError);
  EXPECT_EQ(validate_record(exclusion_record("demographics", "w", "manual", 2)), Kind::Exclusion);
  EXPECT_THROW(validate_record(exclusion_record("other", "w", "manual", 2)), ValidationError);
  EXPECT_EQ(validate_record(checkpoint_record("00", 3)), Kind::Admin);
  EXPECT_THROW(validate_record(json{{"kind", "admin"}, {"op", "drop"}, {"timestamp", 1}}), ValidationError);
  json d = json::parse(R"({"kind":"demographic","worker":"w","image":"i","synset":"n30000001",
                           "gender":["Male"],"skin":["Dark"],"age":["Over65"],"none_found":false,"timestamp":4})");
  EXPECT_EQ(validate_record(d), Kind::Demographic);
  d["skin"] = json::array({"Male"});
  EXPECT_THROW(validate_record(d), ValidationError);
  d["skin"] = json::array();
  EXPECT_THROW(validate_record(d), ValidationError);
}

TEST(Log, AppendAssignsDenseOffsets) {
  auto log = JudgmentLog::in_memory();
  EXPECT_EQ(log.append(imageability_record("w", kA, 3, 1)), 0u);
  EXPECT_EQ(log.append(imageability_record("x", kA, 3, 2)), 1u);
  EXPECT_THROW(log.append(json{{"kind", "imageability"}}), ValidationError);
  EXPECT_EQ(log.head(), 2u);
  EXPECT_EQ(log.at(1).at("offset"), 1);
}

TEST(Log, EmptyReplay) {
  const auto log = JudgmentLog::in_memory();
  EXPECT_EQ(log.rebuild(config()).digest(), EngineState(config()).digest());
}

TEST(Log, ReplayEqualsLive) {
  auto log = JudgmentLog::in_memory();
  EngineState live(config());
  Pipeline p(log, live);
  for (std::uint64_t seed = 41; log.head() <= 10000; ++seed) drive(p, 2000, seed);
  ASSERT_GT(log.head(), 10000u);
  EXPECT_EQ(log.rebuild(config()).digest(), live.digest());
  EXPECT_EQ(log.rebuild(config()).digest(), log.rebuild(config()).digest());
}

TEST(Log, PartialReplayContinues) {
  auto log = JudgmentLog::in_memory();
  EngineState live(config());
  Pipeline p(log, live);
  drive(p, 3000, 42);
  EngineState s(config());
  const auto k = log.head() / 3;
  log.replay(s, 0, k);
  log.replay(s, k);
  EXPECT_EQ(s.digest(), live.digest());
  EXPECT_THROW(log.replay(s, log.head() + 1), ValidationError);
}

TEST(Log, GoldExclusionIsLogged) {
  auto log = JudgmentLog::in_memory();
  EngineState s(config());
  Pipeline p(log, s);
  p.submit_rating("bad", SynsetId("n10605253"), 1, 5);
  ASSERT_EQ(log.head(), 2u);
  EXPECT_EQ(log.at(1).at("kind"), "exclusion");
  EXPECT_EQ(log.at(1).at("worker"), "bad");
  EXPECT_THROW(p.submit_rating("bad", kA, 3, 6), Rejected);
  EXPECT_EQ(log.head(), 2u);
}

TEST(Log, FileRoundTripAndCheckpoints) {
  const auto path = temp_path("roundtrip.log");
  std::string digest;
  {
    LogOptions o;
    o.sync = false;
    o.checkpoint_interval = 100;
    auto log = JudgmentLog::open(path, o);
    EngineState live(config());
    Pipeline p(log, live);
    drive(p, 1500, 43);
    digest = live.digest();
  }
  std::size_t checkpoints = 0;
  {
    const auto log = JudgmentLog::read_file(path);
    for (const auto& r : log.records()) checkpoints += r.at("kind") == "admin";
    EXPECT_EQ(log.rebuild(config()).digest(), digest);
  }
  EXPECT_GE(checkpoints, 10u);
  {
    auto log = JudgmentLog::open(path);
    EngineState s = log.rebuild(config());
    Pipeline p(log, s);
    const auto before = log.head();
    EXPECT_EQ(p.submit(imageability_record("fresh", SynsetId("n29999999"), 3, 99)), before);
  }
  EXPECT_EQ(JudgmentLog::read_file(path).at(JudgmentLog::read_file(path).head() - 1).at("worker"), "fresh");
  std::filesystem::remove(path);
}

TEST(Log, DetectsCorruption) {
  const auto path = temp_path("corrupt.log");
  {
    LogOptions o;
    o.sync = false;
    o.checkpoint_interval = 5;
    auto log = JudgmentLog::open(path, o);
    for (int i = 0; i < 12; ++i) log.append(imageability_record("w" + std::to_string(i), kA, 3, i));
  }
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  auto expect_corrupt_at = [](const std::vector<std::string>& ls, std::uint64_t off) {
    std::ostringstream s;
    for (const auto& l : ls) s << l << '\n';
    std::istringstream in(s.str());
    try {
      JudgmentLog::read(in);
      ADD_FAILURE() << "accepted corrupt log";
    } catch (const CorruptLog& e) {
      EXPECT_EQ(e.offset(), off);
    }
  };
  auto edited = lines;
  edited[2].replace(edited[2].find("\"w2\""), 4, "\"wX\"");
  expect_corrupt_at(edited, 5);  // caught at the next checkpoint
  edited = lines;
  edited[3] = "{not json";
  expect_corrupt_at(edited, 3);
  edited = lines;
  edited.erase(edited.begin() + 1);
  expect_corrupt_at(edited, 1);
  edited = lines;
  edited[4] = R"({"kind":"imageability","offset":4,"timestamp":1,"worker":"w","synset":"n20000001","value":9})";
  expect_corrupt_at(edited, 4);
  std::filesystem::remove(path);
}

TEST(Log, RejectedRecordHaltsReplay) {
  auto log = JudgmentLog::in_memory();
  log.append(imageability_record("w", kA, 3, 1));
  log.append(imageability_record("w", kA, 4, 2));
  EngineState s(config());
  try {
    log.replay(s);
    FAIL();
  } catch (const CorruptLog& e) {
    EXPECT_EQ(e.offset(), 1u);
  }
  EngineState t(config());
  ReplayOptions skip;
  skip.skip_rejected = true;
  EXPECT_EQ(log.replay(t, 0, std::nullopt, skip).skipped, 1u);
}

TEST(Log, ExclusionRecordIdempotent) {
  auto log = JudgmentLog::in_memory();
  EngineState s(config());
  Pipeline p(log, s);
  for (int i = 0; i < 4; ++i) p.submit_rating("w" + std::to_string(i), kA, 4, i);
  p.submit(exclusion_record("imageability", "w3", "manual", 9));
  p.submit(exclusion_record("imageability", "w3", "manual", 10));
  EXPECT_EQ(s.imageability.task(kA).state, imageability::TaskState::Collecting);
  EXPECT_EQ(log.rebuild(config()).digest(), s.digest());
}

TEST(Export, ClassificationTable) {
  std::istringstream g("n00000001\ta\t\t\nn00000002\tb\t\tn00000001\nn00000003\tc\t\tn00000001\nn00000004\td\t\tn00000001\n");
  auto h = Hierarchy::load_graph(g);
  std::istringstream u("n00000002 sensitive\n"), s("n00000001\nn00000003\n");
  h.apply_safety_labels(u, s);
  h.set_imageability(SynsetId("n00000003"), 4.2);
  h.set_imageability(SynsetId("n00000001"), 1.5);
  const auto t = classification_table(h);
  EXPECT_EQ(t,
            "# counts\t0\t1\t1\t1\tunlabeled=1\n"
            "unsafe_offensive\tunsafe_sensitive\tsafe_non_imageable\tsafe_imageable\n"
            "\tn00000002\tn00000001\tn00000003\n");
}

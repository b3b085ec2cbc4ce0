#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "curate/service.hpp"

using namespace curate;
using namespace curate::service;
using demographics::Category;

namespace {

const char* kGraph =
    "n00007846\tperson\ta human being\t\n"
    "n10605253\tskier\tsomeone who skis\tn00007846\n"
    "n10366966\tnurse\tcares for the sick\tn00007846\n"
    "n90000001\tbad word\tplaceholder\tn00007846\n";

store::EngineConfig config() {
  store::EngineConfig c;
  const std::vector<demographics::DemographicGold> dg{{"gold_00", {Category::Male, Category::Light, Category::Adult}}};
  c.demographics = demographics::EngineConfig::with_gold(dg);
  return c;
}

demographics::Judgment judgment(const std::string& w, const std::string& img, Category g) {
  demographics::Judgment j;
  j.worker = w;
  j.image = img;
  j.synset = SynsetId("n10605253");
  j[demographics::Attribute::Gender] = {g};
  j[demographics::Attribute::Skin] = {Category::Light};
  j[demographics::Attribute::Age] = {Category::Adult};
  return j;
}

/// 100 Male / 40 Female resolved images under the skier synset.
std::shared_ptr<Snapshot> fixture() {
  std::istringstream g(kGraph), i("a\tn10605253\nb\tn10605253\nc\tn10366966\n");
  auto h = Hierarchy::load(g, i);
  std::istringstream u("n90000001\n"), s("n00007846\nn10605253\nn10366966\n");
  h.apply_safety_labels(u, s);
  h.set_imageability(SynsetId("n10605253"), 4.5);
  h.set_imageability(SynsetId("n10366966"), 4.1);
  h.set_imageability(SynsetId("n00007846"), 2.6);
  store::EngineState st(config());
  for (int k = 0; k < 140; ++k)
    for (const char* w : {"a", "b"}) st.demographics.submit(judgment(w, "img" + std::to_string(k), k < 100 ? Category::Male : Category::Female));
  return std::make_shared<Snapshot>(Snapshot{std::move(h), std::move(st), 280});
}

}  // namespace

TEST(Api, Healthz) {
  Api api(fixture());
  const auto r = api.healthz();
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["offset"], 280);
}

TEST(Api, ListSynsets) {
  Api api(fixture());
  auto r = api.list_synsets(std::string("safe"), std::string("4"));
  EXPECT_EQ(r.body["synsets"], json::array({"n10366966", "n10605253"}));
  r = api.list_synsets(std::string("unsafe"), std::nullopt);
  EXPECT_EQ(r.body["count"], 1);
  r = api.list_synsets(std::nullopt, std::nullopt, std::string("n10605253"));
  EXPECT_EQ(r.body["count"], 1);
  EXPECT_EQ(api.list_synsets(std::string("maybe"), std::nullopt).status, 400);
  EXPECT_EQ(api.list_synsets(std::nullopt, std::string("four")).status, 400);
  EXPECT_EQ(api.list_synsets(std::nullopt, std::nullopt, std::string("n99999999")).status, 404);
}

TEST(Api, GetSynset) {
  Api api(fixture());
  const auto r = api.get_synset("n10605253");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["safety"], "safe");
  EXPECT_EQ(r.body["image_count"], 2);
  EXPECT_EQ(r.body["parents"], json::array({"n00007846"}));
  EXPECT_EQ(api.get_synset("n00000000").body["error"], "UNKNOWN_SYNSET");
  EXPECT_TRUE(api.get_synset("n00007846").body["children"].size() == 3);
}

TEST(Api, Demographics) {
  Api api(fixture());
  const auto r = api.demographics("n10605253", std::string("gender"));
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["resolved_images"], 140);
  EXPECT_NEAR(r.body["distribution"]["Male"].get<double>(), 100.0 * 100 / 140, 1e-9);
  const auto all = api.demographics("n10605253", std::nullopt);
  EXPECT_EQ(all.body["attributes"]["skin"]["distribution"]["Light"], 100.0);
  EXPECT_EQ(api.demographics("n10366966", std::string("gender")).body["error"], "NO_RESOLVED_RECORDS");
  EXPECT_EQ(api.demographics("n10605253", std::string("height")).status, 400);
  EXPECT_EQ(api.demographics("bogus", std::nullopt).status, 404);
  // Aggregates only: no image ids anywhere in the payload.
  EXPECT_EQ(all.body.dump().find("img"), std::string::npos);
}

TEST(Api, Balance) {
  Api api(fixture());
  auto r = api.balance(R"({"synset":"n10605253","attribute":"gender","categories":["Male","Female"],"seed":7})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["counts"]["Male"], 36);
  EXPECT_EQ(r.body["counts"]["Female"], 36);
  EXPECT_EQ(r.body["total"], 72);
  EXPECT_EQ(r.body["selected"].size(), 72u);
  const auto again = api.balance(R"({"synset":"n10605253","attribute":"gender","categories":["Male","Female"],"seed":7})");
  EXPECT_EQ(again.body.dump(), r.body.dump());
  const auto other = api.balance(R"({"synset":"n10605253","attribute":"gender","categories":["Male","Female"],"seed":8})");
  EXPECT_EQ(other.body["counts"], r.body["counts"]);
  EXPECT_NE(other.body["selected"], r.body["selected"]);
}

TEST(Api, BalanceErrors) {
  Api api(fixture());
  auto code = [&](const std::string& body) {
    const auto r = api.balance(body);
    return std::to_string(r.status) + " " + r.body.value("error", "");
  };
  EXPECT_EQ(code(R"({"synset":"n10605253","attribute":"gender","categories":["Male"],"seed":1})"),
            "422 TOO_FEW_CATEGORIES");
  EXPECT_EQ(code(R"({"synset":"n10605253","attribute":"gender","categories":["Male","Unsure"]})"),
            "422 POOL_BELOW_MINIMUM");
  EXPECT_EQ(code(R"({"synset":"n10605253","attribute":"gender","categories":["Male","Female"],
                     "weights":{"Male":0.7,"Female":0.7}})"),
            "422 BAD_WEIGHTS");
  EXPECT_EQ(code(R"({"synset":"n10605253","attribute":"gender","categories":["Male","Female"],
                     "weights":{"Male":0.5,"Tall":0.5}})"),
            "422 BAD_WEIGHTS");
  EXPECT_EQ(code("not json"), "400 INVALID_REQUEST");
  EXPECT_EQ(code(R"({"attribute":"gender","categories":["Male","Female"]})"), "400 INVALID_REQUEST");
  EXPECT_EQ(code(R"({"synset":"n10605253","attribute":"gender","categories":["Male","Dark"]})"), "400 INVALID_REQUEST");
  EXPECT_EQ(code(R"({"synset":"n10605253","attribute":"mood","categories":["Male","Female"]})"), "400 INVALID_REQUEST");
}

TEST(Api, Report) {
  Api api(fixture());
  const auto r = api.report();
  EXPECT_EQ(r.body["counts"]["unsafe_offensive"], 1);
  EXPECT_EQ(r.body["counts"]["safe_imageable"], 2);
  EXPECT_EQ(r.body["counts"]["safe_non_imageable"], 1);
  EXPECT_EQ(r.body["columns"]["safe_non_imageable"], json::array({"n00007846"}));
}

TEST(Ingestor, PublishesNewSnapshot) {
  Api api(std::make_shared<Snapshot>(Snapshot{Hierarchy{}, store::EngineState(config()), 0}));
  auto log = store::JudgmentLog::in_memory();
  Ingestor in(api, log);
  std::string body;
  for (int k = 0; k < 3; ++k)
    for (const char* w : {"a", "b"}) body += store::demographic_record(judgment(w, "x" + std::to_string(k), Category::Male), k).dump() + "\n";
  const auto before = api.snapshot();
  auto r = in.ingest(body);
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["accepted"], 6);
  EXPECT_EQ(api.healthz().body["offset"], 6);
  EXPECT_EQ(before->offset, 0u);
  EXPECT_TRUE(before->state.demographics.records().empty());
  EXPECT_EQ(api.demographics("n10605253", std::string("gender")).body["resolved_images"], 3);

  r = in.ingest(store::demographic_record(judgment("c", "x0", Category::Male), 9).dump());
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(r.body["error"], "FINALIZED");
  EXPECT_EQ(in.ingest("{\"kind\":\"imageability\"}").status, 400);
  EXPECT_EQ(in.ingest("garbage").status, 400);
  EXPECT_EQ(log.head(), 6u);
  EXPECT_EQ(log.rebuild(config()).digest(), api.snapshot()->state.digest());
}

TEST(Http, RoundTrip) {
  Api api(fixture());
  auto log = store::JudgmentLog::in_memory();
  Ingestor ingestor(api, log);
  httplib::Server server;
  install_routes(server, api, &ingestor);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Get("/healthz");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["offset"], 280);

  res = cli.Get("/synsets?min_imageability=4&safety=safe");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["count"], 2);

  res = cli.Get("/synsets/n10605253");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["lemmas"], json::array({"skier"}));

  res = cli.Get("/synsets/n10605253/demographics?attribute=gender");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["resolved_images"], 140);

  res = cli.Get("/synsets/n99999999");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  res = cli.Post("/balance", R"({"synset":"n10605253","attribute":"gender","categories":["Male"]})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["error"], "TOO_FEW_CATEGORIES");

  res = cli.Post("/balance", R"({"synset":"n10605253","attribute":"gender","categories":["Male","Female"],"seed":3})",
                 "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["total"], 72);

  res = cli.Get("/report");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["counts"]["safe_imageable"], 2);

  res = cli.Post("/ingest", store::demographic_record(judgment("z", "new", Category::Female), 1).dump(), "application/x-ndjson");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["offset"], 1);

  server.stop();
  t.join();
}

TEST(Http, ConcurrentReadsDuringIngest) {
  Api api(std::make_shared<Snapshot>(Snapshot{Hierarchy{}, store::EngineState(config()), 0}));
  auto log = store::JudgmentLog::in_memory();
  Ingestor in(api, log);
  std::atomic<bool> done{false};
  std::thread reader([&] {
    while (!done) {
      const auto snap = api.snapshot();
      // A published snapshot is never half-applied: its offset matches its state.
      std::size_t judged = 0;
      for (const auto& [k, r] : snap->state.demographics.records()) judged += r.judgments.size();
      EXPECT_EQ(judged, snap->offset);
    }
  });
  for (int k = 0; k < 200; ++k)
    in.ingest(store::demographic_record(judgment(k % 2 ? "a" : "b", "x" + std::to_string(k / 2), Category::Male), k).dump());
  done = true;
  reader.join();
  EXPECT_EQ(api.snapshot()->offset, 200u);
}

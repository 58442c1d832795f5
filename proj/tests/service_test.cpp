#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include "streetreview/service.hpp"

using namespace streetreview;
using namespace streetreview::service;

namespace {

namespace fs = std::filesystem;

dataset::Catalog make_catalog(const fs::path& image_dir, int points = 8) {
  dataset::Catalog::Builder b;
  for (int i = 0; i < points; ++i) {
    const std::string pid = "p" + std::to_string(i);
    b.add_point({pid, "st" + std::to_string(i / 3), dataset::Position::center, 45.5, -73.6});
    for (int a : {0, 60, 120, 130, 200}) {
      const std::string fid = pid + "_" + std::to_string(a);
      b.add_frame({fid, pid, a, fid + ".srim", std::nullopt});
      std::ofstream(image_dir / (fid + ".srim")) << "img:" << fid;
    }
  }
  return std::move(b).build();
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sr_service_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "images");
    catalog_ = make_catalog(dir_ / "images");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::unique_ptr<Service> make() {
    ServiceConfig cfg;
    cfg.data_dir = dir_ / "data";
    cfg.image_dir = dir_ / "images";
    int tick = 0;
    return std::make_unique<Service>(catalog_, cfg, [tick]() mutable {
      return "t" + std::to_string(tick++);
    });
  }

  static Response post(Service& s, const std::string& path, const json& body) {
    return s.handle({"POST", path, body.dump(), {}});
  }
  static Response get(Service& s, const std::string& path,
                      std::map<std::string, std::string> query = {}) {
    return s.handle({"GET", path, "", std::move(query)});
  }

  static json roster2() {
    return json::array({{{"participant_id", "ann"}, {"groups", {"elderly_female", "mobility_impaired"}}},
                        {{"participant_id", "bo"}, {"groups", {"young_male"}}, {"facilitator", true}}});
  }

  std::string create(Service& s, json points = nullptr, std::uint64_t seed = 7) {
    json body = {{"roster", roster2()}, {"seed", seed}};
    if (!points.is_null()) body["point_ids"] = points;
    const auto r = post(s, "/sessions", body);
    EXPECT_EQ(r.status, 201) << r.body;
    return r.json_body()["session_id"];
  }

  static json rating(const std::string& who, const std::string& point, std::array<int, 4> v,
                     const std::string& stage = "individual") {
    return {{"participant_id", who},
            {"point_id", point},
            {"stage", stage},
            {"values",
             {{"inclusivity", v[0]}, {"aesthetics", v[1]}, {"practicality", v[2]}, {"accessibility", v[3]}}}};
  }

  fs::path dir_;
  dataset::Catalog catalog_;
};

}  // namespace

TEST_F(ServiceTest, CreateSessionPermutesPoints) {
  auto s = make();
  const auto r = post(*s, "/sessions", {{"roster", roster2()}, {"seed", 3}});
  ASSERT_EQ(r.status, 201);
  const auto d = r.json_body();
  EXPECT_EQ(d["stage"], "individual");
  auto order = d["item_order"].get<std::vector<std::string>>();
  ASSERT_EQ(order.size(), 8u);
  std::sort(order.begin(), order.end());
  for (int i = 0; i < 8; ++i) EXPECT_EQ(order[i], "p" + std::to_string(i));
}

TEST_F(ServiceTest, CreateSessionErrors) {
  auto s = make();
  auto r = post(*s, "/sessions", {{"roster", roster2()}, {"point_ids", {"p1", "nope"}}});
  EXPECT_EQ(r.status, 400);
  EXPECT_NE(r.body.find("nope"), std::string::npos);
  EXPECT_EQ(post(*s, "/sessions", {{"roster", json::array()}}).status, 400);
  const auto one = post(*s, "/sessions",
                        {{"roster", json::array({{{"participant_id", "x"}, {"groups", {"elderly_male"}}}})},
                         {"point_ids", {"p2"}}});
  EXPECT_EQ(one.status, 201);
  EXPECT_EQ(one.json_body()["item_order"].size(), 1u);
}

TEST_F(ServiceTest, NextItemFollowsOrderAndPairsOpposingFrames) {
  auto s = make();
  const auto id = create(*s);
  const auto order = get(*s, "/sessions/" + id + "/export").json_body()["item_order"];
  const auto r = get(*s, "/sessions/" + id + "/next", {{"participant_id", "ann"}});
  ASSERT_EQ(r.status, 200);
  const auto j = r.json_body();
  EXPECT_EQ(j["point_id"], order[0]);
  ASSERT_EQ(j["image_pair"].size(), 2u);
  // First frame has angle 0; 125 is nearest to 120/130, tie goes to the first seen.
  EXPECT_EQ(j["image_pair"][0]["angle_index"], 0);
  EXPECT_EQ(j["image_pair"][1]["angle_index"], 120);
  EXPECT_EQ(j["scale"]["inclusivity"].size(), 4u);
  EXPECT_EQ(get(*s, "/sessions/zzz/next", {{"participant_id", "ann"}}).status, 404);
  EXPECT_EQ(get(*s, "/sessions/" + id + "/next", {{"participant_id", "eve"}}).status, 403);
}

TEST_F(ServiceTest, ParticipantsProgressIndependently) {
  auto s = make();
  const auto id = create(*s, json{"p0", "p1", "p2"});
  auto next = [&](const std::string& who) {
    return get(*s, "/sessions/" + id + "/next", {{"participant_id", who}});
  };
  const std::string b0 = next("bo").json_body()["point_id"];
  for (int k = 0; k < 3; ++k) {
    const std::string p = next("ann").json_body()["point_id"];
    ASSERT_EQ(post(*s, "/sessions/" + id + "/ratings", rating("ann", p, {3, 2, 4, 1})).status, 200);
    EXPECT_EQ(next("bo").json_body()["point_id"], b0);
  }
  EXPECT_EQ(next("ann").status, 204);
  EXPECT_EQ(next("bo").status, 200);
}

TEST_F(ServiceTest, RatingValidationAndDuplicates) {
  auto s = make();
  const auto id = create(*s);
  const std::string path = "/sessions/" + id + "/ratings";
  EXPECT_EQ(post(*s, path, rating("ann", "p1", {3, 2, 4, 1})).status, 200);
  EXPECT_EQ(post(*s, path, rating("ann", "p1", {3, 2, 4, 1})).status, 409);
  EXPECT_EQ(post(*s, path, rating("ann", "p2", {5, 2, 4, 1})).status, 422);
  EXPECT_EQ(post(*s, path, rating("ann", "p2", {0, 2, 4, 1})).status, 422);
  EXPECT_EQ(post(*s, path, rating("eve", "p2", {1, 2, 4, 1})).status, 403);
  EXPECT_EQ(post(*s, path, rating("ann", "p2", {1, 2, 4, 1}, "collective")).status, 409);
  auto missing = rating("ann", "p3", {1, 1, 1, 1});
  missing["values"].erase("aesthetics");
  EXPECT_EQ(post(*s, path, missing).status, 422);
  EXPECT_EQ(s->handle({"POST", path, "{not json", {}}).status, 400);
  const auto ex = get(*s, "/sessions/" + id + "/export").json_body();
  EXPECT_EQ(ex["ratings"].size(), 4u);
}

TEST_F(ServiceTest, StageMachineIsForwardOnly) {
  auto s = make();
  const auto id = create(*s);
  const std::string path = "/sessions/" + id + "/stage";
  EXPECT_EQ(post(*s, path, {{"stage", "ranking"}}).status, 409);
  EXPECT_EQ(post(*s, path, {{"stage", "individual"}}).status, 409);
  EXPECT_EQ(post(*s, path, {{"stage", "collective"}}).status, 200);
  EXPECT_EQ(post(*s, path, {{"stage", "individual"}}).status, 409);
  EXPECT_EQ(post(*s, path, {{"stage", "ranking"}}).status, 200);
  EXPECT_EQ(post(*s, path, {{"stage", "closed"}}).status, 200);
  EXPECT_EQ(post(*s, path, {{"stage", "closed"}}).status, 409);
  EXPECT_EQ(post(*s, path, {{"stage", "bogus"}}).status, 422);
}

TEST_F(ServiceTest, CollectiveRatingsByFacilitatorOncePerPoint) {
  auto s = make();
  const auto id = create(*s);
  const std::string path = "/sessions/" + id + "/ratings";
  ASSERT_EQ(post(*s, "/sessions/" + id + "/stage", {{"stage", "collective"}}).status, 200);
  EXPECT_EQ(post(*s, path, rating("ann", "p0", {2, 2, 2, 2})).status, 409);
  EXPECT_EQ(post(*s, path, rating("ann", "p0", {2, 2, 2, 2}, "collective")).status, 403);
  EXPECT_EQ(post(*s, path, rating("bo", "p0", {2, 2, 2, 2}, "collective")).status, 200);
  EXPECT_EQ(post(*s, path, rating("bo", "p0", {3, 3, 3, 3}, "collective")).status, 409);
  const auto ex = get(*s, "/sessions/" + id + "/export").json_body();
  ASSERT_EQ(ex["ratings"].size(), 4u);
  EXPECT_EQ(ex["ratings"][0]["participant_id"], id);
  EXPECT_EQ(ex["ratings"][0]["session_id"], id);
}

TEST_F(ServiceTest, RankingRules) {
  auto s = make();
  const auto id = create(*s);
  const std::string path = "/sessions/" + id + "/rankings";
  const json good = {{"most_inclusive", {"p0", "p1", "p2"}}, {"least_inclusive", {"p3", "p4", "p5"}}};
  EXPECT_EQ(post(*s, path, good).status, 409);
  post(*s, "/sessions/" + id + "/stage", {{"stage", "collective"}});
  post(*s, "/sessions/" + id + "/stage", {{"stage", "ranking"}});
  const json overlap = {{"most_inclusive", {"p0", "p1", "p2"}}, {"least_inclusive", {"p2", "p4", "p5"}}};
  EXPECT_EQ(post(*s, path, overlap).status, 422);
  const json shorter = {{"most_inclusive", {"p0", "p1"}}, {"least_inclusive", {"p3", "p4", "p5"}}};
  EXPECT_EQ(post(*s, path, shorter).status, 422);
  EXPECT_EQ(post(*s, path, good).status, 200);
  EXPECT_EQ(get(*s, "/sessions/" + id + "/next", {{"participant_id", "ann"}}).status, 204);
  const auto ex = get(*s, "/sessions/" + id + "/export").json_body();
  ASSERT_EQ(ex["rankings"].size(), 1u);
  EXPECT_EQ(ratings::ranking_from_json(ex["rankings"][0]).most_inclusive[2], "p2");
}

TEST_F(ServiceTest, ExportAggregatesToHandComputedMeans) {
  auto s = make();
  const auto id = create(*s);
  const std::string path = "/sessions/" + id + "/ratings";
  EXPECT_EQ(get(*s, "/sessions/" + id + "/export").json_body()["ratings"].size(), 0u);
  post(*s, path, rating("ann", "p0", {3, 2, 4, 1}));
  post(*s, path, rating("bo", "p0", {1, 4, 2, 3}));
  const auto ex = get(*s, "/sessions/" + id + "/export").json_body();
  std::vector<ratings::RatingRecord> recs;
  for (const auto& r : ex["ratings"]) recs.push_back(ratings::rating_from_json(r));
  ASSERT_EQ(recs.size(), 8u);
  const auto roster = ratings::parse_roster(ex["roster"]);
  const auto sv = ratings::aggregate_point_scores(recs, roster, "p0");
  using ratings::Criterion;
  using ratings::Group;
  EXPECT_EQ(sv.group(Group::elderly_female, Criterion::inclusivity), 3.0);
  EXPECT_EQ(sv.group(Group::mobility_impaired, Criterion::accessibility), 1.0);
  EXPECT_EQ(sv.group(Group::young_male, Criterion::aesthetics), 4.0);
  EXPECT_TRUE(std::isnan(sv.group(Group::lgbtq2plus, Criterion::inclusivity)));
  // Byte-stable.
  EXPECT_EQ(get(*s, "/sessions/" + id + "/export").body, get(*s, "/sessions/" + id + "/export").body);
}

TEST_F(ServiceTest, ReplayRestoresStateAndDropsTornTail) {
  std::string id, before;
  {
    auto s = make();
    id = create(*s);
    post(*s, "/sessions/" + id + "/ratings", rating("ann", "p0", {3, 2, 4, 1}));
    post(*s, "/sessions/" + id + "/stage", {{"stage", "collective"}});
    before = get(*s, "/sessions/" + id + "/export").body;
  }
  const auto store = dir_ / "data" / "sessions" / (id + ".jsonl");
  const auto clean_size = fs::file_size(store);
  std::ofstream(store, std::ios::app) << R"({"seq":4,"ts":"x","type":"ratings","records":[{"partic)";
  {
    auto s = make();
    EXPECT_EQ(s->session_count(), 1u);
    EXPECT_EQ(get(*s, "/sessions/" + id + "/export").body, before);
    EXPECT_EQ(fs::file_size(store), clean_size);
    EXPECT_EQ(post(*s, "/sessions/" + id + "/ratings", rating("bo", "p1", {1, 1, 1, 1}, "collective")).status,
              200);
  }
  // Every prefix of whole lines replays to a consistent state.
  const std::string text = read_file(store);
  std::size_t pos = 0, lines = 0;
  while ((pos = text.find('\n', pos)) != std::string::npos) {
    ++pos;
    ++lines;
    write_file_atomic(store, text.substr(0, pos));
    auto s = make();
    const auto ex = get(*s, "/sessions/" + id + "/export").json_body();
    EXPECT_EQ(ex["ratings"].size() % 4, 0u);
  }
  EXPECT_EQ(lines, 4u);
  // Sequence numbers strictly increase.
  std::uint64_t last = 0;
  for_each_json_line(text, "store", [&](std::size_t, const json& e) {
    EXPECT_GT(e["seq"].get<std::uint64_t>(), last);
    last = e["seq"];
  });
}

TEST_F(ServiceTest, ScaleAndImages) {
  auto s = make();
  const auto sc = get(*s, "/scale").json_body();
  EXPECT_EQ(sc["scale"]["accessibility"][3]["score"], 4);
  const auto img = get(*s, "/images/p1_60");
  EXPECT_EQ(img.status, 200);
  EXPECT_EQ(img.body, "img:p1_60");
  EXPECT_EQ(get(*s, "/images/none").status, 404);
  EXPECT_EQ(get(*s, "/nothing").status, 404);
}

TEST_F(ServiceTest, ConcurrentSubmissionsAreSerialized) {
  auto s = make();
  std::vector<std::string> points;
  for (int i = 0; i < 8; ++i) points.push_back("p" + std::to_string(i));
  json roster = json::array();
  for (int i = 0; i < 8; ++i)
    roster.push_back({{"participant_id", "u" + std::to_string(i)}, {"groups", {"young_female"}}});
  const std::string id = post(*s, "/sessions", {{"roster", roster}}).json_body()["session_id"];
  std::vector<std::jthread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&, t] {
      for (const auto& p : points)
        EXPECT_EQ(post(*s, "/sessions/" + id + "/ratings",
                       rating("u" + std::to_string(t), p, {1, 2, 3, 4}))
                      .status,
                  200);
    });
  threads.clear();
  const std::string text = read_file(dir_ / "data" / "sessions" / (id + ".jsonl"));
  std::size_t entries = 0;
  for_each_json_line(text, "store", [&](std::size_t, const json& e) {
    ++entries;
    if (e["type"] == "ratings") {
      ASSERT_EQ(e["records"].size(), 4u);
      for (const auto& r : e["records"]) EXPECT_EQ(r["participant_id"], e["records"][0]["participant_id"]);
    }
  });
  EXPECT_EQ(entries, 1u + 64u);
}

TEST_F(ServiceTest, ServesOverHttp) {
  ServiceConfig cfg;
  cfg.data_dir = dir_ / "data";
  cfg.image_dir = dir_ / "images";
  cfg.port = 0;
  Service s(catalog_, cfg);
  std::promise<int> bound;
  std::thread server([&] { s.serve([&](int port) { bound.set_value(port); }); });
  const int port = bound.get_future().get();
  httplib::Client cli("127.0.0.1", port);
  const json body = {{"roster", roster2()}, {"point_ids", {"p0"}}};
  auto r = cli.Post("/sessions", body.dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  const std::string id = json::parse(r->body)["session_id"];
  r = cli.Get("/sessions/" + id + "/next?participant_id=ann");
  ASSERT_TRUE(r);
  EXPECT_EQ(json::parse(r->body)["point_id"], "p0");
  r = cli.Post("/sessions/" + id + "/ratings", rating("ann", "p0", {3, 2, 4, 1}).dump(), "application/json");
  EXPECT_EQ(r->status, 200);
  r = cli.Post("/sessions/" + id + "/ratings", rating("ann", "p0", {3, 2, 4, 1}).dump(), "application/json");
  EXPECT_EQ(r->status, 409);
  r = cli.Get("/sessions/" + id + "/next?participant_id=ann");
  EXPECT_EQ(r->status, 204);
  s.stop();
  server.join();
}

TEST(ServiceConfigTest, JsonAndEnvOverrides) {
  const auto path = fs::temp_directory_path() / "sr_service_cfg.json";
  write_file_atomic(path, R"({"port": 9000, "data_dir": "/tmp/x", "catalog_path": "c.jsonl"})");
  ::setenv("STREETREVIEW_PORT", "9100", 1);
  const auto c = load_service_config(path);
  ::unsetenv("STREETREVIEW_PORT");
  EXPECT_EQ(c.port, 9100);
  EXPECT_EQ(c.data_dir, "/tmp/x");
  EXPECT_EQ(c.catalog_path, "c.jsonl");
  fs::remove(path);
}

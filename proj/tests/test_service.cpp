#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "ccr/image_io.hpp"
#include "ccr/service.hpp"
#include "ccr/synthfaces.hpp"
#include "support.hpp"

using namespace ccr;
using nlohmann::json;

namespace {

std::unique_ptr<EditService> make_service(ServiceOptions opts = {}) {
  return std::make_unique<EditService>(std::make_unique<CcrModel>(ccr::test::tiny_model(1)), "abc123", opts);
}

std::string sample_body(bool glasses = false) {
  auto spec = FaceSpec::random_identity(4);
  spec.hair = HairColor::kBrown;
  spec.glasses = glasses;
  spec.bangs = false;
  return json{{"sample", spec.to_json()}}.dump();
}

std::string new_session(EditService& s) {
  const auto r = s.handle("POST", "/sessions", sample_body());
  EXPECT_EQ(r.status, 201) << r.body;
  return r.json().at("session_id");
}

HttpResponse edit(EditService& s, const std::string& id, const std::string& token) {
  return s.handle("POST", "/sessions/" + id + "/edits", json{{"token", token}}.dump());
}

}  // namespace

TEST(Service, Healthz) {
  auto s = make_service();
  const auto r = s->handle("GET", "/healthz", "");
  EXPECT_EQ(r.status, 200);
  const auto j = r.json();
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["checkpoint_hash"], "abc123");
  EXPECT_EQ(j["registry"], DomainRegistry::standard().to_json());
}

TEST(Service, CreateSessionFromSampleAndImage) {
  auto s = make_service();
  auto r = s->handle("POST", "/sessions", sample_body(true));
  ASSERT_EQ(r.status, 201) << r.body;
  auto j = r.json();
  EXPECT_EQ(j["labels"], (std::vector<int>{0, 0, 0, 1, 1}));
  const auto preview = decode_png(base64_decode(j["preview"].get<std::string>()));
  EXPECT_EQ(preview.sizes(), (std::vector<int64_t>{3, 16, 16}));

  const auto png = base64_encode(encode_png(ccr::test::random_images(1, 32, 2)[0]));
  r = s->handle("POST", "/sessions", json{{"image", png}}.dump());
  EXPECT_EQ(r.status, 201);
  EXPECT_EQ(s->session_count(), 2u);
}

TEST(Service, CreateSessionErrors) {
  auto s = make_service();
  const auto png = base64_encode(encode_png(ccr::test::random_images(1, 16, 2)[0]));
  EXPECT_EQ(s->handle("POST", "/sessions", json{{"image", png}, {"sample", json::object()}}.dump()).status, 400);
  EXPECT_EQ(s->handle("POST", "/sessions", "{}").status, 400);
  EXPECT_EQ(s->handle("POST", "/sessions", "not json").status, 400);
  EXPECT_EQ(s->handle("POST", "/sessions", json{{"image", "!!notpng"}}.dump()).status, 400);
  EXPECT_EQ(s->session_count(), 0u);
}

TEST(Service, EditUndoFlow) {
  auto s = make_service();
  const auto id = new_session(*s);
  auto r = edit(*s, id, "+glasses");
  ASSERT_EQ(r.status, 200) << r.body;
  auto j = r.json();
  EXPECT_EQ(j["stage_index"], 1);
  EXPECT_EQ(j["symbolic_bits"], (std::vector<int>{0, 0, 0, 1, 1}));
  EXPECT_TRUE(j.contains("continuity_ok"));
  EXPECT_EQ(j["predicted_bits"].size(), 5u);
  EXPECT_EQ(decode_png(base64_decode(j["image"].get<std::string>())).size(1), 16);

  r = s->handle("POST", "/sessions/" + id + "/undo", "");
  ASSERT_EQ(r.status, 200) << r.body;
  j = r.json();
  EXPECT_EQ(j["stage_index"], 0);
  EXPECT_GE(j["reversal_error"].get<double>(), 0.0);
  EXPECT_TRUE(j.contains("cached_image"));
  EXPECT_EQ(s->handle("POST", "/sessions/" + id + "/undo", "").status, 409);
}

TEST(Service, BadTokensAre422WithPosition) {
  auto s = make_service();
  const auto id = new_session(*s);
  auto r = edit(*s, id, "+gla$ses");
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.json()["position"], 4);
  r = edit(*s, id, "+purple_hair");
  EXPECT_EQ(r.status, 422);
  EXPECT_TRUE(r.json().contains("position"));
  EXPECT_EQ(s->handle("POST", "/sessions/" + id + "/edits", "{}").status, 422);
  EXPECT_EQ(edit(*s, id, "-black_hair").status, 422);
}

TEST(Service, UnknownSessionIs404) {
  auto s = make_service();
  EXPECT_EQ(edit(*s, "nope", "+glasses").status, 404);
  EXPECT_EQ(s->handle("GET", "/sessions/nope/trace", "").status, 404);
  EXPECT_EQ(s->handle("GET", "/elsewhere", "").status, 404);
}

TEST(Service, TraceAndStagePng) {
  auto s = make_service();
  const auto id = new_session(*s);
  for (const auto* t : {"+blond", "+bangs", "+glasses"}) ASSERT_EQ(edit(*s, id, t).status, 200);
  const auto r1 = s->handle("GET", "/sessions/" + id + "/trace", "");
  const auto r2 = s->handle("GET", "/sessions/" + id + "/trace", "");
  ASSERT_EQ(r1.status, 200);
  EXPECT_EQ(r1.body, r2.body);
  const auto j = r1.json();
  ASSERT_EQ(j["stages"].size(), 4u);
  const std::string url = j["stages"][2]["image_url"];
  EXPECT_EQ(url, "/sessions/" + id + "/stages/2.png");
  const auto png = s->handle("GET", url, "");
  EXPECT_EQ(png.status, 200);
  EXPECT_EQ(png.content_type, "image/png");
  EXPECT_EQ(decode_png(png.body).size(2), 16);
  EXPECT_EQ(s->handle("GET", "/sessions/" + id + "/stages/9.png", "").status, 404);
  EXPECT_EQ(s->handle("GET", "/sessions/" + id + "/stages/x.png", "").status, 404);
}

TEST(Service, WhatIf) {
  auto s = make_service();
  const auto id = new_session(*s);
  for (const auto* t : {"+blond", "+bangs", "+glasses"}) ASSERT_EQ(edit(*s, id, t).status, 200);
  auto r = s->handle("POST", "/sessions/" + id + "/whatif", json{{"order", {0, 1, 2}}}.dump());
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(r.json()["metrics"]["mean_l1"], 0.0);
  r = s->handle("POST", "/sessions/" + id + "/whatif", json{{"order", {2, 0, 1}}}.dump());
  ASSERT_EQ(r.status, 200);
  const auto j = r.json();
  for (const auto* k : {"final_a", "final_b", "metrics", "directions", "labels_equal"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_TRUE(j["metrics"].contains("ssim"));
  EXPECT_EQ(s->handle("POST", "/sessions/" + id + "/whatif", json{{"order", {0, 0, 1}}}.dump()).status, 422);
  EXPECT_EQ(s->handle("POST", "/sessions/" + id + "/whatif", json{{"order", "x"}}.dump()).status, 422);
}

TEST(ServiceProperty, SessionIsolation) {
  auto s = make_service();
  const auto a = new_session(*s), b = new_session(*s);
  ASSERT_NE(a, b);
  const auto before = s->handle("GET", "/sessions/" + b + "/trace", "").body;
  edit(*s, a, "+glasses");
  edit(*s, a, "+bangs");
  s->handle("POST", "/sessions/" + a + "/undo", "");
  EXPECT_EQ(s->handle("GET", "/sessions/" + b + "/trace", "").body, before);
}

TEST(Service, SessionTtlEviction) {
  ServiceOptions opts;
  opts.session_ttl = std::chrono::seconds(10);
  auto s = make_service(opts);
  auto now = EditService::Clock::now();
  s->set_clock([&] { return now; });
  const auto a = new_session(*s);
  now += std::chrono::seconds(5);
  EXPECT_EQ(s->handle("GET", "/sessions/" + a + "/trace", "").status, 200);
  now += std::chrono::seconds(8);
  EXPECT_EQ(s->evict_expired(), 0u);
  now += std::chrono::seconds(11);
  EXPECT_EQ(s->handle("GET", "/sessions/" + a + "/trace", "").status, 404);
  EXPECT_EQ(s->session_count(), 0u);
}

TEST(Service, ConcurrentRequests) {
  auto s = make_service();
  const auto a = new_session(*s), b = new_session(*s);
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&, i] {
      if (edit(*s, i % 2 ? a : b, "+glasses").status == 200) ++ok;
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok, 4);
  EXPECT_EQ(s->handle("GET", "/sessions/" + a + "/trace", "").json()["stages"].size(), 3u);
}

TEST(Service, DefaultPort) {
  EXPECT_EQ(ServiceOptions{}.port, 8797);
  EXPECT_EQ(kDefaultServicePort, 8797);
}

TEST(Service, HttpTransportWithCors) {
  ServiceOptions opts;
  opts.port = 0;
  opts.cors_origin = "http://localhost:5173";
  auto s = make_service(opts);
  const int port = s->bind();
  ASSERT_GT(port, 0);
  std::thread server([&] { s->serve(); });
  httplib::Client client("127.0.0.1", port);
  auto r = client.Get("/healthz");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  EXPECT_EQ(json::parse(r->body)["status"], "ok");

  auto pre = client.Options("/sessions");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);

  auto created = client.Post("/sessions", sample_body(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const std::string id = json::parse(created->body)["session_id"];
  auto e = client.Post("/sessions/" + id + "/edits", json{{"token", "+bangs"}}.dump(), "application/json");
  ASSERT_TRUE(e);
  EXPECT_EQ(e->status, 200);
  auto png = client.Get("/sessions/" + id + "/stages/1.png");
  ASSERT_TRUE(png);
  EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
  s->stop();
  server.join();
}

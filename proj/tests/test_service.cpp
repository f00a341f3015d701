#include <doctest.h>

#include <future>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "support/temp_dir.hpp"
#include "support/tiny.hpp"
#include "tdet/inference.hpp"
#include "tdet/service.hpp"

using namespace tdet;
using nlohmann::json;

namespace {

struct Fixture {
  testing::TempDir dir{"service"};
  DatasetManifest manifest;
  std::shared_ptr<const InferenceService> service;
  Detector<float> model;

  Fixture() : model(make_align_one_stub(Detector<float>::init(testing::tiny_model(), 9))) {
    manifest = generate_dataset(dir / "data", 31, {2, 1, 3}, testing::tiny_generation());
    service = std::make_shared<const InferenceService>(model, dir / "data");
  }

  Image test_image(std::size_t i) const {
    return read_png(manifest.root / manifest.split("test").at(i)->image);
  }

  std::string request(const Image& image, const std::string& query, json extra = json::object()) const {
    const auto png = encode_png(image);
    extra["image"] = encode_base64(png);
    extra["query"] = query;
    return extra.dump();
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

json error_of(const HttpResponse& r) {
  const auto j = json::parse(r.body);
  REQUIRE(j.contains("error"));
  CHECK(j["error"].is_string());
  return j;
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("base64 roundtrip and rejection of malformed text") {
    const std::vector<std::uint8_t> bytes{0, 1, 2, 250, 251, 252, 253};
    for (std::size_t n = 0; n <= bytes.size(); ++n) {
      const std::span<const std::uint8_t> part(bytes.data(), n);
      const auto text = encode_base64(part);
      if (n == 0) {
        CHECK(text.empty());
        continue;
      }
      const auto back = decode_base64(text);
      REQUIRE(back.has_value());
      CHECK(*back == std::vector<std::uint8_t>(part.begin(), part.end()));
      CHECK(decode_base64("data:image/png;base64," + text) == back);
    }
    CHECK(decode_base64("TWFu") == std::vector<std::uint8_t>{'M', 'a', 'n'});
    CHECK_FALSE(decode_base64("").has_value());
    CHECK_FALSE(decode_base64("TWF").has_value());
    CHECK_FALSE(decode_base64("TW!u").has_value());
    CHECK_FALSE(decode_base64("data:image/png,TWFu").has_value());
  }

  TEST_CASE("health reports the model configuration") {
    const auto r = fixture().service->health();
    CHECK(r.status == 200);
    const auto j = json::parse(r.body);
    CHECK(j["status"] == "ok");
    CHECK(j["model"]["image_size"] == 64);
    CHECK(j["model"]["preset"] == "tiny");
  }

  TEST_CASE("infer returns sorted detections whose score is the product") {
    const auto& f = fixture();
    const auto r = f.service->infer(f.request(f.test_image(0), "red circles", {{"score_threshold", 0.0}, {"top_k", 50}}));
    REQUIRE(r.status == 200);
    const auto j = json::parse(r.body);
    CHECK(j.size() == 3);
    CHECK(j["image_size"] == 64);
    CHECK(j["timing_ms"].get<double>() >= 0);
    const auto& dets = j["detections"];
    CHECK(dets.size() > 0);
    CHECK(dets.size() <= 50);
    double prev = 2;
    for (const auto& d : dets) {
      CHECK(d.size() == 4);
      CHECK(d["box"].size() == 4);
      const double c = d["confidence"], a = d["alignment"], s = d["score"];
      CHECK(std::abs(s - c * a) <= 1e-6);
      // The stub head aligns everything.
      CHECK(a == 1.0);
      CHECK(s <= prev);
      prev = s;
    }
  }

  TEST_CASE("infer matches the library pipeline and honours the strict threshold") {
    const auto& f = fixture();
    const Image img = f.test_image(1);
    const auto r = f.service->infer(f.request(img, "green squares", {{"score_threshold", 0.0}, {"top_k", 100}}));
    REQUIRE(r.status == 200);
    const auto expect = detect(f.model, img, "green squares", {0.0, 100});
    CHECK(json::parse(r.body)["detections"].dump() == detections_json(expect));

    const auto none = f.service->infer(f.request(img, "green squares", {{"score_threshold", 1.0}}));
    REQUIRE(none.status == 200);
    CHECK(json::parse(none.body)["detections"].empty());

    const auto by_id = f.service->infer(json{{"image_id", 1}, {"query", "green squares"},
                                             {"score_threshold", 0.0}, {"top_k", 100}}.dump());
    REQUIRE(by_id.status == 200);
    CHECK(json::parse(by_id.body)["detections"] == json::parse(r.body)["detections"]);
  }

  TEST_CASE("infer validation errors answer 400 with an error body") {
    const auto& f = fixture();
    const Image img = f.test_image(0);
    const std::string b64 = encode_base64(encode_png(img));
    const std::vector<std::string> bad{
        "{not json",
        "[1,2]",
        json{{"query", "red"}}.dump(),
        json{{"image", b64}}.dump(),
        json{{"image", b64}, {"image_id", 0}, {"query", "red"}}.dump(),
        json{{"image", b64}, {"query", "   "}}.dump(),
        json{{"image", b64}, {"query", 5}}.dump(),
        json{{"image", b64}, {"query", "red"}, {"colour", "x"}}.dump(),
        json{{"image", b64}, {"query", "red"}, {"score_threshold", 1.5}}.dump(),
        json{{"image", b64}, {"query", "red"}, {"score_threshold", "0.5"}}.dump(),
        json{{"image", b64}, {"query", "red"}, {"top_k", 0}}.dump(),
        json{{"image", b64}, {"query", "red"}, {"top_k", -3}}.dump(),
        json{{"image", b64}, {"query", "red"}, {"top_k", 2.5}}.dump(),
        json{{"image", "%%%%"}, {"query", "red"}}.dump(),
        json{{"image", encode_base64(std::vector<std::uint8_t>{1, 2, 3, 4})}, {"query", "red"}}.dump(),
        json{{"image", 12}, {"query", "red"}}.dump(),
        json{{"image_id", "zero"}, {"query", "red"}}.dump(),
    };
    for (const auto& body : bad) {
      INFO(body.substr(0, 80));
      const auto r = f.service->infer(body);
      CHECK(r.status == 400);
      error_of(r);
    }
    // Wrong raster size is rejected rather than resized.
    Image big(128, 128);
    const auto r = f.service->infer(f.request(big, "red"));
    CHECK(r.status == 400);
    error_of(r);
  }

  TEST_CASE("unknown ids and missing datasets answer 404") {
    const auto& f = fixture();
    CHECK(f.service->infer(json{{"image_id", 3}, {"query", "red"}}.dump()).status == 404);
    CHECK(f.service->example_image("3").status == 404);
    CHECK(f.service->example_image("x1").status == 404);
    CHECK(f.service->example_image("-1").status == 404);

    const InferenceService bare(f.model, {});
    CHECK(bare.examples().status == 404);
    CHECK(bare.example_image("0").status == 404);
    CHECK(bare.infer(json{{"image_id", 0}, {"query", "red"}}.dump()).status == 404);
    CHECK(bare.health().status == 200);
    CHECK_THROWS(InferenceService(f.model, f.dir / "nowhere"));
  }

  TEST_CASE("examples list the test split with their queries") {
    const auto& f = fixture();
    const auto r = f.service->examples();
    REQUIRE(r.status == 200);
    const auto list = json::parse(r.body)["examples"];
    const auto test = f.manifest.split("test");
    REQUIRE(list.size() == test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      CHECK(list[i]["id"] == i);
      CHECK(list[i]["query"] == test[i]->query);
      const auto img = f.service->example_image(std::to_string(i));
      REQUIRE(img.status == 200);
      CHECK(img.content_type == "image/png");
      const auto file = read_file_bytes(f.manifest.root / test[i]->image);
      CHECK(img.body == std::string(file.begin(), file.end()));
    }
  }

  TEST_CASE("HTTP routes serve the handlers and concurrent requests agree") {
    const auto& f = fixture();
    HttpServer server(f.service);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread runner([&] { server.run(); });

    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30, 0);
    auto health = client.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body)["status"] == "ok");

    const std::string body = f.request(f.test_image(2), "blue triangles", {{"score_threshold", 0.0}});
    auto direct = f.service->infer(body);
    auto first = client.Post("/infer", body, "application/json");
    REQUIRE(first);
    CHECK(first->status == 200);
    CHECK(json::parse(first->body)["detections"] == json::parse(direct.body)["detections"]);

    auto bad = client.Post("/infer", "{oops", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body).contains("error"));

    auto list = client.Get("/examples");
    REQUIRE(list);
    CHECK(list->status == 200);
    auto png = client.Get("/examples/0/image");
    REQUIRE(png);
    CHECK(png->status == 200);
    CHECK(png->get_header_value("Content-Type") == "image/png");
    auto missing = client.Get("/examples/99/image");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    auto nowhere = client.Get("/nothing-here");
    REQUIRE(nowhere);
    CHECK(nowhere->status == 404);

    std::vector<std::future<std::string>> jobs;
    for (int i = 0; i < 8; ++i) {
      jobs.push_back(std::async(std::launch::async, [&] {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(30, 0);
        auto r = c.Post("/infer", body, "application/json");
        return r && r->status == 200 ? json::parse(r->body)["detections"].dump() : std::string("failed");
      }));
    }
    const std::string expect = json::parse(first->body)["detections"].dump();
    for (auto& j : jobs) CHECK(j.get() == expect);

    server.stop();
    runner.join();
  }

  TEST_CASE("binding an occupied port fails") {
    const auto& f = fixture();
    HttpServer a(f.service);
    const int port = a.bind("127.0.0.1", 0);
    HttpServer b(f.service);
    CHECK_THROWS_AS(b.bind("127.0.0.1", port), std::runtime_error);
  }
}

// Copyright 2026 The fallgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "fallgen/checkpoint.hpp"
#include "fallgen/service.hpp"
#include "suites.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with it.
#include <httplib.h>

using namespace fallgen;
using namespace fallgen::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// An untrained tiny model is enough: the API contract does not depend on
// output quality.
fs::path tiny_checkpoint(const std::string& name, std::uint64_t seed) {
  ModelConfig c = testing::tiny_config();
  c.max_frames = 30;
  const FallCVAE model(c, seed);
  const fs::path path = fs::temp_directory_path() / name;
  save_model(path, model, 0, Rng(seed));
  return path;
}

std::string request(const json& attrs, std::optional<std::uint64_t> seed = std::nullopt) {
  json r = {{"attributes", attrs}};
  if (seed) r["seed"] = *seed;
  return r.dump();
}

json good_attrs() {
  return {{"impact_location", "head"}, {"impact_quality", "shot"}, {"glitch_quality", "spin"},
          {"fall_quality", "hinge"}};
}

json body_of(const Reply& r) { return json::parse(r.body); }

json plain(const nlohmann::ordered_json& o) { return json::parse(o.dump()); }

void check_error(const Reply& r, int status, const std::string& code) {
  CHECK(r.status == status);
  const json b = body_of(r);
  REQUIRE(b.contains("error"));
  CHECK(b["error"]["code"] == code);
  CHECK(!b["error"]["message"].get<std::string>().empty());
}

struct LiveServer {
  Service service;
  int port = 0;
  std::thread thread;

  explicit LiveServer(ServiceConfig cfg) : service(std::move(cfg)) {
    port = service.bind_port();
    thread = std::thread([this] { service.serve(); });
    service.wait_until_ready();
  }
  ~LiveServer() {
    service.stop();
    thread.join();
  }
};

}  // namespace

TEST_CASE("attributes lists the four closed vocabularies") {
  const Service svc(ServiceConfig{});
  const Reply r = svc.attributes();
  CHECK(r.status == 200);
  const json b = body_of(r);
  CHECK(b["schema_version"] == 1);
  REQUIRE(b["attributes"].size() == 4);
  const int sizes[4] = {4, 5, 8, 5};
  for (int i = 0; i < 4; ++i) {
    const auto& slot = b["attributes"][i];
    CHECK(slot["field"] == std::string(slot_field_name(kAttributeSlots[i])));
    REQUIRE(slot["values"].size() == static_cast<std::size_t>(sizes[i]));
    for (std::size_t v = 0; v < slot["values"].size(); ++v) {
      CHECK(slot["values"][v]["id"] == std::string(vocabulary(kAttributeSlots[i])[v].id));
      CHECK(!slot["values"][v]["display"].get<std::string>().empty());
    }
  }
  CHECK(svc.attributes().body == r.body);
}

TEST_CASE("skeleton presets") {
  const Service svc(ServiceConfig{});
  const json male = body_of(svc.skeleton("male"));
  const json female = body_of(svc.skeleton("female"));
  CHECK(male["joint_names"] == female["joint_names"]);
  CHECK(male["parent_index"] == female["parent_index"]);
  CHECK(male["bone_offset"] != female["bone_offset"]);
  CHECK(male == json::parse(skeleton_to_json(skeleton_preset(BodyModel::Male)).dump()));
  CHECK(body_of(svc.skeleton(std::nullopt)) == male);
  check_error(svc.skeleton("robot"), 400, "invalid_body_model");
}

TEST_CASE("healthz reports checkpoint status") {
  Service svc(ServiceConfig{});
  json b = body_of(svc.healthz());
  CHECK(b["status"] == "ok");
  CHECK(b["checkpoint"]["loaded"] == false);
  const auto path = tiny_checkpoint("fallgen_svc_health.ckpt", 1);
  svc.models().load(path);
  b = body_of(svc.healthz());
  CHECK(b["checkpoint"]["loaded"] == true);
  CHECK(b["checkpoint"]["id"] == checkpoint_id(path));
  fs::remove(path);
}

TEST_CASE("generate validates before touching the model") {
  Service svc(ServiceConfig{});
  json bad = good_attrs();
  bad["impact_location"] = "knee";
  // Vocabulary errors win even with no checkpoint loaded.
  const Reply r = svc.generate(request(bad, 1));
  check_error(r, 400, "invalid_attribute");
  const std::string msg = body_of(r)["error"]["message"];
  CHECK(msg.find("impact_location") != std::string::npos);
  CHECK(msg.find("knee") != std::string::npos);
  CHECK(msg.find("head, torso, arms, legs") != std::string::npos);

  check_error(svc.generate(request(good_attrs(), 1)), 409, "no_checkpoint");
  check_error(svc.generate("{not json"), 400, "malformed_json");
  check_error(svc.generate("[1, 2]"), 400, "bad_request");
  json missing = good_attrs();
  missing.erase("fall_quality");
  check_error(svc.generate(request(missing)), 400, "invalid_attribute");
  check_error(svc.generate(json{{"attributes", good_attrs()}, {"seed", -3}}.dump()), 400, "invalid_seed");
  check_error(svc.generate(json{{"attributes", good_attrs()}, {"seed", "7"}}.dump()), 400, "invalid_seed");
  check_error(svc.generate(json{{"attributes", good_attrs()}, {"body_model", "robot"}}.dump()), 400,
              "invalid_body_model");
  check_error(svc.generate(json{{"attributes", good_attrs()}, {"durations", {1.5, 6, 6}}}.dump()), 400,
              "invalid_durations");
}

TEST_CASE("generate contract") {
  Service svc(ServiceConfig{});
  const auto path = tiny_checkpoint("fallgen_svc_generate.ckpt", 2);
  svc.models().load(path);
  const std::string id = checkpoint_id(path);

  SUBCASE("fixed seed is deterministic and the body is a sequence document") {
    const Reply a = svc.generate(request(good_attrs(), 42));
    const Reply b = svc.generate(request(good_attrs(), 42));
    REQUIRE(a.status == 200);
    CHECK(a.body == b.body);
    CHECK(a.headers.count("X-Generation-Time-Ms") == 1);
    const json doc = body_of(a);
    CHECK(doc["metadata"]["seed"] == 42);
    CHECK(doc["metadata"]["checkpoint_id"] == id);
    CHECK(doc["metadata"]["body_model"] == "male");
    const MotionSequence seq = sequence_from_json(doc["sequence"]);
    CHECK(seq.attributes.impact_location == ImpactLocation::Head);
    CHECK(seq.attributes.glitch_quality == GlitchQuality::Spin);
    CHECK(doc["sequence"] == plain(sequence_to_json(seq)));
    CHECK(svc.generate(request(good_attrs(), 43)).body != a.body);
  }
  SUBCASE("omitted seed is drawn and returned for replay") {
    const json first = body_of(svc.generate(request(good_attrs())));
    const auto seed = first["metadata"]["seed"].get<std::uint64_t>();
    CHECK(seed <= kMaxDrawnSeed);
    const json replay = body_of(svc.generate(request(good_attrs(), seed)));
    CHECK(replay == first);
  }
  SUBCASE("durations") {
    const json doc = body_of(
        svc.generate(json{{"attributes", good_attrs()}, {"seed", 1}, {"durations", {{"impact", 5}, {"glitch", 7}, {"fall", 9}}}}
                         .dump()));
    CHECK(doc["sequence"]["frames"].size() == 21);
    CHECK(doc["sequence"]["boundaries"]["impact_end"] == 5);
    CHECK(doc["sequence"]["boundaries"]["glitch_end"] == 12);
    check_error(svc.generate(json{{"attributes", good_attrs()}, {"durations", {3, 6, 6}}}.dump()), 422,
                "duration_out_of_range");
    check_error(svc.generate(json{{"attributes", good_attrs()}, {"durations", {6, 31, 6}}}.dump()), 422,
                "duration_out_of_range");
    // Defaults are clipped to the model's frame limit.
    const json dflt = body_of(svc.generate(request(good_attrs(), 3)));
    CHECK(dflt["metadata"]["durations"]["fall"] == 25);
  }
  SUBCASE("checkpoint pinning") {
    CHECK(svc.generate(json{{"attributes", good_attrs()}, {"checkpoint_id", id}}.dump()).status == 200);
    check_error(svc.generate(json{{"attributes", good_attrs()}, {"checkpoint_id", "0000"}}.dump()), 409,
                "checkpoint_mismatch");
  }
  SUBCASE("body model changes only the start pose") {
    const json m = body_of(svc.generate(json{{"attributes", good_attrs()}, {"seed", 5}}.dump()));
    const json f =
        body_of(svc.generate(json{{"attributes", good_attrs()}, {"seed", 5}, {"body_model", "female"}}.dump()));
    CHECK(f["metadata"]["body_model"] == "female");
    CHECK(f["sequence"]["frames"].size() == m["sequence"]["frames"].size());
  }
  fs::remove(path);
}

TEST_CASE("fk endpoint matches the kinematics module") {
  const Service svc(ServiceConfig{});
  const MotionSequence seq = testing::six_frame_phases(9);
  for (BodyModel body : {BodyModel::Male, BodyModel::Female}) {
    const std::string name(body_model_name(body));
    const json one = body_of(svc.fk(json{{"model", name}, {"pose", plain(pose_to_json(seq.frames[3]))}}.dump()));
    const auto expected = forward_kinematics(skeleton_preset(body), seq.frames[3]);
    REQUIRE(one["positions"].size() == static_cast<std::size_t>(kNumJoints));
    for (int j = 0; j < kNumJoints; ++j)
      for (int c = 0; c < 3; ++c) CHECK(one["positions"][j][c].get<double>() == expected[j][c]);
  }
  json frames = json::array();
  for (const auto& p : seq.frames) frames.push_back(plain(pose_to_json(p)));
  const json many = body_of(svc.fk(json{{"frames", frames}}.dump()));
  CHECK(many["frames"].size() == seq.frames.size());
  CHECK(many["model"] == "male");

  json broken = plain(pose_to_json(seq.frames[0]));
  broken["joint_rot6d"].erase(2);
  const Reply r = svc.fk(json{{"pose", broken}}.dump());
  check_error(r, 400, "invalid_pose");
  CHECK(body_of(r)["error"]["message"].get<std::string>().find("pose.joint_rot6d") != std::string::npos);
  check_error(svc.fk("{}"), 400, "bad_request");
  check_error(svc.fk(json{{"model", "robot"}, {"pose", plain(pose_to_json(seq.frames[0]))}}.dump()), 400,
              "invalid_body_model");
}

TEST_CASE("config file and environment overrides") {
  const fs::path path = fs::temp_directory_path() / "fallgen_svc.toml";
  {
    std::ofstream out(path);
    out << "[service]\nport = 9001\ncors_origin = \"http://localhost:5173\"\nlog_level = \"warn\"\nthreads = 3\n";
  }
  ServiceConfig c = load_service_config(path);
  CHECK(c.port == 9001);
  CHECK(c.cors_origin == "http://localhost:5173");
  CHECK(c.log_level == "warn");
  CHECK(c.threads == 3);
  std::map<std::string, std::string> env{{"PORT", "9100"}, {"LOG_LEVEL", "debug"}, {"CHECKPOINT_PATH", "/x.ckpt"}};
  const auto lookup = [&](const char* k) -> const char* {
    const auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  apply_env_overrides(c, lookup);
  CHECK(c.port == 9100);
  CHECK(c.log_level == "debug");
  CHECK(c.checkpoint_path == "/x.ckpt");
  CHECK(c.cors_origin == "http://localhost:5173");

  {
    std::ofstream out(path);
    out << "[service]\nprot = 9001\n";
  }
  CHECK_THROWS_CODE(load_service_config(path), Errc::InvalidConfig);

  env["PORT"] = "http";
  CHECK_THROWS_CODE(apply_env_overrides(c, lookup), Errc::InvalidConfig);
  env["PORT"] = "70000";
  CHECK_THROWS_CODE(apply_env_overrides(c, lookup), Errc::InvalidConfig);
  env["PORT"] = "1";
  env["LOG_LEVEL"] = "loud";
  CHECK_THROWS_CODE(apply_env_overrides(c, lookup), Errc::InvalidConfig);

  {
    std::ofstream out(path);
    out << "[service\nport = ";
  }
  CHECK_THROWS_CODE(load_service_config(path), Errc::ParseError);
  fs::remove(path);
}

TEST_CASE("model slot swaps without disturbing holders") {
  ModelSlot slot;
  CHECK(slot.current() == nullptr);
  const auto a = tiny_checkpoint("fallgen_slot_a.ckpt", 3);
  const auto b = tiny_checkpoint("fallgen_slot_b.ckpt", 4);
  slot.load(a);
  const auto held = slot.current();
  slot.load(b);
  CHECK(held->id == checkpoint_id(a));
  CHECK(slot.current()->id == checkpoint_id(b));
  CHECK_THROWS(slot.load(fs::temp_directory_path() / "fallgen_missing.ckpt"));
  CHECK(slot.current()->id == checkpoint_id(b));
  fs::remove(a);
  fs::remove(b);
}

TEST_CASE("live server: routing, CORS and 32 concurrent generations") {
  const auto path = tiny_checkpoint("fallgen_svc_live.ckpt", 5);
  ServiceConfig cfg;
  cfg.host = "127.0.0.1";
  cfg.port = 0;
  cfg.checkpoint_path = path;
  cfg.cors_origin = "http://viewer.test";
  cfg.log_level = "warn";
  LiveServer live(cfg);
  httplib::Client client("127.0.0.1", live.port);

  auto res = client.Get("/api/v1/attributes");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "http://viewer.test");
  CHECK(res->get_header_value("Content-Type") == "application/json");
  res = client.Get("/healthz");
  REQUIRE(res);
  CHECK(json::parse(res->body)["checkpoint"]["loaded"] == true);
  res = client.Get("/api/v1/skeleton?model=female");
  REQUIRE(res);
  CHECK(json::parse(res->body)["model"] == "female");
  res = client.Get("/api/v1/skeleton?model=robot");
  REQUIRE(res);
  CHECK(res->status == 400);
  res = client.Get("/api/v1/nothing");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["error"]["code"] == "not_found");
  res = client.Options("/api/v1/generate");
  REQUIRE(res);
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

  // Expected bodies computed serially through the handler.
  constexpr int kRequests = 32;
  std::vector<std::string> expected(kRequests), got(kRequests);
  std::vector<int> status(kRequests, 0);
  std::vector<std::string> timing(kRequests);
  for (int i = 0; i < kRequests; ++i) expected[i] = live.service.generate(request(good_attrs(), 1000 + i)).body;

  std::vector<std::thread> threads;
  for (int i = 0; i < kRequests; ++i) {
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", live.port);
      c.set_connection_timeout(30, 0);
      c.set_read_timeout(60, 0);
      auto r = c.Post("/api/v1/generate", request(good_attrs(), 1000 + i), "application/json");
      if (!r) return;
      status[i] = r->status;
      got[i] = r->body;
      timing[i] = r->get_header_value("X-Generation-Time-Ms");
    });
  }
  for (auto& t : threads) t.join();
  for (int i = 0; i < kRequests; ++i) {
    CHECK(status[i] == 200);
    CHECK(got[i] == expected[i]);
    CHECK(!timing[i].empty());
    if (status[i] == 200) CHECK_NOTHROW(sequence_from_json(json::parse(got[i])["sequence"]));
  }
  std::sort(got.begin(), got.end());
  CHECK(std::unique(got.begin(), got.end()) == got.end());
  fs::remove(path);
}

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

#include "fallgen/service.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <random>
#include <set>

// The default backlog of 5 drops connections under bursts of clients.
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>
#include <spdlog/spdlog.h>
#include <tomlplusplus/toml.hpp>

#include "fallgen/error.hpp"
#include "fallgen/synth.hpp"

namespace fallgen::service {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kGenerateStream = 0x6E6;
constexpr PhaseDurations kDefaultDurations{16, 21, 25};

const char* kSlotTitles[4] = {"Impact location", "Impact quality", "Glitch quality", "Fall quality"};

Reply json_reply(int status, const ordered_json& body) { return {status, body.dump(), {}}; }

// Thrown inside request parsing; converted to an error reply at the edge.
struct RequestError {
  int status;
  std::string code;
  std::string message;
};

json parse_body(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw RequestError{400, "malformed_json", std::string("request body is not valid JSON: ") + e.what()};
  }
  if (!doc.is_object()) throw RequestError{400, "bad_request", "request body must be a JSON object"};
  return doc;
}

BodyModel parse_body_field(const json& doc) {
  if (!doc.contains("body_model")) return BodyModel::Male;
  const auto& v = doc.at("body_model");
  if (!v.is_string()) throw RequestError{400, "invalid_body_model", "body_model must be \"male\" or \"female\""};
  try {
    return parse_body_model(v.get<std::string>());
  } catch (const Error&) {
    throw RequestError{400, "invalid_body_model",
                       "body_model: unknown value '" + v.get<std::string>() + "'; allowed: male, female"};
  }
}

std::string allowed_ids(AttributeSlot slot) {
  std::string out;
  for (const auto& e : vocabulary(slot)) out += (out.empty() ? "" : ", ") + std::string(e.id);
  return out;
}

AttributeConfig parse_attributes(const json& doc) {
  if (!doc.contains("attributes") || !doc.at("attributes").is_object())
    throw RequestError{400, "invalid_attribute", "field 'attributes' must be an object with impact_location, "
                                                 "impact_quality, glitch_quality and fall_quality"};
  const auto& attrs = doc.at("attributes");
  AttributeConfig out;
  for (auto slot : kAttributeSlots) {
    const std::string field(slot_field_name(slot));
    if (!attrs.contains(field) || !attrs.at(field).is_string())
      throw RequestError{400, "invalid_attribute",
                         "attributes." + field + " is required; allowed: " + allowed_ids(slot)};
    const std::string id = attrs.at(field).get<std::string>();
    bool known = false;
    for (const auto& e : vocabulary(slot)) known = known || e.id == id;
    if (!known)
      throw RequestError{400, "invalid_attribute",
                         "attributes." + field + ": unknown value '" + id + "'; allowed: " + allowed_ids(slot)};
    out.set(slot, parse_label(slot, id));
  }
  return out;
}

std::optional<std::uint64_t> parse_seed(const json& doc) {
  if (!doc.contains("seed") || doc.at("seed").is_null()) return std::nullopt;
  const auto& v = doc.at("seed");
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw RequestError{400, "invalid_seed", "seed must be a non-negative integer"};
}

std::optional<PhaseDurations> parse_durations(const json& doc) {
  if (!doc.contains("durations") || doc.at("durations").is_null()) return std::nullopt;
  const auto& v = doc.at("durations");
  const char* names[3] = {"impact", "glitch", "fall"};
  int values[3];
  for (int i = 0; i < 3; ++i) {
    const json* item = nullptr;
    if (v.is_object() && v.contains(names[i])) item = &v.at(names[i]);
    if (v.is_array() && v.size() == 3) item = &v.at(static_cast<std::size_t>(i));
    if (item == nullptr || !item->is_number_integer())
      throw RequestError{400, "invalid_durations",
                         "durations must be {impact, glitch, fall} or a 3-element array of integer frame counts"};
    const auto n = item->get<std::int64_t>();
    values[i] = static_cast<int>(std::clamp<std::int64_t>(n, -1, 1 << 20));
  }
  return PhaseDurations{values[0], values[1], values[2]};
}

ordered_json positions_json(const std::vector<Vec3>& positions) {
  auto out = ordered_json::array();
  for (const auto& p : positions) out.push_back({p.x(), p.y(), p.z()});
  return out;
}

std::uint64_t draw_seed() {
  std::random_device device;
  const std::uint64_t hi = device(), lo = device();
  return ((hi << 32) ^ lo) & kMaxDrawnSeed;
}

spdlog::level::level_enum parse_level(const std::string& name) {
  const auto level = spdlog::level::from_str(name);
  // from_str maps unknown names to off; only accept a real "off".
  if (level == spdlog::level::off && name != "off")
    throw Error(Errc::InvalidConfig, "unknown log level '" + name + "'");
  return level;
}

}  // namespace

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(Errc::InvalidConfig, "port must be within 0..65535");
  if (threads < 1) throw Error(Errc::InvalidConfig, "threads must be positive");
  if (max_body_bytes < 1024) throw Error(Errc::InvalidConfig, "max_body_bytes must be at least 1024");
  parse_level(log_level);
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  toml::table root;
  try {
    root = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw Error(Errc::ParseError, path.string() + ": " + std::string(e.description()));
  }
  ServiceConfig c;
  const auto* t = root["service"].as_table();
  if (t == nullptr) return c;
  const auto& s = *t;
  static const std::set<std::string> known{"host",    "port",      "checkpoint_path", "cors_origin",
                                           "log_level", "threads", "max_body_bytes"};
  for (const auto& [key, node] : s)
    if (!known.count(std::string(key.str())))
      throw Error(Errc::InvalidConfig, path.string() + ": unknown key 'service." + std::string(key.str()) + "'");
  c.host = s["host"].value_or(c.host);
  c.port = static_cast<int>(s["port"].value_or(static_cast<std::int64_t>(c.port)));
  if (auto v = s["checkpoint_path"].value<std::string>()) c.checkpoint_path = *v;
  c.cors_origin = s["cors_origin"].value_or(c.cors_origin);
  c.log_level = s["log_level"].value_or(c.log_level);
  c.threads = static_cast<int>(s["threads"].value_or(static_cast<std::int64_t>(c.threads)));
  c.max_body_bytes = static_cast<std::size_t>(s["max_body_bytes"].value_or(static_cast<std::int64_t>(c.max_body_bytes)));
  c.validate();
  return c;
}

void apply_env_overrides(ServiceConfig& config, const EnvLookup& env) {
  if (const char* v = env("PORT")) {
    char* end = nullptr;
    const long port = std::strtol(v, &end, 10);
    if (*v == '\0' || *end != '\0' || port < 0 || port > 65535)
      throw Error(Errc::InvalidConfig, std::string("PORT must be an integer within 0..65535, got '") + v + "'");
    config.port = static_cast<int>(port);
  }
  if (const char* v = env("CHECKPOINT_PATH")) config.checkpoint_path = v;
  if (const char* v = env("CORS_ORIGIN")) config.cors_origin = v;
  if (const char* v = env("LOG_LEVEL")) config.log_level = v;
  config.validate();
}

void apply_env_overrides(ServiceConfig& config) {
  apply_env_overrides(config, [](const char* name) { return std::getenv(name); });
}

std::shared_ptr<const LoadedModel> ModelSlot::current() const { return std::atomic_load(&model_); }

void ModelSlot::swap(std::shared_ptr<const LoadedModel> next) { std::atomic_store(&model_, std::move(next)); }

std::shared_ptr<const LoadedModel> ModelSlot::load(const std::filesystem::path& path) {
  auto next = std::make_shared<const LoadedModel>(load_model(path));
  swap(next);
  return next;
}

Reply error_reply(int status, const std::string& code, const std::string& message) {
  ordered_json body;
  body["error"] = {{"code", code}, {"message", message}};
  return json_reply(status, body);
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  config_.validate();
  ordered_json doc;
  doc["schema_version"] = 1;
  auto& slots = doc["attributes"] = ordered_json::array();
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i) {
    const auto slot = kAttributeSlots[i];
    ordered_json entry;
    entry["field"] = slot_field_name(slot);
    entry["display"] = kSlotTitles[i];
    auto& values = entry["values"] = ordered_json::array();
    for (const auto& v : vocabulary(slot)) values.push_back({{"id", v.id}, {"display", v.display}});
    slots.push_back(std::move(entry));
  }
  attributes_body_ = doc.dump();
  if (!config_.checkpoint_path.empty()) models_.load(config_.checkpoint_path);
}

Reply Service::attributes() const { return {200, attributes_body_, {}}; }

Reply Service::skeleton(const std::optional<std::string>& model) const {
  BodyModel body = BodyModel::Male;
  if (model) {
    try {
      body = parse_body_model(*model);
    } catch (const Error&) {
      return error_reply(400, "invalid_body_model", "model: unknown value '" + *model + "'; allowed: male, female");
    }
  }
  return json_reply(200, skeleton_to_json(skeleton_preset(body)));
}

Reply Service::healthz() const {
  const auto m = models_.current();
  ordered_json doc;
  doc["status"] = "ok";
  doc["checkpoint"] = {{"loaded", m != nullptr}};
  if (m) {
    doc["checkpoint"]["id"] = m->id;
    doc["checkpoint"]["step"] = m->header.step;
    doc["checkpoint"]["max_frames"] = m->model->config().max_frames;
  }
  return json_reply(200, doc);
}

Reply Service::generate(const std::string& body) const {
  const auto start = std::chrono::steady_clock::now();
  try {
    const json doc = parse_body(body);
    const AttributeConfig attrs = parse_attributes(doc);
    const BodyModel body_model = parse_body_field(doc);
    const auto seed_in = parse_seed(doc);
    const auto durations_in = parse_durations(doc);
    std::optional<std::string> wanted_id;
    if (doc.contains("checkpoint_id") && !doc.at("checkpoint_id").is_null()) {
      if (!doc.at("checkpoint_id").is_string())
        throw RequestError{400, "bad_request", "checkpoint_id must be a string"};
      wanted_id = doc.at("checkpoint_id").get<std::string>();
    }

    const auto loaded = models_.current();
    if (!loaded) throw RequestError{409, "no_checkpoint", "no checkpoint is loaded"};
    if (wanted_id && *wanted_id != loaded->id)
      throw RequestError{409, "checkpoint_mismatch",
                         "requested checkpoint " + *wanted_id + " but " + loaded->id + " is loaded"};

    const int max_frames = loaded->model->config().max_frames;
    PhaseDurations durations = durations_in.value_or(kDefaultDurations);
    if (!durations_in) {
      durations.impact = std::min(durations.impact, max_frames);
      durations.glitch = std::min(durations.glitch, max_frames);
      durations.fall = std::min(durations.fall, max_frames);
    }
    for (Phase phase : kPhases) {
      const int n = durations.of(phase);
      if (n < kMinPhaseFrames || n > max_frames)
        throw RequestError{422, "duration_out_of_range",
                           "durations." + std::string(phase_name(phase)) + " = " + std::to_string(n) +
                               " is outside " + std::to_string(kMinPhaseFrames) + ".." + std::to_string(max_frames)};
    }

    const std::uint64_t seed = seed_in ? *seed_in : draw_seed();
    Rng rng = make_rng(seed, kGenerateStream);
    const MotionSequence seq =
        loaded->model->generate(attrs, durations, rng, rest_pose(skeleton_preset(body_model)));

    ordered_json out;
    out["sequence"] = sequence_to_json(seq);
    out["metadata"] = {{"seed", seed},
                       {"checkpoint_id", loaded->id},
                       {"body_model", body_model_name(body_model)},
                       {"durations", {{"impact", durations.impact}, {"glitch", durations.glitch}, {"fall", durations.fall}}}};
    Reply reply = json_reply(200, out);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    reply.headers["X-Generation-Time-Ms"] = std::to_string(ms);
    return reply;
  } catch (const RequestError& e) {
    return error_reply(e.status, e.code, e.message);
  } catch (const Error& e) {
    return error_reply(500, "generation_failed", e.what());
  }
}

Reply Service::fk(const std::string& body) const {
  try {
    const json doc = parse_body(body);
    const BodyModel body_model = doc.contains("model") ? [&] {
      json shim = {{"body_model", doc.at("model")}};
      return parse_body_field(shim);
    }() : BodyModel::Male;
    const Skeleton& sk = skeleton_preset(body_model);
    ordered_json out;
    out["model"] = body_model_name(body_model);
    out["joint_names"] = sk.joint_names;
    try {
      if (doc.contains("pose")) {
        out["positions"] = positions_json(forward_kinematics(sk, pose_from_json(doc.at("pose"), "pose.")));
      } else if (doc.contains("frames") && doc.at("frames").is_array()) {
        auto frames = ordered_json::array();
        const auto& in = doc.at("frames");
        for (std::size_t i = 0; i < in.size(); ++i)
          frames.push_back(
              positions_json(forward_kinematics(sk, pose_from_json(in[i], "frames[" + std::to_string(i) + "]."))));
        out["frames"] = std::move(frames);
      } else {
        throw RequestError{400, "bad_request", "provide 'pose' (one frame) or 'frames' (an array of frames)"};
      }
    } catch (const Error& e) {
      throw RequestError{400, "invalid_pose", e.what()};
    }
    return json_reply(200, out);
  } catch (const RequestError& e) {
    return error_reply(e.status, e.code, e.message);
  }
}

void Service::bind(httplib::Server& server) const {
  const auto send = [](httplib::Response& res, const Reply& reply) {
    res.status = reply.status;
    for (const auto& [k, v] : reply.headers) res.set_header(k, v);
    res.set_content(reply.body, "application/json");
  };
  server.Get("/api/v1/attributes", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, attributes());
  });
  server.Get("/api/v1/skeleton", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> model;
    if (req.has_param("model")) model = req.get_param_value("model");
    send(res, skeleton(model));
  });
  const auto health = [this, send](const httplib::Request&, httplib::Response& res) { send(res, healthz()); };
  server.Get("/healthz", health);
  server.Get("/api/v1/healthz", health);
  server.Post("/api/v1/generate", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, generate(req.body));
  });
  server.Post("/api/v1/fk", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, fk(req.body));
  });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.set_error_handler([send](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) {
      send(res, error_reply(404, "not_found", "no route for " + req.method + " " + req.path));
    } else if (res.status == 413) {
      send(res, error_reply(413, "payload_too_large", "request body exceeds the configured limit"));
    } else {
      send(res, error_reply(res.status, "http_error", "request failed with status " + std::to_string(res.status)));
    }
  });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, "internal", what));
  });
  const std::string origin = config_.cors_origin;
  server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Expose-Headers", "X-Generation-Time-Ms");
  });
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info("{} {} -> {}", req.method, req.path, res.status);
  });
  server.set_payload_max_length(config_.max_body_bytes);
  const int threads = config_.threads;
  server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
}

int Service::bind_port() {
  spdlog::set_level(parse_level(config_.log_level));
  server_ = std::make_shared<httplib::Server>();
  bind(*server_);
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.host);
  } else if (!server_->bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error(Errc::IoError, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  const auto m = models_.current();
  spdlog::info("listening on {}:{} (checkpoint {})", config_.host, port, m ? m->id : std::string("none"));
  return port;
}

void Service::serve() {
  if (!server_) throw Error(Errc::InvalidConfig, "serve() called before bind_port()");
  server_->listen_after_bind();
}

void Service::wait_until_ready() const {
  if (server_) server_->wait_until_ready();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace fallgen::service

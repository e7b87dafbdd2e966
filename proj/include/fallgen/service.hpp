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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "fallgen/checkpoint.hpp"

namespace httplib {
class Server;
}

namespace fallgen::service {

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::filesystem::path checkpoint_path;  // empty: start without a model, generate answers 409
  std::string cors_origin = "*";
  std::string log_level = "info";
  int threads = 8;
  std::size_t max_body_bytes = 1 << 20;

  void validate() const;  // throws InvalidConfig
};

/// Reads the [service] table of a TOML file. Missing keys keep defaults.
ServiceConfig load_service_config(const std::filesystem::path& path);

using EnvLookup = std::function<const char*(const char*)>;

/// PORT, CHECKPOINT_PATH, CORS_ORIGIN and LOG_LEVEL override file values.
void apply_env_overrides(ServiceConfig& config, const EnvLookup& env);
void apply_env_overrides(ServiceConfig& config);

/// The current checkpoint. Readers take a snapshot; a swap never disturbs
/// requests already holding the previous one.
class ModelSlot {
 public:
  std::shared_ptr<const LoadedModel> current() const;
  void swap(std::shared_ptr<const LoadedModel> next);
  /// Loads `path` and swaps it in; the slot is unchanged when loading throws.
  std::shared_ptr<const LoadedModel> load(const std::filesystem::path& path);

 private:
  std::shared_ptr<const LoadedModel> model_;
};

struct Reply {
  int status = 200;
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Error body: {"error": {"code": ..., "message": ...}}.
Reply error_reply(int status, const std::string& code, const std::string& message);

/// Endpoint logic without any socket; `bind` routes an httplib server here.
class Service {
 public:
  explicit Service(ServiceConfig config);

  const ServiceConfig& config() const { return config_; }
  ModelSlot& models() { return models_; }

  Reply attributes() const;
  Reply skeleton(const std::optional<std::string>& model) const;
  Reply healthz() const;
  Reply generate(const std::string& body) const;
  Reply fk(const std::string& body) const;

  void bind(httplib::Server& server) const;

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind_port();
  /// Blocks serving requests until `stop` is called from another thread.
  void serve();
  void wait_until_ready() const;
  void stop();

 private:
  ServiceConfig config_;
  ModelSlot models_;
  std::string attributes_body_;
  std::shared_ptr<httplib::Server> server_;
};

/// Seeds drawn by the server stay below 2^53 so JSON clients can echo them
/// back exactly.
inline constexpr std::uint64_t kMaxDrawnSeed = (std::uint64_t{1} << 53) - 1;

}  // namespace fallgen::service

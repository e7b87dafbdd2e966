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
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "fallgen/model.hpp"
#include "fallgen/nn.hpp"

namespace fallgen {

// File layout, all integers little-endian:
//   bytes 0..7   magic "FALLCKPT"
//   u32          format version (kCheckpointVersion)
//   u32          reserved, zero
//   u64          header length in bytes
//   header       UTF-8 JSON: kind, config, step, rng_state, extra and the
//                parameter index [{name, shape: [rows, cols], offset}]
//   payload      IEEE-754 binary64 values of every parameter, in index order;
//                `offset` counts doubles from the start of the payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string kind;  // "cvae" or "recognizer"
  nlohmann::ordered_json config;
  std::uint64_t step = 0;
  std::string rng_state;  // textual std::mt19937_64 state
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                      const nn::ParameterStore& params);
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);
/// Overwrites every parameter of `params` from the file. Names and shapes
/// must match exactly.
void read_checkpoint_parameters(const std::filesystem::path& path, nn::ParameterStore& params);

/// Stable identifier of a checkpoint file: FNV-1a of its bytes, hex.
std::string checkpoint_id(const std::filesystem::path& path);

std::string rng_state_string(const Rng& rng);
Rng rng_from_state(const std::string& state);

void save_model(const std::filesystem::path& path, const FallCVAE& model, std::uint64_t step, const Rng& rng,
                const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());

struct LoadedModel {
  std::shared_ptr<const FallCVAE> model;
  CheckpointHeader header;
  std::string id;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace fallgen

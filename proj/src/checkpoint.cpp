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

#include "fallgen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fallgen/error.hpp"

namespace fallgen {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'A', 'L', 'L', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw Error(Errc::ParseError, path.string() + ": truncated checkpoint");
  return value;
}

struct Raw {
  nlohmann::json header;
  std::streamoff payload_offset = 0;
};

Raw read_raw(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(Errc::ParseError, path.string() + ": not a checkpoint file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw Error(Errc::SchemaVersionMismatch, path.string() + ": checkpoint version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kCheckpointVersion));
  get<std::uint32_t>(in, path);
  const auto length = get<std::uint64_t>(in, path);
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length)))
    throw Error(Errc::ParseError, path.string() + ": truncated checkpoint header");
  Raw raw;
  try {
    raw.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
  raw.payload_offset = in.tellg();
  return raw;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return in;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                      const nn::ParameterStore& params) {
  nlohmann::ordered_json doc;
  doc["kind"] = header.kind;
  doc["config"] = header.config;
  doc["step"] = header.step;
  doc["rng_state"] = header.rng_state;
  doc["extra"] = header.extra;
  auto& index = doc["parameters"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.entries()) {
    index.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}});
    offset += t.size();
  }
  const std::string text = doc.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params.entries())
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw Error(Errc::IoError, "failed writing " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  const Raw raw = read_raw(in, path);
  try {
    CheckpointHeader h;
    h.kind = raw.header.at("kind").get<std::string>();
    h.config = raw.header.at("config");
    h.step = raw.header.at("step").get<std::uint64_t>();
    h.rng_state = raw.header.at("rng_state").get<std::string>();
    h.extra = raw.header.value("extra", nlohmann::json::object());
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

void read_checkpoint_parameters(const std::filesystem::path& path, nn::ParameterStore& params) {
  std::ifstream in = open_in(path);
  const Raw raw = read_raw(in, path);
  const auto& index = raw.header.at("parameters");
  if (index.size() != params.entries().size())
    throw Error(Errc::InvalidConfig, path.string() + ": checkpoint has " + std::to_string(index.size()) +
                                         " parameters, model expects " + std::to_string(params.entries().size()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto& [name, t] = params.entries()[i];
    const auto& entry = index[i];
    const ad::Shape shape{entry.at("shape")[0].get<int>(), entry.at("shape")[1].get<int>()};
    if (entry.at("name").get<std::string>() != name || shape != t.shape())
      throw Error(Errc::InvalidConfig, path.string() + ": parameter " + entry.at("name").get<std::string>() + " " +
                                           shape.str() + " does not match " + name + " " + t.shape().str());
    in.seekg(raw.payload_offset + static_cast<std::streamoff>(entry.at("offset").get<std::size_t>() * sizeof(double)));
    auto dst = t.mutable_data();
    if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double))))
      throw Error(Errc::ParseError, path.string() + ": truncated parameter payload at " + name);
  }
}

std::string checkpoint_id(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  return buf;
}

std::string rng_state_string(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream in(state);
  in >> rng;
  if (!in) throw Error(Errc::ParseError, "malformed rng state");
  return rng;
}

void save_model(const std::filesystem::path& path, const FallCVAE& model, std::uint64_t step, const Rng& rng,
                const nlohmann::ordered_json& extra) {
  CheckpointHeader h;
  h.kind = "cvae";
  h.config = model_config_to_json(model.config());
  h.step = step;
  h.rng_state = rng_state_string(rng);
  h.extra = extra;
  write_checkpoint(path, h, model.parameters());
}

LoadedModel load_model(const std::filesystem::path& path) {
  LoadedModel loaded;
  loaded.header = read_checkpoint_header(path);
  if (loaded.header.kind != "cvae")
    throw Error(Errc::InvalidConfig, path.string() + ": expected a cvae checkpoint, found " + loaded.header.kind);
  auto model = std::make_shared<FallCVAE>(model_config_from_json(loaded.header.config), 0);
  read_checkpoint_parameters(path, model->parameters());
  loaded.model = std::move(model);
  loaded.id = checkpoint_id(path);
  return loaded;
}

}  // namespace fallgen

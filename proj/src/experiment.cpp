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

#include "fallgen/experiment.hpp"
#include "fallgen/parallel.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/LU>
#include <tomlplusplus/toml.hpp>

#include "fallgen/error.hpp"

namespace fallgen {

namespace {

// --- TOML reading with strict keys -----------------------------------------

void reject_unknown(const toml::table& t, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, node] : t) {
    if (!allowed.count(std::string(key.str()))) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw Error(Errc::InvalidConfig, where + ": unknown key '" + std::string(key.str()) + "' (allowed: " + list + ")");
    }
  }
}

[[noreturn]] void wrong_type(const std::string& where, const char* key, const char* expected) {
  throw Error(Errc::InvalidConfig, where + "." + key + " must be " + expected);
}

void read(const toml::table& t, const char* key, int& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  const auto v = n->value_exact<std::int64_t>();
  if (!v || *v < INT32_MIN || *v > INT32_MAX) wrong_type(where, key, "an integer");
  out = static_cast<int>(*v);
}

void read(const toml::table& t, const char* key, std::uint64_t& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  const auto v = n->value_exact<std::int64_t>();
  if (!v || *v < 0) wrong_type(where, key, "a non-negative integer");
  out = static_cast<std::uint64_t>(*v);
}

void read(const toml::table& t, const char* key, double& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  if (const auto v = n->value_exact<double>()) {
    out = *v;
  } else if (const auto i = n->value_exact<std::int64_t>()) {
    out = static_cast<double>(*i);
  } else {
    wrong_type(where, key, "a number");
  }
}

void read(const toml::table& t, const char* key, bool& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  const auto v = n->value_exact<bool>();
  if (!v) wrong_type(where, key, "a boolean");
  out = *v;
}

void read(const toml::table& t, const char* key, std::string& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  const auto v = n->value_exact<std::string>();
  if (!v) wrong_type(where, key, "a string");
  out = *v;
}

const toml::table* subtable(const toml::table& t, const char* key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return nullptr;
  if (!n->is_table()) throw Error(Errc::InvalidConfig, where + key + " must be a table");
  return n->as_table();
}

void apply(RunConfig& c, const toml::table& root) {
  reject_unknown(root, {"model", "train", "data", "augment", "recognizer", "eval", "service"}, "config");

  if (const auto* m = subtable(root, "model", "")) {
    const std::string w = "model";
    reject_unknown(*m, {"latent_dim", "num_layers", "num_heads", "ff_dim", "max_frames", "combine_mode", "loss_weights"},
                   w);
    read(*m, "latent_dim", c.model.latent_dim, w);
    read(*m, "num_layers", c.model.num_layers, w);
    read(*m, "num_heads", c.model.num_heads, w);
    read(*m, "ff_dim", c.model.ff_dim, w);
    read(*m, "max_frames", c.model.max_frames, w);
    std::string mode(combine_mode_name(c.model.combine_mode));
    read(*m, "combine_mode", mode, w);
    c.model.combine_mode = parse_combine_mode(mode);
    if (const auto* lw = subtable(*m, "loss_weights", "model.")) {
      const std::string wl = "model.loss_weights";
      reject_unknown(*lw, {"param", "kl", "vertex", "init"}, wl);
      read(*lw, "param", c.model.weights.param, wl);
      read(*lw, "kl", c.model.weights.kl, wl);
      read(*lw, "vertex", c.model.weights.vertex, wl);
      read(*lw, "init", c.model.weights.init, wl);
    }
  }
  if (const auto* t = subtable(root, "train", "")) {
    const std::string w = "train";
    reject_unknown(*t, {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "seed"}, w);
    read(*t, "epochs", c.train.epochs, w);
    read(*t, "batch_size", c.train.batch_size, w);
    read(*t, "learning_rate", c.train.adam.learning_rate, w);
    read(*t, "beta1", c.train.adam.beta1, w);
    read(*t, "beta2", c.train.adam.beta2, w);
    read(*t, "epsilon", c.train.adam.epsilon, w);
    read(*t, "seed", c.train.seed, w);
  }
  if (const auto* d = subtable(root, "data", "")) {
    const std::string w = "data";
    reject_unknown(*d, {"count", "seed", "fps", "body", "test_fraction"}, w);
    read(*d, "count", c.synth.count, w);
    read(*d, "seed", c.synth.seed, w);
    read(*d, "fps", c.synth.fps, w);
    std::string body(body_model_name(c.synth.body));
    read(*d, "body", body, w);
    c.synth.body = parse_body_model(body);
    read(*d, "test_fraction", c.test_fraction, w);
  }
  if (const auto* a = subtable(root, "augment", "")) {
    const std::string w = "augment";
    reject_unknown(*a, {"magnitude_jitter", "phase_jitter", "protected_bins", "copies", "yaw"}, w);
    read(*a, "magnitude_jitter", c.jitter.magnitude_jitter, w);
    read(*a, "phase_jitter", c.jitter.phase_jitter, w);
    read(*a, "protected_bins", c.jitter.protected_bins, w);
    read(*a, "copies", c.augment_copies, w);
    read(*a, "yaw", c.augment_yaw, w);
  }
  if (const auto* r = subtable(root, "recognizer", "")) {
    const std::string w = "recognizer";
    reject_unknown(*r, {"blocks", "temporal_kernel", "embedding_dim", "epochs", "batch_size", "learning_rate",
                        "sequences", "seed"},
                   w);
    if (const toml::node* b = r->get("blocks")) {
      const auto* arr = b->as_array();
      if (arr == nullptr || arr->empty()) wrong_type(w, "blocks", "a non-empty array of [channels, stride] pairs");
      c.recognizer.blocks.clear();
      for (const auto& item : *arr) {
        const auto* pair = item.as_array();
        if (pair == nullptr || pair->size() != 2) wrong_type(w, "blocks", "a non-empty array of [channels, stride] pairs");
        const auto ch = (*pair)[0].value_exact<std::int64_t>(), st = (*pair)[1].value_exact<std::int64_t>();
        if (!ch || !st) wrong_type(w, "blocks", "a non-empty array of [channels, stride] pairs");
        c.recognizer.blocks.push_back({static_cast<int>(*ch), static_cast<int>(*st)});
      }
    }
    read(*r, "temporal_kernel", c.recognizer.temporal_kernel, w);
    read(*r, "embedding_dim", c.recognizer.embedding_dim, w);
    read(*r, "epochs", c.recognizer_train.epochs, w);
    read(*r, "batch_size", c.recognizer_train.batch_size, w);
    read(*r, "learning_rate", c.recognizer_train.adam.learning_rate, w);
    read(*r, "sequences", c.recognizer_sequences, w);
    read(*r, "seed", c.recognizer_train.seed, w);
  }
  if (const auto* e = subtable(root, "eval", "")) {
    const std::string w = "eval";
    reject_unknown(*e, {"samples", "diversity_pairs", "seed"}, w);
    read(*e, "samples", c.eval_samples, w);
    read(*e, "diversity_pairs", c.eval.diversity_pairs, w);
    read(*e, "seed", c.eval.seed, w);
  }
}

// --- generation checks -------------------------------------------------------

PhaseDurations clip(PhaseDurations d, int max_frames) {
  d.impact = std::min(d.impact, max_frames);
  d.glitch = std::min(d.glitch, max_frames);
  d.fall = std::min(d.fall, max_frames);
  return d;
}

bool orthonormal(const Rotation6D& r, double tol) {
  const Mat3 m = rot6d_to_matrix(r);
  return ((m.transpose() * m) - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

std::string describe(const AttributeConfig& a, const PhaseDurations& d, std::uint64_t seed) {
  return to_string(a) + " durations " + std::to_string(d.impact) + "/" + std::to_string(d.glitch) + "/" +
         std::to_string(d.fall) + " seed " + std::to_string(seed);
}

nlohmann::ordered_json accuracy_json(const HeadAccuracy& a) {
  return {{"impact", a.impact}, {"glitch", a.glitch}, {"fall", a.fall}, {"mean", a.mean}};
}

std::array<double, 4> last_epoch_terms(const TrainResult& r) {
  std::array<double, 4> sum{};
  int n = 0;
  if (r.steps.empty()) return sum;
  const int last = r.steps.back().epoch;
  for (const auto& s : r.steps) {
    if (s.epoch != last) continue;
    sum[0] += s.param;
    sum[1] += s.kl;
    sum[2] += s.vertex;
    sum[3] += s.init;
    ++n;
  }
  for (auto& v : sum) v /= n;
  return sum;
}

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (train.epochs < 1 || train.batch_size < 1) throw Error(Errc::InvalidConfig, "train.epochs and batch_size must be positive");
  if (!(train.adam.learning_rate > 0.0)) throw Error(Errc::InvalidConfig, "train.learning_rate must be positive");
  if (synth.count < 1) throw Error(Errc::InvalidConfig, "data.count must be positive");
  if (!(synth.fps > 0.0)) throw Error(Errc::InvalidConfig, "data.fps must be positive");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw Error(Errc::InvalidConfig, "data.test_fraction must be in [0, 1)");
  jitter.validate();
  if (augment_copies < 0) throw Error(Errc::InvalidConfig, "augment.copies must be non-negative");
  recognizer.validate();
  if (recognizer_train.epochs < 1 || recognizer_train.batch_size < 1)
    throw Error(Errc::InvalidConfig, "recognizer.epochs and batch_size must be positive");
  if (recognizer_sequences < 2) throw Error(Errc::InvalidConfig, "recognizer.sequences must be at least 2");
  if (eval_samples < 2) throw Error(Errc::InvalidConfig, "eval.samples must be at least 2");
  if (eval.diversity_pairs < 1) throw Error(Errc::InvalidConfig, "eval.diversity_pairs must be positive");
}

RunConfig desk_scale_config() {
  RunConfig c;
  c.model.latent_dim = 32;
  c.model.num_layers = 2;
  c.model.num_heads = 4;
  c.model.ff_dim = 64;
  c.model.max_frames = 40;
  c.train.epochs = 50;
  c.train.batch_size = 4;
  c.train.adam.learning_rate = 1e-4;
  c.synth.count = 200;
  c.recognizer_train.epochs = 15;
  c.recognizer_train.batch_size = 8;
  c.recognizer_train.adam.learning_rate = 1e-3;
  return c;
}

RunConfig parse_run_config(std::string_view toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw Error(Errc::ParseError, msg.str());
  }
  RunConfig c = desk_scale_config();
  try {
    apply(c, root);
    c.validate();
  } catch (const Error& e) {
    throw Error(e.code(), source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json doc;
  doc["model"] = model_config_to_json(c.model);
  doc["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"learning_rate", c.train.adam.learning_rate},
                  {"beta1", c.train.adam.beta1},
                  {"beta2", c.train.adam.beta2},
                  {"epsilon", c.train.adam.epsilon},
                  {"seed", c.train.seed}};
  doc["data"] = {{"count", c.synth.count},
                 {"seed", c.synth.seed},
                 {"fps", c.synth.fps},
                 {"body", body_model_name(c.synth.body)},
                 {"test_fraction", c.test_fraction}};
  doc["augment"] = {{"magnitude_jitter", c.jitter.magnitude_jitter},
                    {"phase_jitter", c.jitter.phase_jitter},
                    {"protected_bins", c.jitter.protected_bins},
                    {"copies", c.augment_copies},
                    {"yaw", c.augment_yaw}};
  nlohmann::ordered_json rec = recognizer_config_to_json(c.recognizer);
  rec["epochs"] = c.recognizer_train.epochs;
  rec["batch_size"] = c.recognizer_train.batch_size;
  rec["learning_rate"] = c.recognizer_train.adam.learning_rate;
  rec["sequences"] = c.recognizer_sequences;
  rec["seed"] = c.recognizer_train.seed;
  doc["recognizer"] = std::move(rec);
  doc["eval"] = {{"samples", c.eval_samples}, {"diversity_pairs", c.eval.diversity_pairs}, {"seed", c.eval.seed}};
  return doc;
}

// ---------------------------------------------------------------------------

std::vector<MotionSequence> generate_set(const FallCVAE& model, int count, std::uint64_t seed,
                                         const std::vector<MotionSequence>& starts) {
  if (count < 0) throw Error(Errc::InvalidConfig, "count must be non-negative");
  std::vector<MotionSequence> out(static_cast<std::size_t>(count));
  const Pose rest = rest_pose(skeleton_preset(BodyModel::Male));
  const int max_frames = model.config().max_frames;
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < count; ++i) {
    errors.capture([&] {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
      const AttributeConfig attrs = random_attributes(rng);
      const PhaseDurations durations = clip(random_durations(rng), max_frames);
      const Pose& start = starts.empty() ? rest : starts[static_cast<std::size_t>(i) % starts.size()].frames.front();
      out[i] = model.generate(attrs, durations, rng, start);
    });
  }
  errors.rethrow();
  return out;
}

void InvariantReport::merge(const InvariantReport& other) {
  checked += other.checked;
  failures.insert(failures.end(), other.failures.begin(), other.failures.end());
}

InvariantReport check_generation(const FallCVAE& model, const AttributeConfig& attrs, const PhaseDurations& durations,
                                 std::uint64_t seed, const Pose& start) {
  InvariantReport report;
  report.checked = 1;
  const std::string what = describe(attrs, durations, seed);
  auto fail = [&](const std::string& msg) { report.failures.push_back(what + ": " + msg); };

  GenerationTrace trace;
  MotionSequence seq;
  try {
    Rng rng = make_rng(seed, 0);
    seq = model.generate(attrs, durations, rng, start, &trace);
    seq.validate();
  } catch (const Error& e) {
    fail(e.what());
    return report;
  }
  if (seq.frame_count() != durations.total()) fail("frame count " + std::to_string(seq.frame_count()));
  if (seq.boundaries.impact_end != durations.impact || seq.boundaries.glitch_end != durations.impact + durations.glitch)
    fail("boundaries do not follow the requested durations");
  if (!(seq.attributes == attrs)) fail("attributes differ from the request");
  for (int f = 0; f < seq.frame_count(); ++f) {
    const Pose& p = seq.frames[f];
    bool good = orthonormal(p.root_rotation, 1e-9);
    for (const auto& r : p.joint_rotations) good = good && orthonormal(r, 1e-9);
    if (!good) {
      fail("frame " + std::to_string(f) + " holds a non-orthonormal rotation");
      break;
    }
  }
  if (!(trace.guidance[0] == start)) fail("impact phase is not guided by the start pose");
  if (!(trace.guidance[1] == seq.frames[seq.boundaries.impact_end - 1]))
    fail("glitch phase is not guided by the last impact frame");
  if (!(trace.guidance[2] == seq.frames[seq.boundaries.glitch_end - 1]))
    fail("fall phase is not guided by the last glitch frame");

  Rng again = make_rng(seed, 0);
  const MotionSequence twin = model.generate(attrs, durations, again, start);
  if (!(twin.frames == seq.frames)) fail("same seed produced a different sequence");
  return report;
}

InvariantReport check_generations(const FallCVAE& model, int count, std::uint64_t seed) {
  std::vector<InvariantReport> parts(static_cast<std::size_t>(std::max(count, 0)));
  const Pose rest = rest_pose(skeleton_preset(BodyModel::Male));
  const int max_frames = model.config().max_frames;
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < count; ++i) {
    errors.capture([&] {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
      const AttributeConfig attrs = random_attributes(rng);
      const PhaseDurations durations = clip(random_durations(rng), max_frames);
      parts[i] = check_generation(model, attrs, durations, mix_seed(seed, static_cast<std::uint64_t>(i)), rest);
    });
  }
  errors.rethrow();
  InvariantReport all;
  for (const auto& p : parts) all.merge(p);
  return all;
}

ConditioningAccuracy conditioning_accuracy(const Recognizer& recognizer, const std::vector<MotionSequence>& generated,
                                           std::uint64_t seed) {
  if (generated.empty()) throw Error(Errc::EmptyInput, "no generated sequences");
  std::vector<int> order(generated.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng = make_rng(seed, 0x9E7);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) std::swap(order[i], order[uniform_int(rng, 0, i)]);
  std::vector<std::pair<MotionSequence, AttributeConfig>> permuted;
  permuted.reserve(generated.size());
  for (std::size_t i = 0; i < generated.size(); ++i)
    permuted.emplace_back(generated[i], generated[static_cast<std::size_t>(order[i])].attributes);
  return {recognition_accuracy(recognizer, generated), recognition_accuracy(recognizer, permuted)};
}

// ---------------------------------------------------------------------------

AblationReport run_ablation(const RunConfig& config, const std::vector<MotionSequence>& train,
                            const std::vector<MotionSequence>& reference, const Recognizer* recognizer,
                            int invariant_samples, const ModeStepCallback& on_step) {
  config.validate();
  if (train.empty()) throw Error(Errc::EmptyInput, "ablation needs training sequences");
  AblationReport report;
  report.config = run_config_to_json(config);
  for (CombineMode mode : {CombineMode::Addition, CombineMode::Concatenation}) {
    ModeResult r;
    r.mode = mode;
    ModelConfig mc = config.model;
    mc.combine_mode = mode;
    r.model = std::make_shared<FallCVAE>(mc, config.train.seed);
    const auto start = std::chrono::steady_clock::now();
    std::function<void(const StepRecord&)> cb;
    if (on_step) cb = [&](const StepRecord& s) { on_step(mode, s); };
    r.training = train_cvae(*r.model, train, config.train, cb);
    r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.loss_drop = 1.0 - r.training.epoch_total.back() / r.training.epoch_total.front();
    r.invariants = check_generations(*r.model, invariant_samples, mix_seed(config.eval.seed, 0x1A));
    if (recognizer != nullptr && !reference.empty()) {
      const auto generated = generate_set(*r.model, config.eval_samples, config.eval.seed, reference);
      r.eval = evaluate(*recognizer, reference, generated, config.eval);
      r.conditioning = conditioning_accuracy(*recognizer, generated, config.eval.seed);
    }
    report.modes.push_back(std::move(r));
  }
  return report;
}

nlohmann::ordered_json ablation_report_to_json(const AblationReport& report) {
  nlohmann::ordered_json doc;
  doc["config"] = report.config;
  auto& modes = doc["modes"] = nlohmann::ordered_json::array();
  for (const auto& r : report.modes) {
    nlohmann::ordered_json m;
    m["combine_mode"] = combine_mode_name(r.mode);
    m["epoch_total"] = r.training.epoch_total;
    m["loss_drop"] = r.loss_drop;
    const auto terms = last_epoch_terms(r.training);
    m["final_terms"] = {{"l_param", terms[0]}, {"l_kl", terms[1]}, {"l_vertex", terms[2]}, {"l_init", terms[3]}};
    m["train_seconds"] = r.train_seconds;
    m["invariants"] = {{"checked", r.invariants.checked}, {"failures", r.invariants.failures}};
    if (r.eval) m["eval"] = eval_report_to_json(*r.eval);
    if (r.conditioning) m["permuted_accuracy"] = accuracy_json(r.conditioning->permuted);
    modes.push_back(std::move(m));
  }
  return doc;
}

std::string ablation_report_markdown(const AblationReport& report) {
  std::ostringstream out;
  out << "| metric |";
  for (const auto& r : report.modes) out << " " << combine_mode_name(r.mode) << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < report.modes.size(); ++i) out << "---|";
  out << "\n";
  auto row = [&](const std::string& name, const std::function<std::string(const ModeResult&)>& cell) {
    out << "| " << name << " |";
    for (const auto& r : report.modes) out << " " << cell(r) << " |";
    out << "\n";
  };
  row("loss, first epoch", [](const ModeResult& r) { return fmt(r.training.epoch_total.front()); });
  row("loss, last epoch", [](const ModeResult& r) { return fmt(r.training.epoch_total.back()); });
  row("loss drop", [](const ModeResult& r) { return fmt(100.0 * r.loss_drop, "%.1f%%"); });
  const char* terms[4] = {"l_param", "l_kl", "l_vertex", "l_init"};
  for (int t = 0; t < 4; ++t)
    row(std::string(terms[t]) + ", last epoch", [t](const ModeResult& r) { return fmt(last_epoch_terms(r.training)[t]); });
  row("training time (s)", [](const ModeResult& r) { return fmt(r.train_seconds, "%.1f"); });
  row("invariant checks", [](const ModeResult& r) {
    return std::to_string(r.invariants.checked - static_cast<int>(r.invariants.failures.size())) + "/" +
           std::to_string(r.invariants.checked) + " passed";
  });
  const bool evaluated = !report.modes.empty() && report.modes.front().eval.has_value();
  if (evaluated) {
    row("FID", [](const ModeResult& r) { return fmt(r.eval->fid); });
    row("accuracy (mean)", [](const ModeResult& r) { return fmt(r.eval->accuracy.mean, "%.3f"); });
    row("accuracy impact/glitch/fall", [](const ModeResult& r) {
      return fmt(r.eval->accuracy.impact, "%.3f") + " / " + fmt(r.eval->accuracy.glitch, "%.3f") + " / " +
             fmt(r.eval->accuracy.fall, "%.3f");
    });
    row("accuracy, permuted labels", [](const ModeResult& r) { return fmt(r.conditioning->permuted.mean, "%.3f"); });
    row("diversity", [](const ModeResult& r) { return fmt(r.eval->diversity); });
  }
  return out.str();
}

}  // namespace fallgen

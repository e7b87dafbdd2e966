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

// fallgen: command-line entry point for the synthesis pipeline.

#include <omp.h>
#include <signal.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fallgen/checkpoint.hpp"
#include "fallgen/error.hpp"
#include "fallgen/experiment.hpp"
#include "fallgen/service.hpp"

namespace fs = std::filesystem;
using namespace fallgen;

namespace {

constexpr int kUsageExit = 2;
constexpr int kRuntimeExit = 1;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fallgen::Error(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw fallgen::Error(Errc::IoError, "write failed: " + path.string());
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// Options shared by every subcommand that reads a run config.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = 0;

  RunConfig load() const {
    RunConfig c = config_path.empty() ? desk_scale_config() : load_run_config(config_path);
    if (threads > 0) omp_set_num_threads(threads);
    return c;
  }
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) cmd->add_option("--config", c.config_path, "Run config (TOML)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--threads", c.threads, "OpenMP threads (0: runtime default)")->check(CLI::NonNegativeNumber);
}

std::vector<MotionSequence> training_split(const Dataset& d, const std::string& what) {
  auto train = d.train();
  if (train.empty()) train = d.sequences;
  if (train.empty()) throw fallgen::Error(Errc::EmptyInput, what + " holds no sequences");
  return train;
}

std::vector<MotionSequence> eval_split(const Dataset& d, const std::string& what) {
  auto test = d.test();
  if (test.empty()) test = d.sequences;
  if (test.empty()) throw fallgen::Error(Errc::EmptyInput, what + " holds no sequences");
  return test;
}

void write_loss_csv(const fs::path& path, const TrainResult& r) {
  std::string text = "step,total,l_param,l_kl,l_vertex,l_init\n";
  char line[256];
  for (const auto& s : r.steps) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.step, s.total, s.param, s.kl, s.vertex,
                  s.init);
    text += line;
  }
  write_text(path, text);
}

std::function<void(const StepRecord&)> epoch_logger(int steps_per_epoch, int epochs, const std::string& prefix) {
  auto sum = std::make_shared<double>(0.0);
  auto n = std::make_shared<int>(0);
  return [=](const StepRecord& s) {
    *sum += s.total;
    if (++*n == steps_per_epoch) {
      spdlog::info("{}epoch {}/{} loss {:.6g}", prefix, s.epoch + 1, epochs, *sum / *n);
      *sum = 0.0;
      *n = 0;
    }
  };
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::optional<int> count;
  std::optional<double> fps, test_fraction;
  std::optional<std::string> body;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  RunConfig c = a.common.load();
  if (a.count) c.synth.count = *a.count;
  if (a.fps) c.synth.fps = *a.fps;
  if (a.body) c.synth.body = parse_body_model(*a.body);
  if (a.test_fraction) c.test_fraction = *a.test_fraction;
  if (a.common.seed) c.synth.seed = *a.common.seed;
  c.validate();
  spdlog::info("synthesizing {} sequences (seed {})", c.synth.count, c.synth.seed);
  const auto seqs = synthesize_dataset(c.synth);
  write_dataset(a.out, seqs, c.synth.seed, c.test_fraction);
  spdlog::info("wrote {}", a.out);
  return 0;
}

// --- augment ----------------------------------------------------------------

struct AugmentArgs {
  Common common;
  std::string data, out;
  std::optional<int> copies;
  std::optional<double> magnitude, phase;
  std::optional<int> protected_bins;
  bool no_yaw = false;
};

int run_augment(const AugmentArgs& a) {
  RunConfig c = a.common.load();
  if (a.copies) c.augment_copies = *a.copies;
  if (a.magnitude) c.jitter.magnitude_jitter = *a.magnitude;
  if (a.phase) c.jitter.phase_jitter = *a.phase;
  if (a.protected_bins) c.jitter.protected_bins = *a.protected_bins;
  if (a.no_yaw) c.augment_yaw = false;
  c.validate();
  const std::uint64_t seed = a.common.seed.value_or(c.synth.seed);
  const Dataset in = load_dataset(a.data);
  const auto train = in.train().empty() ? in.sequences : in.train();
  const auto test = in.train().empty() ? std::vector<MotionSequence>{} : in.test();

  // originals first, then copy k of train sequence i at index n * (k + 1) + i
  const int n = static_cast<int>(train.size());
  std::vector<MotionSequence> out(static_cast<std::size_t>(n) * (c.augment_copies + 1));
#pragma omp parallel for schedule(dynamic, 1)
  for (int j = 0; j < static_cast<int>(out.size()); ++j) {
    const int i = j % n;
    if (j < n) {
      out[j] = train[i];
      continue;
    }
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(j));
    MotionSequence m = augment_fft(train[i], c.jitter, s);
    out[j] = c.augment_yaw ? augment_yaw(m, mix_seed(s, 1)) : std::move(m);
  }
  std::vector<int> train_idx(out.size()), test_idx;
  for (std::size_t i = 0; i < out.size(); ++i) train_idx[i] = static_cast<int>(i);
  for (const auto& t : test) {
    test_idx.push_back(static_cast<int>(out.size()));
    out.push_back(t);
  }
  write_dataset(a.out, out, seed, train_idx, test_idx);
  spdlog::info("wrote {} training sequences ({} augmented) and {} test sequences to {}", train_idx.size(),
               train_idx.size() - static_cast<std::size_t>(n), test_idx.size(), a.out);
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, out;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr, kl_weight;
  std::optional<std::string> combine_mode;
};

int run_train(const TrainArgs& a) {
  RunConfig c = a.common.load();
  if (a.epochs) c.train.epochs = *a.epochs;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.lr) c.train.adam.learning_rate = *a.lr;
  if (a.kl_weight) c.model.weights.kl = *a.kl_weight;
  if (a.combine_mode) c.model.combine_mode = parse_combine_mode(*a.combine_mode);
  if (a.common.seed) c.train.seed = *a.common.seed;
  c.validate();

  const auto train = training_split(load_dataset(a.data), a.data);
  FallCVAE model(c.model, c.train.seed);
  const int steps_per_epoch = (static_cast<int>(train.size()) + c.train.batch_size - 1) / c.train.batch_size;
  spdlog::info("training on {} sequences: {} epochs, batch {}, {} parameters", train.size(), c.train.epochs,
               c.train.batch_size, model.parameters().scalar_count());
  const TrainResult r = train_cvae(model, train, c.train, epoch_logger(steps_per_epoch, c.train.epochs, ""));

  const fs::path out(a.out);
  fs::create_directories(out);
  nlohmann::ordered_json extra = {{"initial_loss", r.epoch_total.front()},
                                  {"final_loss", r.epoch_total.back()},
                                  {"epochs", c.train.epochs},
                                  {"train_sequences", train.size()}};
  save_model(out / "model.ckpt", model, r.steps.size(), make_rng(c.train.seed, 0), extra);
  write_loss_csv(out / "loss.csv", r);
  nlohmann::ordered_json run = {{"config", run_config_to_json(c)},
                                {"checkpoint_id", checkpoint_id(out / "model.ckpt")},
                                {"epoch_total", r.epoch_total}};
  write_text(out / "run.json", dump(run));
  spdlog::info("loss {:.6g} -> {:.6g}; wrote {}", r.epoch_total.front(), r.epoch_total.back(),
               (out / "model.ckpt").string());
  return 0;
}

// --- train-recognizer -------------------------------------------------------

struct RecognizerArgs {
  Common common;
  std::string data, out;
  std::optional<int> epochs, sequences;
};

int run_train_recognizer(const RecognizerArgs& a) {
  RunConfig c = a.common.load();
  if (a.epochs) c.recognizer_train.epochs = *a.epochs;
  if (a.sequences) c.recognizer_sequences = *a.sequences;
  if (a.common.seed) c.recognizer_train.seed = *a.common.seed;
  c.validate();

  std::vector<MotionSequence> train, heldout;
  if (!a.data.empty()) {
    const Dataset d = load_dataset(a.data);
    train = training_split(d, a.data);
    if (!d.train().empty()) heldout = d.test();
  } else {
    SynthOptions so = c.synth;
    so.count = c.recognizer_sequences;
    so.seed = mix_seed(c.recognizer_train.seed, 0x2EC);
    auto all = synthesize_dataset(so);
    const auto [tr, te] = split_indices(so.count, c.test_fraction, so.seed);
    for (int i : tr) train.push_back(all[i]);
    for (int i : te) heldout.push_back(all[i]);
  }
  Recognizer model(c.recognizer, c.recognizer_train.seed);
  spdlog::info("training recognizer on {} sequences ({} held out), {} epochs", train.size(), heldout.size(),
               c.recognizer_train.epochs);
  const RecognizerReport r = train_recognizer(model, train, heldout, c.recognizer_train);
  save_recognizer(a.out, model, r, c.recognizer_train.seed);
  spdlog::info("loss {:.4g} -> {:.4g}; accuracy train {:.3f}/{:.3f}/{:.3f}, held out {:.3f}/{:.3f}/{:.3f}",
               r.initial_loss, r.final_loss, r.train_accuracy.impact, r.train_accuracy.glitch, r.train_accuracy.fall,
               r.heldout_accuracy.impact, r.heldout_accuracy.glitch, r.heldout_accuracy.fall);
  return 0;
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string checkpoint, out;
  int count = 1;
  std::string body = "male";
  std::optional<std::string> slots[4];
  std::vector<int> durations;
};

int run_generate(const GenerateArgs& a) {
  if (a.common.threads > 0) omp_set_num_threads(a.common.threads);
  const BodyModel body = parse_body_model(a.body);
  std::optional<int> fixed[4];
  for (int s = 0; s < 4; ++s)
    if (a.slots[s]) fixed[s] = parse_label(kAttributeSlots[s], *a.slots[s]);
  const LoadedModel loaded = load_model(a.checkpoint);
  const int max_frames = loaded.model->config().max_frames;
  if (!a.durations.empty()) {
    if (a.durations.size() != 3) throw UsageError("--durations takes three values: impact glitch fall");
    for (int d : a.durations)
      if (d < kMinPhaseFrames || d > max_frames)
        throw UsageError("--durations values must lie in [" + std::to_string(kMinPhaseFrames) + ", " +
                         std::to_string(max_frames) + "] for this checkpoint");
  }
  const std::uint64_t seed = a.common.seed.value_or(0);
  const Pose start = rest_pose(skeleton_preset(body));

  // Attributes and durations are always drawn first so unpinned samples match
  // generate_set for the same seed.
  std::vector<MotionSequence> out(static_cast<std::size_t>(a.count));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < a.count; ++i) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
    AttributeConfig attrs = random_attributes(rng);
    PhaseDurations d = random_durations(rng);
    for (int s = 0; s < 4; ++s)
      if (fixed[s]) attrs.set(kAttributeSlots[s], *fixed[s]);
    if (!a.durations.empty()) d = {a.durations[0], a.durations[1], a.durations[2]};
    d = {std::min(d.impact, max_frames), std::min(d.glitch, max_frames), std::min(d.fall, max_frames)};
    out[i] = loaded.model->generate(attrs, d, rng, start);
  }
  std::vector<int> all(out.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  write_dataset(a.out, out, seed, {}, all);
  spdlog::info("wrote {} sequences from checkpoint {} to {}", out.size(), loaded.id, a.out);
  return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string real, gen, recognizer, out;
  std::optional<int> pairs;
};

int run_eval(const EvalArgs& a) {
  RunConfig c = a.common.load();
  if (a.pairs) c.eval.diversity_pairs = *a.pairs;
  if (a.common.seed) c.eval.seed = *a.common.seed;
  c.validate();
  const auto rec = load_recognizer(a.recognizer);
  const auto real = eval_split(load_dataset(a.real), a.real);
  const auto gen = eval_split(load_dataset(a.gen), a.gen);
  const EvalReport r = evaluate(*rec, real, gen, c.eval);
  write_text(a.out, dump(eval_report_to_json(r)));
  spdlog::info("FID {:.4g}, accuracy {:.3f} (impact {:.3f}, glitch {:.3f}, fall {:.3f}), diversity {:.4g}", r.fid,
               r.accuracy.mean, r.accuracy.impact, r.accuracy.glitch, r.accuracy.fall, r.diversity);
  return 0;
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
  Common common;
  std::string data, recognizer, out;
  std::optional<int> epochs;
  int invariant_samples = 20;
};

int run_ablate(const AblateArgs& a) {
  RunConfig c = a.common.load();
  if (a.epochs) c.train.epochs = *a.epochs;
  if (a.common.seed) c.train.seed = c.eval.seed = *a.common.seed;
  c.validate();
  const Dataset d = load_dataset(a.data);
  const auto train = training_split(d, a.data);
  const auto reference = eval_split(d, a.data);
  std::shared_ptr<Recognizer> rec;
  if (!a.recognizer.empty()) rec = load_recognizer(a.recognizer);
  const int steps_per_epoch = (static_cast<int>(train.size()) + c.train.batch_size - 1) / c.train.batch_size;
  auto add = epoch_logger(steps_per_epoch, c.train.epochs, "addition: ");
  auto cat = epoch_logger(steps_per_epoch, c.train.epochs, "concatenation: ");
  const AblationReport r = run_ablation(c, train, reference, rec.get(), a.invariant_samples,
                                        [&](CombineMode m, const StepRecord& s) {
                                          (m == CombineMode::Addition ? add : cat)(s);
                                        });
  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "ablation.json", dump(ablation_report_to_json(r)));
  const std::string md = ablation_report_markdown(r);
  write_text(out / "ablation.md", md);
  for (const auto& m : r.modes) {
    const std::string name(combine_mode_name(m.mode));
    save_model(out / (name + ".ckpt"), *m.model, m.training.steps.size(), make_rng(c.train.seed, 0));
    write_loss_csv(out / (name + "_loss.csv"), m.training);
  }
  std::cerr << md;
  return 0;
}

// --- inspect ----------------------------------------------------------------

nlohmann::ordered_json sequence_stats(const MotionSequence& seq) {
  const Skeleton& sk = skeleton_preset(BodyModel::Male);
  double min_height = INFINITY, max_speed = 0.0, travel = 0.0;
  std::vector<Vec3> prev;
  for (int f = 0; f < seq.frame_count(); ++f) {
    const auto pos = forward_kinematics(sk, seq.frames[f]);
    for (const auto& p : pos) min_height = std::min(min_height, p.y());
    if (!prev.empty()) {
      for (std::size_t j = 0; j < pos.size(); ++j) max_speed = std::max(max_speed, (pos[j] - prev[j]).norm() * seq.fps);
      travel += (pos[0] - prev[0]).norm();
    }
    prev = pos;
  }
  nlohmann::ordered_json attrs;
  for (AttributeSlot s : kAttributeSlots) attrs[std::string(slot_field_name(s))] = seq.attributes.id(s);
  return {{"frames", seq.frame_count()},
          {"fps", seq.fps},
          {"duration_seconds", seq.frame_count() / seq.fps},
          {"phase_frames",
           {seq.boundaries.impact_end, seq.boundaries.glitch_end - seq.boundaries.impact_end,
            seq.frame_count() - seq.boundaries.glitch_end}},
          {"attributes", attrs},
          {"root_travel_m", travel},
          {"min_joint_height_m", min_height},
          {"max_joint_speed_mps", max_speed}};
}

bool is_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  return in && std::string(magic, 8) == "FALLCKPT";
}

int run_inspect(const std::vector<std::string>& paths) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& p : paths) {
    nlohmann::ordered_json item = {{"path", p}};
    if (fs::is_directory(p)) {
      const Dataset d = load_dataset(p);
      std::vector<double> frames;
      for (const auto& s : d.sequences) frames.push_back(s.frame_count());
      item["kind"] = "dataset";
      item["sequences"] = d.sequences.size();
      item["train"] = d.manifest.train.size();
      item["test"] = d.manifest.test.size();
      if (!frames.empty()) {
        item["frames_min"] = *std::min_element(frames.begin(), frames.end());
        item["frames_max"] = *std::max_element(frames.begin(), frames.end());
      }
    } else if (is_checkpoint(p)) {
      const CheckpointHeader h = read_checkpoint_header(p);
      item["kind"] = h.kind;
      item["id"] = checkpoint_id(p);
      item["step"] = h.step;
      item["config"] = h.config;
      item["extra"] = h.extra;
    } else {
      item["kind"] = "sequence";
      item["stats"] = sequence_stats(load_sequence(p));
    }
    out.push_back(std::move(item));
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- serve ------------------------------------------------------------------

struct ServeArgs {
  std::string config_path;
  std::optional<std::string> checkpoint, host;
  std::optional<int> port, threads;
};

int run_serve(const ServeArgs& a) {
  service::ServiceConfig sc;
  if (!a.config_path.empty()) sc = service::load_service_config(a.config_path);
  service::apply_env_overrides(sc);
  if (a.checkpoint) sc.checkpoint_path = *a.checkpoint;
  if (a.host) sc.host = *a.host;
  if (a.port) sc.port = *a.port;
  if (a.threads) sc.threads = *a.threads;
  sc.validate();

  // Signals are taken synchronously by one thread; every other thread
  // inherits the blocked mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGHUP);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::Service svc(sc);
  const int port = svc.bind_port();
  spdlog::info("listening on {}:{}", sc.host, port);
  std::thread watcher([&] {
    for (;;) {
      int sig = 0;
      if (sigwait(&signals, &sig) != 0) continue;
      if (sig == SIGHUP) {
        if (sc.checkpoint_path.empty()) {
          spdlog::warn("SIGHUP ignored: no checkpoint path configured");
          continue;
        }
        try {
          const auto m = svc.models().load(sc.checkpoint_path);
          spdlog::info("reloaded checkpoint {}", m->id);
        } catch (const std::exception& e) {
          spdlog::error("reload failed, keeping the current model: {}", e.what());
        }
        continue;
      }
      spdlog::info("shutting down");
      svc.stop();
      return;
    }
  });
  svc.serve();
  watcher.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("fallgen");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %v");

  CLI::App app{"Falling-motion synthesis: data, training, generation, evaluation and serving"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fallgen 1.0.0");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic dataset");
  add_common(c_synth, synth.common);
  c_synth->add_option("--count", synth.count, "Number of sequences")->check(CLI::PositiveNumber);
  c_synth->add_option("--fps", synth.fps, "Frame rate")->check(CLI::PositiveNumber);
  c_synth->add_option("--body", synth.body, "male or female");
  c_synth->add_option("--test-fraction", synth.test_fraction, "Held-out fraction")->check(CLI::Range(0.0, 0.99));
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "FFT-jitter and yaw-rotate the training split");
  add_common(c_aug, aug.common);
  c_aug->add_option("--data", aug.data, "Input dataset")->required()->check(CLI::ExistingDirectory);
  c_aug->add_option("--out", aug.out, "Output directory")->required();
  c_aug->add_option("--copies", aug.copies, "Augmented copies per sequence")->check(CLI::NonNegativeNumber);
  c_aug->add_option("--magnitude-jitter", aug.magnitude, "Spectral gain jitter");
  c_aug->add_option("--phase-jitter", aug.phase, "Spectral phase jitter (radians)");
  c_aug->add_option("--protected-bins", aug.protected_bins, "Low bins left untouched");
  c_aug->add_flag("--no-yaw", aug.no_yaw, "Skip the random yaw rotation");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train the CVAE");
  add_common(c_train, train.common);
  c_train->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", train.out, "Output directory")->required();
  c_train->add_option("--epochs", train.epochs)->check(CLI::PositiveNumber);
  c_train->add_option("--batch-size", train.batch_size)->check(CLI::PositiveNumber);
  c_train->add_option("--lr", train.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  c_train->add_option("--kl-weight", train.kl_weight)->check(CLI::NonNegativeNumber);
  c_train->add_option("--combine-mode", train.combine_mode, "addition or concatenation");

  RecognizerArgs rec;
  auto* c_rec = app.add_subcommand("train-recognizer", "Train the motion recognizer used by eval");
  add_common(c_rec, rec.common);
  c_rec->add_option("--data", rec.data, "Dataset directory (default: synthesize one)")->check(CLI::ExistingDirectory);
  c_rec->add_option("--out", rec.out, "Checkpoint path")->required();
  c_rec->add_option("--epochs", rec.epochs)->check(CLI::PositiveNumber);
  c_rec->add_option("--sequences", rec.sequences, "Synthetic sequences when --data is absent")
      ->check(CLI::PositiveNumber);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Sample sequences from a checkpoint");
  add_common(c_gen, gen.common, false);
  c_gen->add_option("--checkpoint", gen.checkpoint)->required()->check(CLI::ExistingFile);
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  c_gen->add_option("--body", gen.body, "male or female");
  for (int s = 0; s < 4; ++s) {
    const std::string field(slot_field_name(kAttributeSlots[s]));
    std::string flag = "--" + field;
    std::replace(flag.begin(), flag.end(), '_', '-');
    c_gen->add_option(flag, gen.slots[s], "Pin " + field + " (default: random per sample)");
  }
  c_gen->add_option("--durations", gen.durations, "Phase lengths in frames: impact glitch fall")->expected(3);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "FID, recognition accuracy and diversity");
  add_common(c_eval, ev.common);
  c_eval->add_option("--real", ev.real, "Reference dataset")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--gen", ev.gen, "Generated dataset")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--recognizer", ev.recognizer)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", ev.out, "Metrics JSON path")->required();
  c_eval->add_option("--pairs", ev.pairs, "Diversity pairs")->check(CLI::PositiveNumber);

  AblateArgs abl;
  auto* c_abl = app.add_subcommand("ablate", "Train both combine modes and compare");
  add_common(c_abl, abl.common);
  c_abl->add_option("--data", abl.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_abl->add_option("--recognizer", abl.recognizer)->check(CLI::ExistingFile);
  c_abl->add_option("--out", abl.out, "Output directory")->required();
  c_abl->add_option("--epochs", abl.epochs)->check(CLI::PositiveNumber);
  c_abl->add_option("--invariant-samples", abl.invariant_samples)->check(CLI::NonNegativeNumber);

  std::vector<std::string> inspect_paths;
  auto* c_inspect = app.add_subcommand("inspect", "Print statistics of sequences, datasets or checkpoints");
  c_inspect->add_option("paths", inspect_paths)->required()->check(CLI::ExistingPath);

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP generation service (SIGHUP reloads the checkpoint)");
  c_serve->add_option("--config", serve.config_path, "TOML file with a [service] table")->check(CLI::ExistingFile);
  c_serve->add_option("--checkpoint", serve.checkpoint);
  c_serve->add_option("--host", serve.host);
  c_serve->add_option("--port", serve.port)->check(CLI::Range(0, 65535));
  c_serve->add_option("--threads", serve.threads)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_aug) return run_augment(aug);
    if (*c_train) return run_train(train);
    if (*c_rec) return run_train_recognizer(rec);
    if (*c_gen) return run_generate(gen);
    if (*c_eval) return run_eval(ev);
    if (*c_abl) return run_ablate(abl);
    if (*c_inspect) return run_inspect(inspect_paths);
    if (*c_serve) return run_serve(serve);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kUsageExit;
  } catch (const fallgen::Error& e) {
    spdlog::error("{}", e.what());
    return e.code() == Errc::InvalidConfig || e.code() == Errc::UnknownLabel ? kUsageExit : kRuntimeExit;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeExit;
  }
  return kUsageExit;
}

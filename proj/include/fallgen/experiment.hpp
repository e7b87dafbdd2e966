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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fallgen/augment.hpp"
#include "fallgen/metrics.hpp"
#include "fallgen/model.hpp"
#include "fallgen/synth.hpp"
#include "fallgen/train.hpp"

namespace fallgen {

// ---------------------------------------------------------------------------
// Run configuration: one TOML file covering the model, training, data and
// evaluation settings. Command-line flags override individual values.

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthOptions synth;
  double test_fraction = 0.2;
  FftJitter jitter;
  int augment_copies = 1;
  bool augment_yaw = true;
  RecognizerConfig recognizer;
  RecognizerTrainConfig recognizer_train;
  int recognizer_sequences = 400;  // synthetic sequences the recognizer trains on
  EvalOptions eval;
  int eval_samples = 200;  // generated sequences per evaluation

  void validate() const;  // throws InvalidConfig
};

/// The built-in desk-scale profile: latent 32, 2 layers, 4 heads, ff 64,
/// 50 epochs of batch 4 at lr 1e-4 on 200 synthetic sequences.
RunConfig desk_scale_config();

/// Starts from desk_scale_config() and applies the file. Unknown tables or
/// keys are rejected with InvalidConfig so typos do not pass silently.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(std::string_view toml_text, const std::string& source = "<string>");
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

// ---------------------------------------------------------------------------
// Generation helpers

/// `count` generations with uniformly drawn attributes and durations (clipped
/// to the model's frame limit). Sample i uses make_rng(seed, i) and starts
/// from frame 0 of starts[i % starts.size()], or the male rest pose when
/// `starts` is empty. Independent of thread count.
std::vector<MotionSequence> generate_set(const FallCVAE& model, int count, std::uint64_t seed,
                                         const std::vector<MotionSequence>& starts = {});

struct InvariantReport {
  int checked = 0;
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
  void merge(const InvariantReport& other);
};

/// Generates once with `seed` and checks the output contract: the sequence
/// validates, frame count and boundaries follow `durations`, attributes echo
/// the request, every rotation is orthonormal within 1e-9, each phase is
/// guided by exactly the previous phase's last frame, and a second call with
/// the same seed is bit-identical.
InvariantReport check_generation(const FallCVAE& model, const AttributeConfig& attrs, const PhaseDurations& durations,
                                 std::uint64_t seed, const Pose& start);

/// check_generation over `count` random requests.
InvariantReport check_generations(const FallCVAE& model, int count, std::uint64_t seed);

/// Recognition accuracy of `generated` against its own attributes and against
/// a seeded random permutation of them.
struct ConditioningAccuracy {
  HeadAccuracy matched;
  HeadAccuracy permuted;
};
ConditioningAccuracy conditioning_accuracy(const Recognizer& recognizer, const std::vector<MotionSequence>& generated,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ablation over the latent/initial-pose combination modes

struct ModeResult {
  CombineMode mode = CombineMode::Addition;
  std::shared_ptr<FallCVAE> model;
  TrainResult training;
  double loss_drop = 0.0;  // 1 - last epoch mean / first epoch mean
  double train_seconds = 0.0;
  InvariantReport invariants;
  std::optional<EvalReport> eval;
  std::optional<ConditioningAccuracy> conditioning;
};

struct AblationReport {
  nlohmann::ordered_json config;
  std::vector<ModeResult> modes;
};

using ModeStepCallback = std::function<void(CombineMode, const StepRecord&)>;

/// Trains one model per combine mode from the same config, data and seed,
/// then checks generation invariants and, when a recognizer is given,
/// evaluates generations against `reference`.
AblationReport run_ablation(const RunConfig& config, const std::vector<MotionSequence>& train,
                            const std::vector<MotionSequence>& reference, const Recognizer* recognizer,
                            int invariant_samples = 20, const ModeStepCallback& on_step = {});

nlohmann::ordered_json ablation_report_to_json(const AblationReport& report);
/// Side-by-side comparison table in Markdown.
std::string ablation_report_markdown(const AblationReport& report);

}  // namespace fallgen

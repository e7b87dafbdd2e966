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

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "fallgen/attributes.hpp"
#include "fallgen/nn.hpp"
#include "fallgen/sequence.hpp"

namespace fallgen {

enum class CombineMode { Addition, Concatenation };

std::string_view combine_mode_name(CombineMode mode);
CombineMode parse_combine_mode(std::string_view name);  // throws InvalidConfig

struct LossWeights {
  double param = 1.0;
  double kl = 1e-4;
  double vertex = 1.0;
  double init = 1.0;

  bool operator==(const LossWeights&) const = default;
};

struct ModelConfig {
  int latent_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int ff_dim = 128;
  int max_frames = 64;  // per phase
  CombineMode combine_mode = CombineMode::Addition;
  LossWeights weights;

  void validate() const;  // throws InvalidConfig
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Conditioning label of one phase. The impact phase carries a location and
/// a quality; the other phases carry a single value in `primary`.
struct PhaseLabel {
  int primary = 0;
  int secondary = -1;
};

PhaseLabel phase_label(const AttributeConfig& attrs, Phase phase);

struct LatentDistribution {
  ad::Tensor mu;       // 1 x latent_dim
  ad::Tensor log_var;  // 1 x latent_dim
};

struct ForwardResult {
  std::array<ad::Tensor, 3> reconstruction;  // per phase, frames x kPoseDim
  std::array<LatentDistribution, 3> dists;
};

struct LossTerms {
  ad::Tensor total;
  double param = 0.0;
  double kl = 0.0;
  double vertex = 0.0;
  double init = 0.0;
  double total_value = 0.0;
};

/// Initial guidance poses used while generating, recorded exactly as they
/// were handed to each phase decoder.
struct GenerationTrace {
  std::array<Pose, 3> guidance;
};

/// Flattened frames [first, first + count) as a count x kPoseDim constant.
ad::Tensor frames_tensor(const MotionSequence& seq, int first, int count);

class FallCVAE {
 public:
  FallCVAE(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  /// poses: frames x kPoseDim, 1 <= frames <= max_frames.
  LatentDistribution encode(Phase phase, const ad::Tensor& poses, const PhaseLabel& label) const;
  /// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from `rng`.
  ad::Tensor reparameterize(const LatentDistribution& dist, Rng& rng) const;
  /// initial_pose: 1 x kPoseDim. Returns frame_count x kPoseDim.
  ad::Tensor decode(Phase phase, const ad::Tensor& z, const PhaseLabel& label, const ad::Tensor& initial_pose,
                    int frame_count) const;

  /// Every phase encoded and decoded independently; each decoder is guided by
  /// the ground-truth frame preceding its phase (frame 0 for the first).
  ForwardResult forward_train(const MotionSequence& seq, Rng& rng) const;

  LossTerms loss(const ForwardResult& result, const MotionSequence& truth) const;

  /// Phase-by-phase sampling from the prior. Each decoded phase is projected
  /// to valid rotations and shifted so frame 0 sits over the origin before
  /// its last frame guides the next phase.
  MotionSequence generate(const AttributeConfig& attrs, const PhaseDurations& durations, Rng& rng,
                          const Pose& start_pose, GenerationTrace* trace = nullptr, double fps = 30.0) const;

 private:
  struct PhaseEncoder {
    nn::Linear input;
    ad::Tensor mu_token, sigma_token;
    ad::Tensor label_tokens, secondary_tokens;  // secondary only for the impact phase
    std::vector<nn::EncoderLayer> layers;
  };
  struct PhaseDecoder {
    ad::Tensor bias_tokens, secondary_bias_tokens;
    nn::Linear initial_pose, combine, output;
    std::vector<nn::DecoderLayer> layers;
  };

  ad::Tensor label_token(const ad::Tensor& primary, const ad::Tensor& secondary, Phase phase,
                         const PhaseLabel& label) const;

  ModelConfig config_;
  nn::ParameterStore params_;
  std::array<PhaseEncoder, 3> encoders_;
  std::array<PhaseDecoder, 3> decoders_;
  const Skeleton* skeleton_;
  WitnessCloud cloud_;
};

/// Closed-form KL divergence of N(mu, diag exp(log_var)) from N(0, I).
ad::Tensor kl_divergence(const LatentDistribution& dist);

}  // namespace fallgen

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
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "fallgen/nn.hpp"
#include "fallgen/sequence.hpp"
#include "fallgen/train.hpp"

namespace fallgen {

// ---------------------------------------------------------------------------
// Recognition model: spatio-temporal graph convolutions over the skeleton,
// pooled per phase, a shared embedding and three classification heads
// (impact location x quality, glitch quality, fall quality).

struct GcnBlockSpec {
  int channels = 16;
  int stride = 1;
};

struct RecognizerConfig {
  std::vector<GcnBlockSpec> blocks{{16, 2}, {16, 1}, {32, 2}, {32, 1}};
  int temporal_kernel = 9;
  int embedding_dim = 64;

  void validate() const;  // throws InvalidConfig
  bool operator==(const RecognizerConfig&) const;
};

nlohmann::ordered_json recognizer_config_to_json(const RecognizerConfig& config);
RecognizerConfig recognizer_config_from_json(const nlohmann::json& doc);

inline constexpr std::array<int, 3> kHeadClasses{kImpactClasses, kGlitchClasses, kFallClasses};

/// Class index of each head for an attribute configuration.
std::array<int, 3> head_targets(const AttributeConfig& attrs);

/// Per-frame input features, frames x (24 * 6): joint positions after
/// turning the sequence to face +Z at frame 0, and their per-second
/// velocities scaled by 0.1. Joint-major column blocks.
ad::Tensor motion_features(const MotionSequence& seq);

/// Adjacency partitions used by the graph convolutions: identity and the
/// symmetrically normalized one-hop neighbourhood of the skeleton tree.
std::array<std::vector<double>, 2> skeleton_partitions(const Skeleton& skeleton);

class Recognizer {
 public:
  Recognizer(const RecognizerConfig& config, std::uint64_t seed);

  struct Output {
    ad::Tensor embedding;               // 1 x embedding_dim
    std::array<ad::Tensor, 3> logits;   // 1 x classes per head
  };

  const RecognizerConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  Output forward(const MotionSequence& seq) const;
  /// Softmax probabilities per head.
  std::array<std::vector<double>, 3> probabilities(const MotionSequence& seq) const;
  std::array<int, 3> predict(const MotionSequence& seq) const;
  std::vector<double> embed(const MotionSequence& seq) const;

 private:
  struct Block {
    std::array<ad::Tensor, 2> spatial;  // C_in x C_out per partition
    ad::Tensor spatial_bias;
    nn::Linear temporal;                // kernel * C_out -> C_out
    nn::Linear residual;                // 1x1 projection when shapes change
    bool project_residual = false;
    int in_channels = 0, out_channels = 0, stride = 1;
  };

  ad::Tensor block_forward(const Block& block, const ad::Tensor& x) const;

  RecognizerConfig config_;
  nn::ParameterStore params_;
  std::vector<Block> blocks_;
  nn::Linear embedding_;
  std::array<nn::Linear, 3> heads_;
  std::array<std::vector<double>, 2> partitions_;
};

struct RecognizerTrainConfig {
  int epochs = 40;
  int batch_size = 8;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 0;
};

struct HeadAccuracy {
  double impact = 0.0;
  double glitch = 0.0;
  double fall = 0.0;
  double mean = 0.0;
};

struct RecognizerReport {
  double initial_loss = 0.0;  // mean summed cross-entropy before training
  double final_loss = 0.0;    // same, after training
  HeadAccuracy train_accuracy;
  HeadAccuracy heldout_accuracy;
};

/// Minimizes the summed cross-entropy of the three heads. Every class present
/// in `train` needs at least two examples and every head at least two
/// classes (InsufficientData). `heldout` may be empty.
RecognizerReport train_recognizer(Recognizer& model, const std::vector<MotionSequence>& train,
                                  const std::vector<MotionSequence>& heldout, const RecognizerTrainConfig& config);

/// Mean summed cross-entropy over `data`.
double recognizer_loss(const Recognizer& model, const std::vector<MotionSequence>& data);

/// Fraction of motions whose predicted class equals the paired label, per
/// head and unweighted mean. Throws EmptyInput on an empty list.
HeadAccuracy recognition_accuracy(const Recognizer& model,
                                  const std::vector<std::pair<MotionSequence, AttributeConfig>>& labeled);
HeadAccuracy recognition_accuracy(const Recognizer& model, const std::vector<MotionSequence>& data);

void save_recognizer(const std::filesystem::path& path, const Recognizer& model, const RecognizerReport& report,
                     std::uint64_t seed);
std::shared_ptr<Recognizer> load_recognizer(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Distribution metrics over embeddings

using Matrix = Eigen::MatrixXd;

/// Rows of `embeddings` with their fitted Gaussian.
struct EmbeddingSet {
  Matrix embeddings;  // n x d
  Eigen::VectorXd mean;
  Matrix covariance;  // sample covariance, divisor n - 1

  static EmbeddingSet fit(Matrix embeddings);  // throws InsufficientData when n < 2
};

EmbeddingSet embed_all(const Recognizer& model, const std::vector<MotionSequence>& data);

inline constexpr double kFidRegularization = 1e-6;

/// Frechet distance between the fitted Gaussians. 1e-6 I is added to both
/// covariances; the square root of the cross term is taken through the
/// eigendecomposition of sqrt(S1) S2 sqrt(S1) with negative eigenvalues
/// clipped. Throws DegenerateCovariance on non-finite input or a failed
/// decomposition.
double fid(const EmbeddingSet& real, const EmbeddingSet& gen);
double fid(const Eigen::VectorXd& mu1, const Matrix& cov1, const Eigen::VectorXd& mu2, const Matrix& cov2);

/// Mean distance over `num_pairs` uniformly drawn index pairs (a != b).
/// Throws TooFewEmbeddings when n < 2 and InvalidConfig when num_pairs < 1.
double diversity(const Matrix& embeddings, int num_pairs, Rng& rng);

struct EvalReport {
  double fid = 0.0;
  HeadAccuracy accuracy;
  double diversity = 0.0;
  int n_real = 0;
  int n_gen = 0;
  std::string config_hash;
};

nlohmann::ordered_json eval_report_to_json(const EvalReport& report);

/// Hex FNV-1a of the canonical dump of `config`.
std::string config_hash(const nlohmann::json& config);

struct EvalOptions {
  int diversity_pairs = 200;
  std::uint64_t seed = 0;
};

/// FID between real and generated embeddings, recognition accuracy of the
/// generated motions against their own conditioning attributes, and
/// diversity of the generated embeddings.
EvalReport evaluate(const Recognizer& model, const std::vector<MotionSequence>& real,
                    const std::vector<MotionSequence>& generated, const EvalOptions& options);

}  // namespace fallgen

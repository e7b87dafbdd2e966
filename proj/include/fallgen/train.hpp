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
#include <vector>

#include "fallgen/model.hpp"
#include "fallgen/nn.hpp"

namespace fallgen {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const nn::ParameterStore& params, const AdamConfig& config);

  /// `grads[i]` matches params.entries()[i] elementwise.
  void step(nn::ParameterStore& params, const std::vector<std::vector<double>>& grads);
  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Gradient buffers aligned with `params`; parameters the loss never touched
/// get zeros.
std::vector<std::vector<double>> gradient_buffers(const nn::ParameterStore& params, const ad::Gradients& grads);

/// Sums per-sample gradient buffers in sample order and scales by `factor`.
/// The fixed order keeps the result independent of thread count.
std::vector<std::vector<double>> reduce_gradients(const std::vector<std::vector<std::vector<double>>>& per_sample,
                                                  double factor);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct StepRecord {
  int step = 0;  // 1-based optimizer step
  int epoch = 0;
  double total = 0.0;
  double param = 0.0;
  double kl = 0.0;
  double vertex = 0.0;
  double init = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_total;  // mean total loss per epoch
};

/// Minibatch Adam over `data`. Samples of a batch run in parallel, each with
/// its own graph and RNG stream; gradients are averaged in sample order.
TrainResult train_cvae(FallCVAE& model, const std::vector<MotionSequence>& data, const TrainConfig& config,
                       const std::function<void(const StepRecord&)>& on_step = {});

/// Batch order for an epoch: a seeded permutation of [0, count).
std::vector<int> epoch_order(int count, std::uint64_t seed, int epoch);

/// Columns: step, total, l_param, l_kl, l_vertex, l_init.
void write_loss_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps);

}  // namespace fallgen

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

// Checks shared by the unit tests and the acceptance binary.

#include <cmath>
#include <string>
#include <vector>

#include "fallgen/model.hpp"
#include "fallgen/synth.hpp"
#include "gradcheck.hpp"

namespace fallgen::testing {

inline ModelConfig tiny_config(CombineMode mode = CombineMode::Addition) {
  ModelConfig c;
  c.latent_dim = 8;
  c.num_layers = 1;
  c.num_heads = 1;
  c.ff_dim = 16;
  c.max_frames = 12;
  c.combine_mode = mode;
  return c;
}

inline MotionSequence six_frame_phases(std::uint64_t seed) {
  Rng rng(seed);
  return synthesize_fall(random_attributes(rng), {6, 6, 6}, 30.0, seed);
}

struct GroupCheck {
  std::string worst_group;
  double worst = 0.0;
  std::size_t groups = 0;
  std::size_t entries = 0;
  double worst_abs = 0.0;
};

// Finite-difference check of the total training loss with respect to every
// parameter group of a tiny model. The loss weights are raised so every term
// contributes visibly.
inline GroupCheck check_model_loss_gradients(CombineMode mode, std::uint64_t seed, int per_group = 4) {
  ModelConfig cfg = tiny_config(mode);
  cfg.weights.kl = 0.05;
  FallCVAE model(cfg, seed);
  const MotionSequence seq = six_frame_phases(seed + 1);
  auto& entries = model.parameters().entries();
  std::vector<ad::Tensor> leaves;
  for (auto& [name, t] : entries) leaves.push_back(t);
  auto build = [&](const std::vector<ad::Tensor>&) {
    Rng rng(seed + 2);
    return model.loss(model.forward_train(seq, rng), seq).total;
  };
  Rng pick(seed + 3);
  GroupCheck out;
  // One leaf at a time keeps the worst-group bookkeeping simple.
  const ad::Gradients grads = ad::backward(build(leaves));
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const auto* found = grads.find(leaves[l]);
    const std::vector<double> analytic = found ? *found : std::vector<double>(leaves[l].size(), 0.0);
    auto values = leaves[l].mutable_data();
    ++out.groups;
    for (int s = 0; s < per_group; ++s) {
      const auto i = static_cast<std::size_t>(uniform_int(pick, 0, static_cast<int>(values.size()) - 1));
      const double orig = values[i];
      const double h = 1e-5;
      double fp, fm;
      {
        ad::NoGradGuard guard;
        values[i] = orig + h;
        fp = build(leaves).item();
        values[i] = orig - h;
        fm = build(leaves).item();
      }
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double diff = std::abs(numeric - analytic[i]);
      ++out.entries;
      out.worst_abs = std::max(out.worst_abs, diff);
      if (diff <= 1e-7) continue;
      const double rel = diff / std::max(std::abs(numeric), std::abs(analytic[i]));
      if (rel > out.worst) {
        out.worst = rel;
        out.worst_group = entries[l].first;
      }
    }
  }
  return out;
}

// Monte-Carlo estimate of KL(q || N(0, I)) for a diagonal Gaussian q.
inline double monte_carlo_kl(const std::vector<double>& mu, const std::vector<double>& log_var, int samples,
                             std::uint64_t seed) {
  Rng rng(seed);
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t d = 0; d < mu.size(); ++d) {
      const double eps = standard_normal(rng);
      const double z = mu[d] + std::exp(0.5 * log_var[d]) * eps;
      // log q(z) - log p(z); the 2 pi terms cancel
      log_ratio += -0.5 * log_var[d] - 0.5 * eps * eps + 0.5 * z * z;
    }
    acc += log_ratio;
  }
  return acc / samples;
}

}  // namespace fallgen::testing

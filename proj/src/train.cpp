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

#include "fallgen/train.hpp"
#include "fallgen/parallel.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "fallgen/error.hpp"

namespace fallgen {

Adam::Adam(const nn::ParameterStore& params, const AdamConfig& config) : config_(config) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Adam::step(nn::ParameterStore& params, const std::vector<std::vector<double>>& grads) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || m_.size() != entries.size())
    throw Error(Errc::ShapeMismatch, "adam: " + std::to_string(grads.size()) + " gradient buffers for " +
                                         std::to_string(entries.size()) + " parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto w = entries[p].second.mutable_data();
    const auto& g = grads[p];
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      w[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

std::vector<std::vector<double>> gradient_buffers(const nn::ParameterStore& params, const ad::Gradients& grads) {
  std::vector<std::vector<double>> out;
  out.reserve(params.entries().size());
  for (const auto& [name, t] : params.entries()) {
    const auto* g = grads.find(t);
    out.push_back(g ? *g : std::vector<double>(t.size(), 0.0));
  }
  return out;
}

std::vector<std::vector<double>> reduce_gradients(const std::vector<std::vector<std::vector<double>>>& per_sample,
                                                  double factor) {
  std::vector<std::vector<double>> total = per_sample.at(0);
  for (std::size_t s = 1; s < per_sample.size(); ++s)
    for (std::size_t p = 0; p < total.size(); ++p)
      for (std::size_t i = 0; i < total[p].size(); ++i) total[p][i] += per_sample[s][p][i];
  for (auto& buf : total)
    for (auto& v : buf) v *= factor;
  return total;
}

std::vector<int> epoch_order(int count, std::uint64_t seed, int epoch) {
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(mix_seed(seed, 0xE90C), static_cast<std::uint64_t>(epoch));
  for (int i = count - 1; i > 0; --i) std::swap(order[i], order[uniform_int(rng, 0, i)]);
  return order;
}

TrainResult train_cvae(FallCVAE& model, const std::vector<MotionSequence>& data, const TrainConfig& config,
                       const std::function<void(const StepRecord&)>& on_step) {
  if (data.empty()) throw Error(Errc::InsufficientData, "training set is empty");
  if (config.epochs < 1 || config.batch_size < 1)
    throw Error(Errc::InvalidConfig, "epochs and batch_size must be positive");
  for (const auto& seq : data) seq.validate();

  Adam adam(model.parameters(), config.adam);
  TrainResult result;
  const int n = static_cast<int>(data.size());
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(n, config.seed, epoch);
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int batch = std::min(config.batch_size, n - start);
      ++step;
      std::vector<std::vector<std::vector<double>>> grads(static_cast<std::size_t>(batch));
      std::vector<LossTerms> terms(static_cast<std::size_t>(batch));
      const std::uint64_t step_seed = mix_seed(config.seed, static_cast<std::uint64_t>(step));
      ParallelErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
      for (int b = 0; b < batch; ++b) {
        errors.capture([&] {
          const auto& seq = data[order[start + b]];
          Rng rng = make_rng(step_seed, static_cast<std::uint64_t>(b));
          const ForwardResult fwd = model.forward_train(seq, rng);
          terms[b] = model.loss(fwd, seq);
          grads[b] = gradient_buffers(model.parameters(), ad::backward(terms[b].total));
        });
      }
      errors.rethrow();
      adam.step(model.parameters(), reduce_gradients(grads, 1.0 / batch));

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      for (const auto& t : terms) {
        rec.total += t.total_value / batch;
        rec.param += t.param / batch;
        rec.kl += t.kl / batch;
        rec.vertex += t.vertex / batch;
        rec.init += t.init / batch;
      }
      result.steps.push_back(rec);
      epoch_sum += rec.total;
      ++epoch_steps;
      if (on_step) on_step(rec);
    }
    result.epoch_total.push_back(epoch_sum / epoch_steps);
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "step,total,l_param,l_kl,l_vertex,l_init\n";
  for (const auto& s : steps)
    out << s.step << ',' << s.total << ',' << s.param << ',' << s.kl << ',' << s.vertex << ',' << s.init << '\n';
}

}  // namespace fallgen

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

#include <map>
#include <string>
#include <vector>

#include "fallgen/autodiff.hpp"
#include "fallgen/rng.hpp"

namespace fallgen::nn {

using ad::Shape;
using ad::Tensor;

enum class Init { Zeros, Ones, XavierUniform, StandardNormal };

/// Named parameters in registration order. The order is part of the
/// checkpoint layout and of the gradient reduction order.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape, Init init, Rng& rng);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const Tensor& get(const std::string& name) const;  // throws InvalidConfig
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int dim, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct MultiHeadAttention {
  Linear query, key, value, output;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, int dim, int heads, Rng& rng);
  /// Rows of `queries` attend over rows of `memory`.
  Tensor operator()(const Tensor& queries, const Tensor& memory) const;
};

struct FeedForward {
  Linear in, out;

  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const;  // out(gelu(in(x)))
};

/// Post-norm transformer encoder layer.
struct EncoderLayer {
  MultiHeadAttention attention;
  LayerNorm norm1, norm2;
  FeedForward ff;

  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Post-norm transformer decoder layer: self-attention, cross-attention to
/// `memory`, feed-forward.
struct DecoderLayer {
  MultiHeadAttention self_attention, cross_attention;
  LayerNorm norm1, norm2, norm3;
  FeedForward ff;

  DecoderLayer() = default;
  DecoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& memory) const;
};

/// Sinusoidal positions [0, count) x dim, constant.
Tensor positional_encoding(int count, int dim);

}  // namespace fallgen::nn

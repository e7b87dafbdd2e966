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

#include "fallgen/nn.hpp"

#include <cmath>

#include "fallgen/error.hpp"

namespace fallgen::nn {

Tensor ParameterStore::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (index_.count(name)) throw Error(Errc::InvalidConfig, "duplicate parameter " + name);
  std::vector<double> values(shape.size(), 0.0);
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::XavierUniform: {
      const double limit = std::sqrt(6.0 / (shape.rows + shape.cols));
      for (auto& v : values) v = uniform(rng, -limit, limit);
      break;
    }
    case Init::StandardNormal:
      for (auto& v : values) v = standard_normal(rng);
      break;
  }
  Tensor t = Tensor::parameter(shape, std::move(values));
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, t);
  return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(Errc::InvalidConfig, "no parameter named " + name);
  return entries_[it->second].second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng)
    : weight(store.add(name + ".weight", {in, out}, Init::XavierUniform, rng)),
      bias(store.add(name + ".bias", {1, out}, Init::Zeros, rng)) {}

Tensor Linear::operator()(const Tensor& x) const { return ad::add(ad::matmul(x, weight), bias); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int dim, Rng& rng)
    : gamma(store.add(name + ".gamma", {1, dim}, Init::Ones, rng)),
      beta(store.add(name + ".beta", {1, dim}, Init::Zeros, rng)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return ad::layer_norm(x, gamma, beta); }

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, int dim, int heads_,
                                       Rng& rng)
    : query(store, name + ".query", dim, dim, rng),
      key(store, name + ".key", dim, dim, rng),
      value(store, name + ".value", dim, dim, rng),
      output(store, name + ".output", dim, dim, rng),
      heads(heads_) {}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& memory) const {
  const Tensor q = query(queries);
  const Tensor k = key(memory);
  const Tensor v = value(memory);
  const int dim = q.cols();
  const int head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  if (heads == 1) return output(ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), scale)), v));
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = ad::slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = ad::slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = ad::slice_cols(v, h * head_dim, head_dim);
    parts.push_back(ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale)), vh));
  }
  return output(ad::concat_cols(parts));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden, Rng& rng)
    : in(store, name + ".in", dim, hidden, rng), out(store, name + ".out", hidden, dim, rng) {}

Tensor FeedForward::operator()(const Tensor& x) const { return out(ad::gelu(in(x))); }

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden, Rng& rng)
    : attention(store, name + ".attention", dim, heads, rng),
      norm1(store, name + ".norm1", dim, rng),
      norm2(store, name + ".norm2", dim, rng),
      ff(store, name + ".ff", dim, hidden, rng) {}

Tensor EncoderLayer::operator()(const Tensor& x) const {
  const Tensor h = norm1(ad::add(x, attention(x, x)));
  return norm2(ad::add(h, ff(h)));
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden, Rng& rng)
    : self_attention(store, name + ".self_attention", dim, heads, rng),
      cross_attention(store, name + ".cross_attention", dim, heads, rng),
      norm1(store, name + ".norm1", dim, rng),
      norm2(store, name + ".norm2", dim, rng),
      norm3(store, name + ".norm3", dim, rng),
      ff(store, name + ".ff", dim, hidden, rng) {}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory) const {
  const Tensor h1 = norm1(ad::add(x, self_attention(x, x)));
  const Tensor h2 = norm2(ad::add(h1, cross_attention(h1, memory)));
  return norm3(ad::add(h2, ff(h2)));
}

Tensor positional_encoding(int count, int dim) {
  std::vector<double> pe(static_cast<std::size_t>(count) * dim);
  for (int pos = 0; pos < count; ++pos)
    for (int i = 0; i < dim; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / dim);
      pe[static_cast<std::size_t>(pos) * dim + i] = std::sin(angle);
      if (i + 1 < dim) pe[static_cast<std::size_t>(pos) * dim + i + 1] = std::cos(angle);
    }
  return Tensor::constant({count, dim}, std::move(pe));
}

}  // namespace fallgen::nn

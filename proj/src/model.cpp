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

#include "fallgen/model.hpp"

#include <cmath>

#include "fallgen/error.hpp"

namespace fallgen {

using ad::Tensor;

std::string_view combine_mode_name(CombineMode mode) {
  return mode == CombineMode::Addition ? "addition" : "concatenation";
}

CombineMode parse_combine_mode(std::string_view name) {
  if (name == "addition") return CombineMode::Addition;
  if (name == "concatenation") return CombineMode::Concatenation;
  throw Error(Errc::InvalidConfig,
              "combine_mode must be one of addition, concatenation (got \"" + std::string(name) + "\")");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::InvalidConfig, what);
  };
  require(latent_dim > 0, "latent_dim must be positive");
  require(num_layers > 0, "num_layers must be positive");
  require(num_heads > 0 && latent_dim % num_heads == 0, "latent_dim must be divisible by num_heads");
  require(ff_dim > 0, "ff_dim must be positive");
  require(max_frames > 0, "max_frames must be positive");
  require(weights.param >= 0 && weights.kl >= 0 && weights.vertex >= 0 && weights.init >= 0,
          "loss weights must be non-negative");
}

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json doc;
  doc["latent_dim"] = c.latent_dim;
  doc["num_layers"] = c.num_layers;
  doc["num_heads"] = c.num_heads;
  doc["ff_dim"] = c.ff_dim;
  doc["max_frames"] = c.max_frames;
  doc["pose_dim"] = kPoseDim;
  doc["combine_mode"] = combine_mode_name(c.combine_mode);
  doc["loss_weights"] = {
      {"param", c.weights.param}, {"kl", c.weights.kl}, {"vertex", c.weights.vertex}, {"init", c.weights.init}};
  return doc;
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  try {
    ModelConfig c;
    c.latent_dim = doc.at("latent_dim").get<int>();
    c.num_layers = doc.at("num_layers").get<int>();
    c.num_heads = doc.at("num_heads").get<int>();
    c.ff_dim = doc.at("ff_dim").get<int>();
    c.max_frames = doc.at("max_frames").get<int>();
    c.combine_mode = parse_combine_mode(doc.at("combine_mode").get<std::string>());
    const auto& w = doc.at("loss_weights");
    c.weights = {w.at("param").get<double>(), w.at("kl").get<double>(), w.at("vertex").get<double>(),
                 w.at("init").get<double>()};
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("model config: ") + e.what());
  }
}

PhaseLabel phase_label(const AttributeConfig& attrs, Phase phase) {
  switch (phase) {
    case Phase::Impact:
      return {static_cast<int>(attrs.impact_location), static_cast<int>(attrs.impact_quality)};
    case Phase::Glitch:
      return {static_cast<int>(attrs.glitch_quality), -1};
    case Phase::Fall:
      return {static_cast<int>(attrs.fall_quality), -1};
  }
  return {};
}

Tensor frames_tensor(const MotionSequence& seq, int first, int count) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(count) * kPoseDim);
  for (int f = first; f < first + count; ++f) {
    const auto flat = seq.frames.at(static_cast<std::size_t>(f)).flatten();
    values.insert(values.end(), flat.begin(), flat.end());
  }
  return Tensor::constant({count, kPoseDim}, std::move(values));
}

namespace {

int primary_vocab(Phase phase) {
  switch (phase) {
    case Phase::Impact: return static_cast<int>(vocabulary_size(AttributeSlot::ImpactLocation));
    case Phase::Glitch: return static_cast<int>(vocabulary_size(AttributeSlot::GlitchQuality));
    case Phase::Fall: return static_cast<int>(vocabulary_size(AttributeSlot::FallQuality));
  }
  return 0;
}

const int kImpactQualityVocab = static_cast<int>(vocabulary_size(AttributeSlot::ImpactQuality));

Tensor pose_row(const Pose& pose) {
  const auto flat = pose.flatten();
  return Tensor::constant({1, kPoseDim}, std::vector<double>(flat.begin(), flat.end()));
}

}  // namespace

FallCVAE::FallCVAE(const ModelConfig& config, std::uint64_t seed)
    : config_(config), skeleton_(&skeleton_preset(BodyModel::Male)) {
  config_.validate();
  cloud_ = make_witness_cloud(*skeleton_);
  Rng rng = make_rng(seed, 0xC0DE);
  const int d = config_.latent_dim;
  for (Phase phase : kPhases) {
    const std::string p = std::string(phase_name(phase));
    auto& enc = encoders_[static_cast<int>(phase)];
    const std::string e = "encoder." + p;
    enc.input = nn::Linear(params_, e + ".input", kPoseDim, d, rng);
    enc.mu_token = params_.add(e + ".mu_token", {1, d}, nn::Init::StandardNormal, rng);
    enc.sigma_token = params_.add(e + ".sigma_token", {1, d}, nn::Init::StandardNormal, rng);
    enc.label_tokens = params_.add(e + ".label_tokens", {primary_vocab(phase), d}, nn::Init::StandardNormal, rng);
    if (phase == Phase::Impact)
      enc.secondary_tokens =
          params_.add(e + ".quality_tokens", {kImpactQualityVocab, d}, nn::Init::StandardNormal, rng);
    for (int l = 0; l < config_.num_layers; ++l)
      enc.layers.emplace_back(params_, e + ".layer" + std::to_string(l), d, config_.num_heads, config_.ff_dim, rng);
  }
  for (Phase phase : kPhases) {
    const std::string p = std::string(phase_name(phase));
    auto& dec = decoders_[static_cast<int>(phase)];
    const std::string e = "decoder." + p;
    dec.bias_tokens = params_.add(e + ".bias_tokens", {primary_vocab(phase), d}, nn::Init::StandardNormal, rng);
    if (phase == Phase::Impact)
      dec.secondary_bias_tokens =
          params_.add(e + ".quality_bias_tokens", {kImpactQualityVocab, d}, nn::Init::StandardNormal, rng);
    dec.initial_pose = nn::Linear(params_, e + ".initial_pose", kPoseDim, d, rng);
    if (config_.combine_mode == CombineMode::Concatenation)
      dec.combine = nn::Linear(params_, e + ".combine", 2 * d, d, rng);
    for (int l = 0; l < config_.num_layers; ++l)
      dec.layers.emplace_back(params_, e + ".layer" + std::to_string(l), d, config_.num_heads, config_.ff_dim, rng);
    dec.output = nn::Linear(params_, e + ".output", d, kPoseDim, rng);
  }
}

Tensor FallCVAE::label_token(const Tensor& primary, const Tensor& secondary, Phase phase,
                             const PhaseLabel& label) const {
  const std::string field = phase == Phase::Impact ? "impact_location"
                            : phase == Phase::Glitch ? "glitch_quality"
                                                     : "fall_quality";
  if (label.primary < 0 || label.primary >= primary.rows())
    throw Error(Errc::UnknownLabel, field + ": index " + std::to_string(label.primary) + " outside vocabulary");
  const int idx[1] = {label.primary};
  Tensor token = ad::embedding_lookup(primary, idx);
  if (phase == Phase::Impact) {
    if (label.secondary < 0 || label.secondary >= secondary.rows())
      throw Error(Errc::UnknownLabel, "impact_quality: index " + std::to_string(label.secondary) + " outside vocabulary");
    const int q[1] = {label.secondary};
    token = ad::add(token, ad::embedding_lookup(secondary, q));
  }
  return token;
}

LatentDistribution FallCVAE::encode(Phase phase, const Tensor& poses, const PhaseLabel& label) const {
  if (poses.cols() != kPoseDim)
    throw Error(Errc::ShapeMismatch, "encode: poses " + poses.shape().str() + " vs [frames, 153]");
  if (poses.rows() < 1 || poses.rows() > config_.max_frames)
    throw Error(Errc::FrameCountOutOfRange, "encode: " + std::to_string(poses.rows()) + " frames, allowed 1.." +
                                                std::to_string(config_.max_frames));
  const auto& enc = encoders_[static_cast<int>(phase)];
  const Tensor label_tok = label_token(enc.label_tokens, enc.secondary_tokens, phase, label);
  const Tensor tokens = ad::concat_rows({ad::add(enc.mu_token, label_tok), ad::add(enc.sigma_token, label_tok)});
  Tensor x = ad::concat_rows({tokens, enc.input(poses)});
  x = ad::add(x, nn::positional_encoding(x.rows(), config_.latent_dim));
  for (const auto& layer : enc.layers) x = layer(x);
  return {ad::slice_rows(x, 0, 1), ad::slice_rows(x, 1, 1)};
}

Tensor FallCVAE::reparameterize(const LatentDistribution& dist, Rng& rng) const {
  std::vector<double> eps(dist.mu.size());
  for (auto& e : eps) e = standard_normal(rng);
  const Tensor sigma = ad::exp(ad::scale(dist.log_var, 0.5));
  return ad::add(dist.mu, ad::mul(sigma, Tensor::constant(dist.mu.shape(), std::move(eps))));
}

Tensor FallCVAE::decode(Phase phase, const Tensor& z, const PhaseLabel& label, const Tensor& initial_pose,
                        int frame_count) const {
  if (frame_count < 1 || frame_count > config_.max_frames)
    throw Error(Errc::FrameCountOutOfRange, "decode: " + std::to_string(frame_count) + " frames, allowed 1.." +
                                                std::to_string(config_.max_frames));
  if (z.shape() != ad::Shape{1, config_.latent_dim})
    throw Error(Errc::ShapeMismatch, "decode: z " + z.shape().str() + " vs [1, " + std::to_string(config_.latent_dim) + "]");
  if (initial_pose.shape() != ad::Shape{1, kPoseDim})
    throw Error(Errc::ShapeMismatch, "decode: initial pose " + initial_pose.shape().str() + " vs [1, 153]");
  const auto& dec = decoders_[static_cast<int>(phase)];
  const Tensor shifted = ad::add(z, label_token(dec.bias_tokens, dec.secondary_bias_tokens, phase, label));
  const Tensor guide = dec.initial_pose(initial_pose);
  const Tensor memory = config_.combine_mode == CombineMode::Addition
                            ? ad::add(shifted, guide)
                            : dec.combine(ad::concat_cols({shifted, guide}));
  Tensor x = nn::positional_encoding(frame_count, config_.latent_dim);
  for (const auto& layer : dec.layers) x = layer(x, memory);
  return dec.output(x);
}

ForwardResult FallCVAE::forward_train(const MotionSequence& seq, Rng& rng) const {
  seq.validate();
  ForwardResult out;
  for (Phase phase : kPhases) {
    const auto [first, last] = seq.phase_range(phase);
    const int i = static_cast<int>(phase);
    const PhaseLabel label = phase_label(seq.attributes, phase);
    out.dists[i] = encode(phase, frames_tensor(seq, first, last - first), label);
    const Tensor z = reparameterize(out.dists[i], rng);
    const int guide = first == 0 ? 0 : first - 1;
    out.reconstruction[i] = decode(phase, z, label, frames_tensor(seq, guide, 1), last - first);
  }
  return out;
}

Tensor kl_divergence(const LatentDistribution& dist) {
  const Tensor inner =
      ad::sub(ad::sub(ad::add_scalar(dist.log_var, 1.0), ad::square(dist.mu)), ad::exp(dist.log_var));
  return ad::scale(ad::sum(inner), -0.5);
}

LossTerms FallCVAE::loss(const ForwardResult& result, const MotionSequence& truth) const {
  std::vector<Tensor> recon_parts(result.reconstruction.begin(), result.reconstruction.end());
  const Tensor recon = ad::concat_rows(recon_parts);
  const Tensor target = frames_tensor(truth, 0, truth.frame_count());
  if (recon.shape() != target.shape())
    throw Error(Errc::ShapeMismatch, "loss: reconstruction " + recon.shape().str() + " vs truth " + target.shape().str());

  Tensor target_points;
  {
    ad::NoGradGuard guard;
    target_points = ad::witness_points(target, *skeleton_, cloud_);
  }
  const Tensor recon_points = ad::witness_points(recon, *skeleton_, cloud_);

  const Tensor l_param = ad::mse(recon, target);
  Tensor l_kl = kl_divergence(result.dists[0]);
  for (int i = 1; i < 3; ++i) l_kl = ad::add(l_kl, kl_divergence(result.dists[i]));
  const Tensor l_vertex = ad::mse(recon_points, target_points);

  std::vector<Tensor> first_recon, first_truth, first_recon_pts, first_truth_pts;
  int offset = 0;
  for (int i = 0; i < 3; ++i) {
    first_recon.push_back(ad::slice_rows(recon, offset, 1));
    first_truth.push_back(ad::slice_rows(target, offset, 1));
    first_recon_pts.push_back(ad::slice_rows(recon_points, offset, 1));
    first_truth_pts.push_back(ad::slice_rows(target_points, offset, 1));
    offset += result.reconstruction[i].rows();
  }
  const Tensor l_init = ad::add(ad::mse(ad::concat_rows(first_recon), ad::concat_rows(first_truth)),
                                ad::mse(ad::concat_rows(first_recon_pts), ad::concat_rows(first_truth_pts)));

  const auto& w = config_.weights;
  LossTerms terms;
  terms.total = ad::add(ad::add(ad::scale(l_param, w.param), ad::scale(l_kl, w.kl)),
                        ad::add(ad::scale(l_vertex, w.vertex), ad::scale(l_init, w.init)));
  terms.param = l_param.item();
  terms.kl = l_kl.item();
  terms.vertex = l_vertex.item();
  terms.init = l_init.item();
  terms.total_value = terms.total.item();
  return terms;
}

MotionSequence FallCVAE::generate(const AttributeConfig& attrs, const PhaseDurations& durations, Rng& rng,
                                  const Pose& start_pose, GenerationTrace* trace, double fps) const {
  for (Phase phase : kPhases) {
    const int n = durations.of(phase);
    if (n < 1 || n > config_.max_frames)
      throw Error(Errc::FrameCountOutOfRange, std::string(phase_name(phase)) + " duration " + std::to_string(n) +
                                                  " outside 1.." + std::to_string(config_.max_frames));
  }
  ad::NoGradGuard guard;
  MotionSequence seq;
  seq.fps = fps;
  seq.attributes = attrs;
  seq.boundaries = {durations.impact, durations.impact + durations.glitch};
  seq.frames.reserve(static_cast<std::size_t>(durations.total()));

  Pose guide = start_pose;
  double dx = 0.0, dz = 0.0;
  for (Phase phase : kPhases) {
    if (trace) trace->guidance[static_cast<int>(phase)] = guide;
    std::vector<double> eps(static_cast<std::size_t>(config_.latent_dim));
    for (auto& e : eps) e = standard_normal(rng);
    const Tensor z = Tensor::constant({1, config_.latent_dim}, std::move(eps));
    const int n = durations.of(phase);
    const Tensor out = decode(phase, z, phase_label(attrs, phase), pose_row(guide), n);
    for (int f = 0; f < n; ++f) {
      Pose pose = Pose::unflatten(out.data().subspan(static_cast<std::size_t>(f) * kPoseDim, kPoseDim));
      pose.root_rotation = reorthonormalize(pose.root_rotation);
      for (auto& r : pose.joint_rotations) r = reorthonormalize(r);
      if (seq.frames.empty()) {
        dx = pose.root_translation.x();
        dz = pose.root_translation.z();
      }
      pose.root_translation.x() -= dx;
      pose.root_translation.z() -= dz;
      seq.frames.push_back(pose);
    }
    guide = seq.frames.back();
  }
  seq.validate();
  return seq;
}

}  // namespace fallgen

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

#include "fallgen/metrics.hpp"
#include "fallgen/parallel.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "fallgen/augment.hpp"
#include "fallgen/checkpoint.hpp"
#include "fallgen/error.hpp"
#include "fallgen/kernels.hpp"

namespace fallgen {

using ad::Tensor;

namespace {
constexpr int kChannelsIn = 6;
constexpr double kVelocityScale = 0.1;
}  // namespace

void RecognizerConfig::validate() const {
  if (blocks.empty()) throw Error(Errc::InvalidConfig, "recognizer needs at least one block");
  for (const auto& b : blocks)
    if (b.channels < 1 || b.stride < 1) throw Error(Errc::InvalidConfig, "recognizer block channels/stride must be positive");
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0)
    throw Error(Errc::InvalidConfig, "temporal_kernel must be a positive odd number");
  if (embedding_dim < 1) throw Error(Errc::InvalidConfig, "embedding_dim must be positive");
}

bool RecognizerConfig::operator==(const RecognizerConfig& o) const {
  if (blocks.size() != o.blocks.size() || temporal_kernel != o.temporal_kernel || embedding_dim != o.embedding_dim)
    return false;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].channels != o.blocks[i].channels || blocks[i].stride != o.blocks[i].stride) return false;
  return true;
}

nlohmann::ordered_json recognizer_config_to_json(const RecognizerConfig& c) {
  nlohmann::ordered_json doc;
  auto& blocks = doc["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : c.blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  doc["temporal_kernel"] = c.temporal_kernel;
  doc["embedding_dim"] = c.embedding_dim;
  return doc;
}

RecognizerConfig recognizer_config_from_json(const nlohmann::json& doc) {
  try {
    RecognizerConfig c;
    c.blocks.clear();
    for (const auto& b : doc.at("blocks")) c.blocks.push_back({b.at("channels").get<int>(), b.at("stride").get<int>()});
    c.temporal_kernel = doc.at("temporal_kernel").get<int>();
    c.embedding_dim = doc.at("embedding_dim").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("recognizer config: ") + e.what());
  }
}

std::array<int, 3> head_targets(const AttributeConfig& attrs) {
  return {impact_class(attrs), static_cast<int>(attrs.glitch_quality), static_cast<int>(attrs.fall_quality)};
}

Tensor motion_features(const MotionSequence& seq) {
  if (seq.frames.empty()) throw Error(Errc::EmptySequence, "no frames to featurize");
  const double heading = heading_of(rot6d_to_matrix(seq.frames.front().root_rotation));
  const MotionSequence facing = rotate_yaw(seq, -heading);
  const auto& sk = skeleton_preset(BodyModel::Male);
  const int frames = facing.frame_count();
  const int width = kNumJoints * kChannelsIn;
  std::vector<double> out(static_cast<std::size_t>(frames) * width, 0.0);
  std::vector<Vec3> prev;
  for (int f = 0; f < frames; ++f) {
    const auto pos = forward_kinematics(sk, facing.frames[f]);
    double* row = out.data() + static_cast<std::ptrdiff_t>(f) * width;
    for (int j = 0; j < kNumJoints; ++j) {
      for (int c = 0; c < 3; ++c) row[j * kChannelsIn + c] = pos[j][c];
      if (f > 0)
        for (int c = 0; c < 3; ++c) row[j * kChannelsIn + 3 + c] = (pos[j][c] - prev[j][c]) * seq.fps * kVelocityScale;
    }
    prev = pos;
  }
  return Tensor::constant({frames, width}, std::move(out));
}

std::array<std::vector<double>, 2> skeleton_partitions(const Skeleton& skeleton) {
  const int n = skeleton.num_joints();
  std::vector<double> identity(static_cast<std::size_t>(n) * n, 0.0), hop(identity);
  std::vector<int> degree(static_cast<std::size_t>(n), 0);
  for (int j = 0; j < n; ++j) {
    identity[static_cast<std::size_t>(j) * n + j] = 1.0;
    if (skeleton.parent_index[j] >= 0) {
      ++degree[j];
      ++degree[skeleton.parent_index[j]];
    }
  }
  for (int j = 0; j < n; ++j) {
    const int p = skeleton.parent_index[j];
    if (p < 0) continue;
    const double w = 1.0 / std::sqrt(static_cast<double>(degree[j]) * degree[p]);
    hop[static_cast<std::size_t>(j) * n + p] = w;
    hop[static_cast<std::size_t>(p) * n + j] = w;
  }
  return {identity, hop};
}

Recognizer::Recognizer(const RecognizerConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  partitions_ = skeleton_partitions(skeleton_preset(BodyModel::Male));
  Rng rng = make_rng(seed, 0x5EC0);
  int in = kChannelsIn;
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    const auto& spec = config_.blocks[i];
    const std::string name = "gcn" + std::to_string(i);
    Block b;
    b.in_channels = in;
    b.out_channels = spec.channels;
    b.stride = spec.stride;
    b.spatial[0] = params_.add(name + ".spatial0", {in, spec.channels}, nn::Init::XavierUniform, rng);
    b.spatial[1] = params_.add(name + ".spatial1", {in, spec.channels}, nn::Init::XavierUniform, rng);
    b.spatial_bias = params_.add(name + ".spatial_bias", {1, spec.channels}, nn::Init::Zeros, rng);
    b.temporal = nn::Linear(params_, name + ".temporal", config_.temporal_kernel * spec.channels, spec.channels, rng);
    b.project_residual = in != spec.channels || spec.stride != 1;
    if (b.project_residual) b.residual = nn::Linear(params_, name + ".residual", in, spec.channels, rng);
    blocks_.push_back(std::move(b));
    in = spec.channels;
  }
  embedding_ = nn::Linear(params_, "embedding", 3 * in, config_.embedding_dim, rng);
  const char* names[3] = {"head.impact", "head.glitch", "head.fall"};
  for (int h = 0; h < 3; ++h) heads_[h] = nn::Linear(params_, names[h], config_.embedding_dim, kHeadClasses[h], rng);
}

Tensor Recognizer::block_forward(const Block& b, const Tensor& x) const {
  const int frames = x.rows();
  const ad::Shape flat_in{frames * kNumJoints, b.in_channels};
  Tensor s = ad::add(
      ad::add(ad::matmul(ad::reshape(ad::graph_mix(x, partitions_[0], kNumJoints, b.in_channels), flat_in), b.spatial[0]),
              ad::matmul(ad::reshape(ad::graph_mix(x, partitions_[1], kNumJoints, b.in_channels), flat_in), b.spatial[1])),
      b.spatial_bias);
  const Tensor h = ad::reshape(ad::relu(s), {frames, kNumJoints * b.out_channels});
  const Tensor t = b.temporal(ad::temporal_unfold(h, kNumJoints, b.out_channels, config_.temporal_kernel, b.stride));
  const int out_frames = t.rows() / kNumJoints;
  const Tensor r = b.project_residual ? b.residual(ad::temporal_unfold(x, kNumJoints, b.in_channels, 1, b.stride))
                                      : ad::reshape(x, flat_in);
  return ad::reshape(ad::relu(ad::add(t, r)), {out_frames, kNumJoints * b.out_channels});
}

Recognizer::Output Recognizer::forward(const MotionSequence& seq) const {
  Tensor x = motion_features(seq);
  int total_stride = 1;
  for (const auto& b : blocks_) {
    x = block_forward(b, x);
    total_stride *= b.stride;
  }
  const int frames = x.rows();
  const int channels = blocks_.back().out_channels;
  std::vector<Tensor> pooled;
  for (Phase phase : kPhases) {
    const auto [first, last] = seq.phase_range(phase);
    const int s = std::min(first / total_stride, frames - 1);
    const int e = std::clamp((last + total_stride - 1) / total_stride, s + 1, frames);
    const Tensor over_time = ad::mean(ad::slice_rows(x, s, e - s), ad::Axis::Rows);
    pooled.push_back(ad::mean(ad::reshape(over_time, {kNumJoints, channels}), ad::Axis::Rows));
  }
  Output out;
  out.embedding = embedding_(ad::concat_cols(pooled));
  for (int h = 0; h < 3; ++h) out.logits[h] = heads_[h](out.embedding);
  return out;
}

std::array<std::vector<double>, 3> Recognizer::probabilities(const MotionSequence& seq) const {
  ad::NoGradGuard guard;
  const Output out = forward(seq);
  std::array<std::vector<double>, 3> probs;
  for (int h = 0; h < 3; ++h) {
    const Tensor p = ad::softmax_rows(out.logits[h]);
    probs[h].assign(p.data().begin(), p.data().end());
  }
  return probs;
}

std::array<int, 3> Recognizer::predict(const MotionSequence& seq) const {
  ad::NoGradGuard guard;
  const Output out = forward(seq);
  std::array<int, 3> pred{};
  for (int h = 0; h < 3; ++h) {
    const auto v = out.logits[h].data();
    pred[h] = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }
  return pred;
}

std::vector<double> Recognizer::embed(const MotionSequence& seq) const {
  ad::NoGradGuard guard;
  const Output out = forward(seq);
  return {out.embedding.data().begin(), out.embedding.data().end()};
}

namespace {

Tensor summed_cross_entropy(const Recognizer::Output& out, const AttributeConfig& attrs) {
  const auto targets = head_targets(attrs);
  Tensor loss;
  for (int h = 0; h < 3; ++h) {
    const int t[1] = {targets[h]};
    const Tensor ce = ad::cross_entropy(out.logits[h], t);
    loss = h == 0 ? ce : ad::add(loss, ce);
  }
  return loss;
}

HeadAccuracy finish(const std::array<int, 3>& hits, std::size_t n) {
  HeadAccuracy a;
  a.impact = static_cast<double>(hits[0]) / n;
  a.glitch = static_cast<double>(hits[1]) / n;
  a.fall = static_cast<double>(hits[2]) / n;
  a.mean = (a.impact + a.glitch + a.fall) / 3.0;
  return a;
}

nlohmann::ordered_json accuracy_json(const HeadAccuracy& a) {
  return {{"impact", a.impact}, {"glitch", a.glitch}, {"fall", a.fall}, {"mean", a.mean}};
}

}  // namespace

double recognizer_loss(const Recognizer& model, const std::vector<MotionSequence>& data) {
  if (data.empty()) throw Error(Errc::EmptyInput, "no sequences to score");
  std::vector<double> losses(data.size());
  ad::NoGradGuard guard;
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < data.size(); ++i) {
    errors.capture([&] {
      ad::NoGradGuard inner;
      losses[i] = summed_cross_entropy(model.forward(data[i]), data[i].attributes).item();
    });
  }
  errors.rethrow();
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(data.size());
}

HeadAccuracy recognition_accuracy(const Recognizer& model,
                                  const std::vector<std::pair<MotionSequence, AttributeConfig>>& labeled) {
  if (labeled.empty()) throw Error(Errc::EmptyInput, "recognition accuracy of an empty list");
  std::vector<std::array<int, 3>> pred(labeled.size());
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < labeled.size(); ++i) errors.capture([&] { pred[i] = model.predict(labeled[i].first); });
  errors.rethrow();
  std::array<int, 3> hits{};
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto t = head_targets(labeled[i].second);
    for (int h = 0; h < 3; ++h) hits[h] += pred[i][h] == t[h];
  }
  return finish(hits, labeled.size());
}

HeadAccuracy recognition_accuracy(const Recognizer& model, const std::vector<MotionSequence>& data) {
  std::vector<std::pair<MotionSequence, AttributeConfig>> labeled;
  labeled.reserve(data.size());
  for (const auto& s : data) labeled.emplace_back(s, s.attributes);
  return recognition_accuracy(model, labeled);
}

RecognizerReport train_recognizer(Recognizer& model, const std::vector<MotionSequence>& train,
                                  const std::vector<MotionSequence>& heldout, const RecognizerTrainConfig& config) {
  if (train.size() < 2) throw Error(Errc::InsufficientData, "recognizer needs at least two training sequences");
  const char* head_names[3] = {"impact", "glitch", "fall"};
  for (int h = 0; h < 3; ++h) {
    std::vector<int> counts(static_cast<std::size_t>(kHeadClasses[h]), 0);
    for (const auto& s : train) ++counts[head_targets(s.attributes)[h]];
    int present = 0;
    for (int c = 0; c < kHeadClasses[h]; ++c) {
      if (counts[c] == 0) continue;
      ++present;
      if (counts[c] < 2)
        throw Error(Errc::InsufficientData, std::string(head_names[h]) + " class " + std::to_string(c) +
                                                " has a single training example; need at least 2");
    }
    if (present < 2)
      throw Error(Errc::InsufficientData, std::string(head_names[h]) + " head sees fewer than two classes");
  }
  if (config.epochs < 1 || config.batch_size < 1)
    throw Error(Errc::InvalidConfig, "epochs and batch_size must be positive");

  RecognizerReport report;
  report.initial_loss = recognizer_loss(model, train);
  Adam adam(model.parameters(), config.adam);
  const int n = static_cast<int>(train.size());
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(n, config.seed, epoch);
    for (int start = 0; start < n; start += config.batch_size) {
      const int batch = std::min(config.batch_size, n - start);
      ++step;
      std::vector<std::vector<std::vector<double>>> grads(static_cast<std::size_t>(batch));
      ParallelErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
      for (int b = 0; b < batch; ++b) {
        errors.capture([&] {
          const auto& seq = train[order[start + b]];
          grads[b] = gradient_buffers(model.parameters(),
                                      ad::backward(summed_cross_entropy(model.forward(seq), seq.attributes)));
        });
      }
      errors.rethrow();
      adam.step(model.parameters(), reduce_gradients(grads, 1.0 / batch));
    }
  }
  report.final_loss = recognizer_loss(model, train);
  report.train_accuracy = recognition_accuracy(model, train);
  if (!heldout.empty()) report.heldout_accuracy = recognition_accuracy(model, heldout);
  return report;
}

void save_recognizer(const std::filesystem::path& path, const Recognizer& model, const RecognizerReport& report,
                     std::uint64_t seed) {
  CheckpointHeader h;
  h.kind = "recognizer";
  h.config = recognizer_config_to_json(model.config());
  h.step = 0;
  h.rng_state = rng_state_string(Rng(seed));
  h.extra = {{"initial_loss", report.initial_loss},
             {"final_loss", report.final_loss},
             {"train_accuracy", accuracy_json(report.train_accuracy)},
             {"heldout_accuracy", accuracy_json(report.heldout_accuracy)}};
  write_checkpoint(path, h, model.parameters());
}

std::shared_ptr<Recognizer> load_recognizer(const std::filesystem::path& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  if (h.kind != "recognizer")
    throw Error(Errc::InvalidConfig, path.string() + ": expected a recognizer checkpoint, found " + h.kind);
  auto model = std::make_shared<Recognizer>(recognizer_config_from_json(h.config), 0);
  read_checkpoint_parameters(path, model->parameters());
  return model;
}

// ---------------------------------------------------------------------------

EmbeddingSet EmbeddingSet::fit(Matrix embeddings) {
  const auto n = static_cast<int>(embeddings.rows());
  const auto d = static_cast<int>(embeddings.cols());
  if (n < 2) throw Error(Errc::InsufficientData, "need at least two embeddings to fit a Gaussian");
  // Row-major copy for the kernel.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = embeddings;
  EmbeddingSet set;
  set.mean.resize(d);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cov(d, d);
  kernels::parallel::covariance(rows.data(), n, d, set.mean.data(), cov.data());
  set.covariance = cov;
  set.embeddings = std::move(embeddings);
  return set;
}

EmbeddingSet embed_all(const Recognizer& model, const std::vector<MotionSequence>& data) {
  Matrix e(static_cast<Eigen::Index>(data.size()), model.config().embedding_dim);
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < data.size(); ++i) {
    errors.capture([&] {
      const auto v = model.embed(data[i]);
      for (std::size_t c = 0; c < v.size(); ++c) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[c];
    });
  }
  errors.rethrow();
  return EmbeddingSet::fit(std::move(e));
}

namespace {

Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) throw Error(Errc::DegenerateCovariance, "eigendecomposition failed");
  const Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double fid(const Eigen::VectorXd& mu1, const Matrix& cov1, const Eigen::VectorXd& mu2, const Matrix& cov2) {
  const auto d = mu1.size();
  if (mu2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d || cov2.cols() != d)
    throw Error(Errc::ShapeMismatch, "fid: dimension mismatch");
  if (!mu1.allFinite() || !mu2.allFinite() || !cov1.allFinite() || !cov2.allFinite())
    throw Error(Errc::DegenerateCovariance, "fid: non-finite statistics");
  const Matrix eye = Matrix::Identity(d, d);
  const Matrix s1 = 0.5 * (cov1 + cov1.transpose()) + kFidRegularization * eye;
  const Matrix s2 = 0.5 * (cov2 + cov2.transpose()) + kFidRegularization * eye;
  const Matrix root1 = psd_sqrt(s1);
  Matrix cross = root1 * s2 * root1;
  cross = 0.5 * (cross + cross.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cross, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw Error(Errc::DegenerateCovariance, "eigendecomposition failed");
  const double trace_root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * trace_root;
  if (!std::isfinite(value)) throw Error(Errc::DegenerateCovariance, "fid: non-finite result");
  return std::max(value, 0.0);
}

double fid(const EmbeddingSet& real, const EmbeddingSet& gen) {
  return fid(real.mean, real.covariance, gen.mean, gen.covariance);
}

double diversity(const Matrix& embeddings, int num_pairs, Rng& rng) {
  const auto n = static_cast<int>(embeddings.rows());
  if (n < 2) throw Error(Errc::TooFewEmbeddings, "diversity needs at least two embeddings, got " + std::to_string(n));
  if (num_pairs < 1) throw Error(Errc::InvalidConfig, "num_pairs must be positive");
  double total = 0.0;
  for (int s = 0; s < num_pairs; ++s) {
    const int a = uniform_int(rng, 0, n - 1);
    int b = uniform_int(rng, 0, n - 2);
    if (b >= a) ++b;
    total += (embeddings.row(a) - embeddings.row(b)).norm();
  }
  return total / num_pairs;
}

std::string config_hash(const nlohmann::json& config) {
  const std::string text = config.dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

nlohmann::ordered_json eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json doc;
  doc["fid"] = r.fid;
  doc["accuracy"] = accuracy_json(r.accuracy);
  doc["diversity"] = r.diversity;
  doc["n_real"] = r.n_real;
  doc["n_gen"] = r.n_gen;
  doc["config_hash"] = r.config_hash;
  return doc;
}

EvalReport evaluate(const Recognizer& model, const std::vector<MotionSequence>& real,
                    const std::vector<MotionSequence>& generated, const EvalOptions& options) {
  if (real.empty() || generated.empty()) throw Error(Errc::EmptyInput, "evaluation needs real and generated motions");
  const EmbeddingSet r = embed_all(model, real);
  const EmbeddingSet g = embed_all(model, generated);
  EvalReport report;
  report.fid = fid(r, g);
  report.accuracy = recognition_accuracy(model, generated);
  Rng rng = make_rng(options.seed, 0xD1F);
  report.diversity = diversity(g.embeddings, options.diversity_pairs, rng);
  report.n_real = static_cast<int>(real.size());
  report.n_gen = static_cast<int>(generated.size());
  nlohmann::ordered_json cfg;
  cfg["recognizer"] = recognizer_config_to_json(model.config());
  cfg["diversity_pairs"] = options.diversity_pairs;
  cfg["seed"] = options.seed;
  report.config_hash = config_hash(cfg);
  return report;
}

}  // namespace fallgen

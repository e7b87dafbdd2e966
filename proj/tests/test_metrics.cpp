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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "fallgen/augment.hpp"
#include "fallgen/metrics.hpp"
#include "fallgen/synth.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace fallgen;
using namespace fallgen::testing;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

RecognizerConfig tiny_recognizer() {
  RecognizerConfig c;
  c.blocks = {{4, 2}, {6, 1}};
  c.temporal_kernel = 3;
  c.embedding_dim = 8;
  return c;
}

Matrix gaussian_rows(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = standard_normal(rng);
  return m;
}

Matrix random_orthogonal(int d, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix> qr(gaussian_rows(d, d, seed));
  return qr.householderQ();
}

Matrix random_spd(int d, std::uint64_t seed) {
  const Matrix a = gaussian_rows(d, d, seed);
  return a * a.transpose() / d + 0.1 * Matrix::Identity(d, d);
}

// Closed form of the Frechet distance for commuting (diagonal) covariances,
// including the regularizer added to both.
double diagonal_fid(const Eigen::VectorXd& mu1, const Eigen::VectorXd& v1, const Eigen::VectorXd& mu2,
                    const Eigen::VectorXd& v2) {
  double out = (mu1 - mu2).squaredNorm();
  for (Eigen::Index i = 0; i < v1.size(); ++i) {
    const double a = std::sqrt(v1[i] + kFidRegularization), b = std::sqrt(v2[i] + kFidRegularization);
    out += (a - b) * (a - b);
  }
  return out;
}

std::vector<MotionSequence> small_set(int count, std::uint64_t seed) {
  SynthOptions o;
  o.count = count;
  o.seed = seed;
  return synthesize_dataset(o);
}

}  // namespace

TEST_CASE("fid of a set with itself is zero") {
  const EmbeddingSet s = EmbeddingSet::fit(gaussian_rows(300, 8, 1));
  CHECK(fid(s, s) < 1e-6);
}

TEST_CASE("fid closed forms") {
  const int d = 5;
  const Matrix eye = Matrix::Identity(d, d);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d), shifted = mu;
  shifted[2] = 1.0;
  CHECK(std::abs(fid(mu, eye, shifted, eye) - 1.0) < 1e-9);

  Eigen::VectorXd v1(2), v2(2), m1(2), m2(2);
  v1 << 1.0, 4.0;
  v2 << 9.0, 0.25;
  m1 << 0.5, -1.0;
  m2 << 2.0, 3.0;
  const double expected = diagonal_fid(m1, v1, m2, v2);
  CHECK(std::abs(fid(m1, v1.asDiagonal().toDenseMatrix(), m2, v2.asDiagonal().toDenseMatrix()) - expected) < 1e-9);

  // |(1.5, 4)|^2 + (1 - 3)^2 + (2 - 0.5)^2
  CHECK(std::abs(expected - 24.5) < 1e-5);
}

TEST_CASE("fid is symmetric, non-negative and orthogonally invariant") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int d = 6;
    const Matrix s1 = random_spd(d, seed * 3 + 1), s2 = random_spd(d, seed * 3 + 2);
    const Eigen::VectorXd m1 = gaussian_rows(d, 1, seed + 50).col(0), m2 = gaussian_rows(d, 1, seed + 60).col(0);
    const double f = fid(m1, s1, m2, s2);
    CHECK(f >= 0.0);
    CHECK(std::abs(f - fid(m2, s2, m1, s1)) < 1e-9 * std::max(1.0, f));

    const Matrix q = random_orthogonal(d, seed + 100);
    const double rotated = fid(q * m1, q * s1 * q.transpose(), q * m2, q * s2 * q.transpose());
    CHECK(std::abs(rotated - f) < 1e-5);
  }
}

TEST_CASE("fid grows with the mean shift") {
  const Matrix base = gaussian_rows(400, 4, 7);
  const EmbeddingSet a = EmbeddingSet::fit(base);
  double previous = 0.0;
  for (double shift : {0.5, 1.0, 2.0}) {
    Matrix moved = base;
    moved.col(0).array() += shift;
    const double f = fid(a, EmbeddingSet::fit(moved));
    CHECK(std::abs(f - shift * shift) < 1e-6);
    CHECK(f > previous);
    previous = f;
  }
}

TEST_CASE("fid errors") {
  const Matrix eye = Matrix::Identity(3, 3);
  const Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
  Matrix bad = eye;
  bad(1, 1) = std::nan("");
  CHECK_THROWS_CODE(fid(mu, bad, mu, eye), Errc::DegenerateCovariance);
  CHECK_THROWS_CODE(fid(mu, eye, Eigen::VectorXd::Zero(2), eye), Errc::ShapeMismatch);
  CHECK_THROWS_CODE(EmbeddingSet::fit(gaussian_rows(1, 3, 0)), Errc::InsufficientData);
  // Rank-deficient covariance still gives a finite value thanks to the regularizer.
  CHECK(std::isfinite(fid(mu, Matrix::Zero(3, 3), mu, eye)));
}

TEST_CASE("diversity oracles") {
  Rng rng(3);
  const Matrix same = Matrix::Constant(10, 4, 0.7);
  CHECK(diversity(same, 50, rng) == 0.0);

  Matrix two(2, 3);
  two << 0, 0, 0, 0, 2, 0;
  CHECK(std::abs(diversity(two, 25, rng) - 2.0) < 1e-12);

  // Pairs of independent N(0, I_16) points: E|x - y| = sqrt(2) * chi_16 mean.
  const int d = 16;
  const double chi_mean = std::sqrt(2.0) * std::exp(std::lgamma((d + 1) / 2.0) - std::lgamma(d / 2.0));
  const Matrix cloud = gaussian_rows(4000, d, 11);
  const double div = diversity(cloud, 20000, rng);
  CHECK(std::abs(div - std::sqrt(2.0) * chi_mean) / (std::sqrt(2.0) * chi_mean) < 0.02);

  CHECK_THROWS_CODE(diversity(gaussian_rows(1, 4, 0), 10, rng), Errc::TooFewEmbeddings);
  CHECK_THROWS_CODE(diversity(cloud, 0, rng), Errc::InvalidConfig);
}

TEST_CASE("fitted covariance is symmetric positive semi-definite") {
  for (int n : {3, 10, 200}) {
    const EmbeddingSet s = EmbeddingSet::fit(gaussian_rows(n, 12, static_cast<std::uint64_t>(n)));
    CHECK((s.covariance - s.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s.covariance);
    CHECK(solver.eigenvalues().minCoeff() >= -1e-8);
    CHECK((s.mean - s.embeddings.colwise().mean().transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("diversity is invariant to row order and deterministic") {
  const Matrix cloud = gaussian_rows(300, 5, 5);
  std::vector<int> perm(300);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffle(9);
  std::shuffle(perm.begin(), perm.end(), shuffle);
  Matrix permuted(300, 5);
  for (int i = 0; i < 300; ++i) permuted.row(i) = cloud.row(perm[i]);
  Rng r1(1), r2(2), r3(1);
  const double a = diversity(cloud, 20000, r1);
  const double b = diversity(permuted, 20000, r2);
  CHECK(std::abs(a - b) / a < 0.02);
  CHECK(diversity(cloud, 20000, r3) == a);

  // The population of pair distances is the same multiset.
  auto all_pairs = [](const Matrix& m) {
    std::vector<double> d;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = i + 1; j < m.rows(); ++j) d.push_back((m.row(i) - m.row(j)).norm());
    std::sort(d.begin(), d.end());
    return d;
  };
  CHECK(all_pairs(cloud) == all_pairs(permuted));
}

TEST_CASE("motion features") {
  const MotionSequence seq = synthesize_fall(AttributeConfig{}, {8, 8, 8}, 30.0, 4);
  const Tensor f = motion_features(seq);
  CHECK(f.rows() == 24);
  CHECK(f.cols() == kNumJoints * 6);
  // Frame 0 has no velocity.
  for (int j = 0; j < kNumJoints; ++j)
    for (int c = 3; c < 6; ++c) CHECK(f.at(0, j * 6 + c) == 0.0);
  // Turning the whole sequence about +Y leaves the features unchanged.
  const Tensor turned = motion_features(rotate_yaw(seq, 1.3));
  double worst = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, std::abs(f.data()[i] - turned.data()[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("skeleton partitions") {
  const auto parts = skeleton_partitions(skeleton_preset(BodyModel::Male));
  const int n = kNumJoints;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      CHECK(parts[0][i * n + j] == (i == j ? 1.0 : 0.0));
      CHECK(parts[1][i * n + j] == parts[1][j * n + i]);
    }
  // Largest eigenvalue of the normalized adjacency of a tree is at most 1.
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = parts[1][i * n + j];
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  CHECK(solver.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
}

TEST_CASE("recognizer outputs") {
  const Recognizer model(tiny_recognizer(), 1);
  const auto data = small_set(4, 2);
  for (const auto& seq : data) {
    const auto probs = model.probabilities(seq);
    for (int h = 0; h < 3; ++h) {
      REQUIRE(probs[h].size() == static_cast<std::size_t>(kHeadClasses[h]));
      double sum = 0.0;
      for (double p : probs[h]) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    const auto pred = model.predict(seq);
    for (int h = 0; h < 3; ++h)
      CHECK(pred[h] == std::max_element(probs[h].begin(), probs[h].end()) - probs[h].begin());
    CHECK(model.embed(seq).size() == 8u);
  }
  CHECK(Recognizer(tiny_recognizer(), 1).embed(data[0]) == model.embed(data[0]));
}

TEST_CASE("recognizer gradients match finite differences") {
  Recognizer model(tiny_recognizer(), 3);
  const MotionSequence seq = synthesize_fall(AttributeConfig{}, {6, 6, 6}, 30.0, 8);
  std::vector<Tensor> leaves;
  Rng shift(5);
  for (auto& [name, t] : model.parameters().entries()) {
    // Zero-initialized biases put whole rows exactly on the relu kink, where
    // central differences are meaningless.
    for (double& v : t.mutable_data()) v += 0.05 * standard_normal(shift);
    leaves.push_back(t);
  }
  const auto targets = head_targets(seq.attributes);
  auto build = [&](const std::vector<Tensor>&) {
    const auto out = model.forward(seq);
    Tensor loss = ad::cross_entropy(out.logits[0], std::span<const int>(&targets[0], 1));
    loss = ad::add(loss, ad::cross_entropy(out.logits[1], std::span<const int>(&targets[1], 1)));
    loss = ad::add(loss, ad::cross_entropy(out.logits[2], std::span<const int>(&targets[2], 1)));
    return loss;
  };
  Rng pick(4);
  const GradCheck g = check_gradients_sampled(leaves, build, 4, pick);
  CHECK_MESSAGE(g.worst < 1e-5, "worst relative error ", g.worst, " at leaf ", g.worst_leaf);
}

TEST_CASE("recognition accuracy") {
  const Recognizer model(tiny_recognizer(), 1);
  const auto data = small_set(1, 5);
  std::vector<std::pair<MotionSequence, AttributeConfig>> one;
  AttributeConfig predicted;
  const auto pred = model.predict(data[0]);
  predicted.impact_location = static_cast<ImpactLocation>(pred[0] / 5);
  predicted.impact_quality = static_cast<ImpactQuality>(pred[0] % 5);
  predicted.glitch_quality = static_cast<GlitchQuality>(pred[1]);
  predicted.fall_quality = static_cast<FallQuality>(pred[2]);
  one.emplace_back(data[0], predicted);
  const HeadAccuracy a = recognition_accuracy(model, one);
  CHECK(a.impact == 1.0);
  CHECK(a.glitch == 1.0);
  CHECK(a.fall == 1.0);
  CHECK(a.mean == 1.0);

  CHECK_THROWS_CODE(recognition_accuracy(model, std::vector<MotionSequence>{}), Errc::EmptyInput);
}

TEST_CASE("accuracy against random labels stays near chance") {
  // Labels drawn independently of the motions: each hit is Bernoulli(1/K).
  const Recognizer model(tiny_recognizer(), 2);
  const auto data = small_set(200, 6);
  std::vector<std::pair<MotionSequence, AttributeConfig>> labeled;
  Rng rng(17);
  for (const auto& s : data) labeled.emplace_back(s, random_attributes(rng));
  const HeadAccuracy a = recognition_accuracy(model, labeled);
  const double n = 200.0;
  const double got[3] = {a.impact, a.glitch, a.fall};
  for (int h = 0; h < 3; ++h) {
    const double p = 1.0 / kHeadClasses[h];
    CHECK(std::abs(got[h] - p) <= 4.0 * std::sqrt(p * (1 - p) / n));
  }
}

// Each sequence twice, so every present class has two examples.
std::vector<MotionSequence> doubled_set(int count, std::uint64_t seed) {
  auto data = small_set(count, seed);
  const auto copy = data;
  data.insert(data.end(), copy.begin(), copy.end());
  return data;
}

TEST_CASE("recognizer training reduces loss, is deterministic and round-trips") {
  Recognizer model(tiny_recognizer(), 4);
  const auto data = doubled_set(12, 7);
  RecognizerTrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.adam.learning_rate = 3e-3;
  const RecognizerReport report = train_recognizer(model, data, {}, cfg);
  CHECK(report.final_loss < report.initial_loss);
  CHECK(report.train_accuracy.mean >= 0.0);

  const fs::path path = fs::temp_directory_path() / "fallgen_test_recognizer.ckpt";
  save_recognizer(path, model, report, 4);
  const auto loaded = load_recognizer(path);
  CHECK(loaded->config() == model.config());
  CHECK(loaded->embed(data[0]) == model.embed(data[0]));
  fs::remove(path);

  Recognizer twin(tiny_recognizer(), 4);
  train_recognizer(twin, data, {}, cfg);
  CHECK(twin.embed(data[3]) == model.embed(data[3]));

  CHECK_THROWS_CODE(train_recognizer(model, {data[0]}, {}, cfg), Errc::InsufficientData);
  std::vector<MotionSequence> same(3, data[0]);
  CHECK_THROWS_CODE(train_recognizer(model, same, {}, cfg), Errc::InsufficientData);
  // A class seen only once.
  std::vector<MotionSequence> lonely(data.begin(), data.begin() + 12);
  lonely.push_back(data[0]);
  CHECK_THROWS_CODE(train_recognizer(model, lonely, {}, cfg), Errc::InsufficientData);
}

TEST_CASE("evaluate report") {
  const Recognizer model(tiny_recognizer(), 5);
  const auto real = small_set(12, 8);
  const auto gen = small_set(10, 9);
  EvalOptions opt;
  opt.diversity_pairs = 50;
  const EvalReport r = evaluate(model, real, gen, opt);
  CHECK(r.n_real == 12);
  CHECK(r.n_gen == 10);
  CHECK(r.fid >= 0.0);
  CHECK(r.diversity > 0.0);
  CHECK(r.config_hash.size() == 16);
  const EvalReport again = evaluate(model, real, gen, opt);
  CHECK(again.fid == r.fid);
  CHECK(again.diversity == r.diversity);
  const auto doc = eval_report_to_json(r);
  for (const char* key : {"fid", "accuracy", "diversity", "n_real", "n_gen", "config_hash"}) CHECK(doc.contains(key));
  CHECK(std::abs(evaluate(model, real, real, opt).fid) < 1e-6);
  CHECK_THROWS_CODE(evaluate(model, {}, gen, opt), Errc::EmptyInput);
}

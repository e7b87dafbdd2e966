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

#include <cmath>
#include <filesystem>
#include <fstream>

#include <omp.h>

#include "fallgen/checkpoint.hpp"
#include "fallgen/model.hpp"
#include "fallgen/train.hpp"
#include "suites.hpp"
#include "test_util.hpp"

using namespace fallgen;
using namespace fallgen::testing;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(CombineMode mode = CombineMode::Addition) {
  ModelConfig c;
  c.latent_dim = 16;
  c.num_layers = 2;
  c.num_heads = 4;
  c.ff_dim = 32;
  c.max_frames = 40;
  c.combine_mode = mode;
  return c;
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

Tensor random_frames(Rng& rng, int n) {
  return Tensor::constant({n, kPoseDim}, random_values(rng, static_cast<std::size_t>(n) * kPoseDim));
}

}  // namespace

TEST_CASE("model config validation and serialization") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.num_heads = 3;
  CHECK_THROWS_CODE(c.validate(), Errc::InvalidConfig);
  CHECK_THROWS_CODE(parse_combine_mode("multiply"), Errc::InvalidConfig);

  const ModelConfig d = small_config(CombineMode::Concatenation);
  CHECK(model_config_from_json(model_config_to_json(d)) == d);
}

TEST_CASE("encode shape contract and errors") {
  const FallCVAE model(small_config(), 1);
  Rng rng(2);
  for (int n : {1, 7, 40}) {
    const auto dist = model.encode(Phase::Glitch, random_frames(rng, n), {3, -1});
    CHECK(dist.mu.shape() == ad::Shape{1, 16});
    CHECK(dist.log_var.shape() == ad::Shape{1, 16});
  }
  CHECK_THROWS_CODE(model.encode(Phase::Fall, random_frames(rng, 41), {0, -1}), Errc::FrameCountOutOfRange);
  CHECK_THROWS_CODE(model.encode(Phase::Fall, Tensor::constant({0, kPoseDim}, 0.0), {0, -1}),
                    Errc::FrameCountOutOfRange);
  CHECK_THROWS_CODE(model.encode(Phase::Fall, random_frames(rng, 4), {5, -1}), Errc::UnknownLabel);
  CHECK_THROWS_CODE(model.encode(Phase::Impact, random_frames(rng, 4), {1, 5}), Errc::UnknownLabel);
}

TEST_CASE("encode sees frame order and label") {
  const FallCVAE model(small_config(), 3);
  Rng rng(4);
  const Tensor frames = random_frames(rng, 6);
  const auto base = model.encode(Phase::Impact, frames, {1, 2});

  std::vector<double> swapped(frames.data().begin(), frames.data().end());
  std::swap_ranges(swapped.begin() + 1 * kPoseDim, swapped.begin() + 2 * kPoseDim, swapped.begin() + 4 * kPoseDim);
  const auto permuted = model.encode(Phase::Impact, Tensor::constant({6, kPoseDim}, swapped), {1, 2});
  CHECK_FALSE(same_values(base.mu, permuted.mu));

  const auto relabeled = model.encode(Phase::Impact, frames, {1, 3});
  CHECK_FALSE(same_values(base.mu, relabeled.mu));
  CHECK_FALSE(same_values(base.log_var, relabeled.log_var));
  CHECK(same_values(base.mu, model.encode(Phase::Impact, frames, {1, 2}).mu));
}

TEST_CASE("reparameterize") {
  const FallCVAE model(small_config(), 5);
  Rng rng(6);
  const LatentDistribution sharp{Tensor::constant({1, 16}, random_values(rng, 16)), Tensor::constant({1, 16}, -1e4)};
  Rng r1(9);
  CHECK(same_values(model.reparameterize(sharp, r1), sharp.mu));

  const LatentDistribution standard{Tensor::constant({1, 16}, 0.0), Tensor::constant({1, 16}, 0.0)};
  Rng a(11), b(11);
  CHECK(same_values(model.reparameterize(standard, a), model.reparameterize(standard, b)));

  const int n = 10000;
  std::vector<double> sum(16, 0.0), sq(16, 0.0);
  Rng s(12);
  for (int i = 0; i < n; ++i) {
    const Tensor z = model.reparameterize(standard, s);
    for (int d = 0; d < 16; ++d) {
      sum[d] += z.data()[d];
      sq[d] += z.data()[d] * z.data()[d];
    }
  }
  for (int d = 0; d < 16; ++d) {
    const double m = sum[d] / n;
    const double var = sq[d] / n - m * m;
    CHECK(std::abs(m) < 4.0 / std::sqrt(n));
    CHECK(std::abs(var - 1.0) < 0.05);
  }

  // gradient flows to mu and log_var only
  const Tensor mu = random_param(rng, {1, 16});
  const Tensor lv = random_param(rng, {1, 16});
  Rng r2(13);
  const auto g = ad::backward(ad::sum(model.reparameterize({mu, lv}, r2)));
  for (double v : g[mu]) CHECK(v == 1.0);
  CHECK(g.contains(lv));
}

TEST_CASE("decode shape, determinism and label effect") {
  const FallCVAE model(small_config(), 7);
  Rng rng(8);
  const Tensor z = Tensor::constant({1, 16}, random_values(rng, 16));
  const Tensor init = random_frames(rng, 1);
  const Tensor out = model.decode(Phase::Fall, z, {2, -1}, init, 23);
  CHECK(out.shape() == ad::Shape{23, kPoseDim});
  CHECK(same_values(out, model.decode(Phase::Fall, z, {2, -1}, init, 23)));
  CHECK_FALSE(same_values(out, model.decode(Phase::Fall, z, {4, -1}, init, 23)));
  CHECK_THROWS_CODE(model.decode(Phase::Fall, z, {2, -1}, init, 41), Errc::FrameCountOutOfRange);
  CHECK_THROWS_CODE(model.decode(Phase::Fall, z, {9, -1}, init, 4), Errc::UnknownLabel);
}

TEST_CASE("combine modes share output shapes") {
  const FallCVAE add(small_config(CombineMode::Addition), 9);
  const FallCVAE cat(small_config(CombineMode::Concatenation), 9);
  CHECK(cat.parameters().entries().size() == add.parameters().entries().size() + 6);
  const MotionSequence seq = six_frame_phases(10);
  Rng r1(1), r2(1);
  const auto fa = add.forward_train(seq, r1);
  const auto fc = cat.forward_train(seq, r2);
  for (int i = 0; i < 3; ++i) CHECK(fa.reconstruction[i].shape() == fc.reconstruction[i].shape());
}

TEST_CASE("forward_train frame counts and finite positive loss") {
  const FallCVAE model(small_config(), 11);
  Rng rng(12);
  const MotionSequence seq = synthesize_fall(random_attributes(rng), {14, 19, 25}, 30.0, 12);
  const auto fwd = model.forward_train(seq, rng);
  CHECK(fwd.reconstruction[0].rows() == 14);
  CHECK(fwd.reconstruction[1].rows() == 19);
  CHECK(fwd.reconstruction[2].rows() == 25);
  const LossTerms terms = model.loss(fwd, seq);
  CHECK(std::isfinite(terms.total_value));
  CHECK(terms.total_value > 0.0);
  CHECK(terms.param > 0.0);
  CHECK(terms.vertex > 0.0);
  CHECK(terms.init > 0.0);
}

TEST_CASE("loss fixed points") {
  const FallCVAE model(small_config(), 13);
  const MotionSequence seq = six_frame_phases(14);
  ForwardResult perfect;
  for (Phase phase : kPhases) {
    const auto [first, last] = seq.phase_range(phase);
    const int i = static_cast<int>(phase);
    perfect.reconstruction[i] = frames_tensor(seq, first, last - first);
    perfect.dists[i] = {Tensor::constant({1, 16}, 0.0), Tensor::constant({1, 16}, 0.0)};
  }
  const LossTerms t = model.loss(perfect, seq);
  CHECK(t.param == 0.0);
  CHECK(t.kl == 0.0);
  CHECK(t.vertex == 0.0);
  CHECK(t.init == 0.0);
  CHECK(t.total_value == 0.0);
}

TEST_CASE("closed-form KL is non-negative and matches Monte Carlo") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mu = random_values(rng, 4, -1.0, 1.0);
    const auto lv = random_values(rng, 4, -1.0, 1.0);
    const double kl = kl_divergence({Tensor::constant({1, 4}, mu), Tensor::constant({1, 4}, lv)}).item();
    CHECK(kl > 0.0);
  }
  const std::vector<double> mu{0.8, -0.5, 0.3, 1.1};
  const std::vector<double> lv{-0.7, 0.4, -0.2, 0.6};
  const double kl = kl_divergence({Tensor::constant({1, 4}, mu), Tensor::constant({1, 4}, lv)}).item();
  const double mc = monte_carlo_kl(mu, lv, 100000, 16);
  CHECK(std::abs(mc - kl) / kl < 0.02);
  CHECK(kl_divergence({Tensor::constant({1, 4}, 0.0), Tensor::constant({1, 4}, 0.0)}).item() == 0.0);
}

TEST_CASE("total loss gradient matches central differences for every parameter group") {
  for (CombineMode mode : {CombineMode::Addition, CombineMode::Concatenation}) {
    const GroupCheck r = check_model_loss_gradients(mode, 21, 3);
    INFO(combine_mode_name(mode), " worst group ", r.worst_group);
    CHECK(r.groups > 50);
    CHECK(r.worst < 1e-4);
  }
}

TEST_CASE("generate satisfies invariants and chains phases bit-exactly") {
  const FallCVAE model(small_config(), 17);
  AttributeConfig attrs;
  attrs.glitch_quality = GlitchQuality::Spin;
  const Pose start = rest_pose(skeleton_preset(BodyModel::Male));
  Rng r1(3), r2(3);
  GenerationTrace trace;
  const MotionSequence seq = model.generate(attrs, {12, 15, 20}, r1, start, &trace);
  CHECK_NOTHROW(seq.validate());
  CHECK(seq.frame_count() == 47);
  CHECK(seq.boundaries == PhaseBoundaries{12, 27});
  CHECK(seq.attributes == attrs);
  CHECK(trace.guidance[0] == start);
  CHECK(trace.guidance[1] == seq.frames[11]);
  CHECK(trace.guidance[2] == seq.frames[26]);
  CHECK(model.generate(attrs, {12, 15, 20}, r2, start) == seq);
  for (const auto& f : seq.frames) {
    const auto& r = f.joint_rotations[7];
    CHECK(std::abs(r.a.norm() - 1.0) < 1e-12);
    CHECK(std::abs(r.b.norm() - 1.0) < 1e-12);
    CHECK(std::abs(r.a.dot(r.b)) < 1e-12);
  }
  Rng r3(3);
  CHECK_THROWS_CODE(model.generate(attrs, {12, 0, 20}, r3, start), Errc::FrameCountOutOfRange);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = fs::temp_directory_path() / "fallgen_test_ckpt";
  fs::remove_all(dir);
  FallCVAE model(small_config(CombineMode::Concatenation), 19);
  Rng rng(20);
  rng.discard(5);
  save_model(dir / "m.ckpt", model, 42, rng, {{"note", "x"}});

  const LoadedModel loaded = load_model(dir / "m.ckpt");
  CHECK(loaded.header.step == 42);
  CHECK(rng_from_state(loaded.header.rng_state) == rng);
  CHECK(loaded.header.extra["note"] == "x");
  CHECK(loaded.model->config() == model.config());
  CHECK(loaded.id == checkpoint_id(dir / "m.ckpt"));
  CHECK(loaded.id.size() == 16);

  const MotionSequence seq = six_frame_phases(22);
  Rng a(1), b(1);
  const auto fa = model.forward_train(seq, a);
  const auto fb = loaded.model->forward_train(seq, b);
  for (int i = 0; i < 3; ++i) CHECK(same_values(fa.reconstruction[i], fb.reconstruction[i]));
  Rng g1(2), g2(2);
  const Pose start = rest_pose(skeleton_preset(BodyModel::Male));
  CHECK(model.generate({}, {8, 8, 8}, g1, start) == loaded.model->generate({}, {8, 8, 8}, g2, start));

  // truncation and mismatched architectures are rejected
  const auto bytes = fs::file_size(dir / "m.ckpt");
  fs::copy_file(dir / "m.ckpt", dir / "cut.ckpt");
  fs::resize_file(dir / "cut.ckpt", bytes - 100);
  CHECK_THROWS_CODE(load_model(dir / "cut.ckpt"), Errc::ParseError);
  FallCVAE other(small_config(CombineMode::Addition), 1);
  CHECK_THROWS_CODE(read_checkpoint_parameters(dir / "m.ckpt", other.parameters()), Errc::InvalidConfig);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_CODE(load_model(dir / "junk.ckpt"), Errc::ParseError);
  CHECK_THROWS_CODE(load_model(dir / "missing.ckpt"), Errc::IoError);
}

TEST_CASE("training is deterministic and independent of thread count") {
  SynthOptions opts;
  opts.count = 6;
  opts.seed = 4;
  const auto data = synthesize_dataset(opts);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 8;

  auto run = [&](int threads) {
    const int saved = omp_get_max_threads();
    omp_set_num_threads(threads);
    FallCVAE model(small_config(), 23);
    const TrainResult r = train_cvae(model, data, tc);
    omp_set_num_threads(saved);
    std::vector<double> flat;
    for (const auto& [name, t] : model.parameters().entries()) flat.insert(flat.end(), t.data().begin(), t.data().end());
    return std::make_pair(flat, r);
  };
  const auto [p1, r1] = run(1);
  const auto [p2, r2] = run(3);
  CHECK(p1 == p2);
  REQUIRE(r1.steps.size() == 4);
  CHECK(r1.steps[3].step == 4);
  CHECK(r1.steps[3].epoch == 2);
  for (std::size_t i = 0; i < r1.steps.size(); ++i) CHECK(r1.steps[i].total == r2.steps[i].total);
  CHECK(r1.epoch_total.size() == 2);

  const fs::path csv = fs::temp_directory_path() / "fallgen_test_loss.csv";
  write_loss_csv(csv, r1.steps);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,total,l_param,l_kl,l_vertex,l_init");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 4);
}

TEST_CASE("adam matches a hand-computed first step") {
  nn::ParameterStore store;
  Rng rng(1);
  Tensor w = store.add("w", {1, 2}, nn::Init::Zeros, rng);
  Adam adam(store, {0.1, 0.9, 0.999, 1e-8});
  adam.step(store, {{2.0, -0.5}});
  // first bias-corrected step moves each weight by lr * sign(g)
  CHECK(w.data()[0] == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(w.data()[1] == doctest::Approx(0.1).epsilon(1e-7));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "bcrl/dataset.hpp"
#include "bcrl/qtrain.hpp"

using namespace bcrl::qtrain;
using namespace bcrl::data;

namespace {

// Two-state-feature dataset with deterministic structure: the first state
// dim encodes the immediate reward of laughing.
BatchDataset toy_dataset(size_t n_traj, size_t n_states, uint64_t seed) {
  BatchDataset ds;
  Rng rng(seed);
  for (size_t tr = 0; tr < n_traj; ++tr) {
    Trajectory t;
    t.dialog_id = "toy" + std::to_string(tr);
    t.actor_role = "A";
    t.state_dim = 2;
    for (size_t i = 0; i < n_states; ++i) {
      double sig = rng.uniform() < 0.3 ? 1.0 : 0.0;
      t.states.push_back(float(sig));
      t.states.push_back(float(rng.normal() * 0.1));
    }
    for (size_t i = 0; i + 1 < n_states; ++i) {
      uint8_t a = rng.index(2);
      t.actions.push_back(a);
      double sig = t.states[i * 2];
      t.rewards.push_back(float(a == 1 ? (sig > 0.5 ? 1.0 : -1.0) : 0.0));
    }
    ds.subjects[t.dialog_id] = {"sa" + std::to_string(tr), "sb" + std::to_string(tr)};
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

SyntheticDyadConfig small_synth(SynthMode mode, int episodes, uint64_t seed) {
  SyntheticDyadConfig cfg;
  cfg.mode = mode;
  cfg.cue_lead_s = mode == SynthMode::pomdp ? 2.0 : 0.5;
  cfg.episode_length_s = 30.0;
  cfg.n_episodes = episodes;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("bellman_target arithmetic") {
  CHECK(bellman_target(1.0, false, {2.0, 5.0}, 0.9) == doctest::Approx(1.0 + 4.5));
  CHECK(bellman_target(1.0, false, {7.0, 5.0}, 0.5) == doctest::Approx(4.5));
  CHECK(bellman_target(-2.0, true, {100.0, 100.0}, 0.9) == doctest::Approx(-2.0));
  CHECK(bellman_target(0.0, false, {-1.0, -3.0}, 1.0) == doctest::Approx(-1.0));
  CHECK_THROWS(bellman_target(0.0, false, {std::nan(""), 0.0}, 0.9));
}

TEST_CASE("zero network's residual equals the mean squared reward") {
  BatchDataset ds = toy_dataset(3, 50, 5);
  std::vector<size_t> idx = {0, 1, 2};
  // Freshly constructed network has all-zero parameters -> Q == 0, so the
  // target reduces to r and the residual to mean r^2.
  bcrl::nn::Network net(body_specs(Body::mlp, 2, 8, 4));
  double want = 0.0;
  size_t n = 0;
  for (const auto& t : ds.trajectories)
    for (float r : t.rewards) {
      want += double(r) * double(r);
      ++n;
    }
  want /= double(n);
  CHECK(bellman_residual(net, ds, idx, 0.99) == doctest::Approx(want).epsilon(1e-12));
  CHECK(mean_q(net, ds, idx) == doctest::Approx(0.0));
}

TEST_CASE("tabular residual oracle detects a perturbed Q") {
  auto batch = generate_synthetic(small_synth(SynthMode::mdp, 1, 7));
  const auto& t = batch.dataset.trajectories[0];
  auto q = batch.oracles[0].oracle_q;
  CHECK(bellman_residual_from_q(q, t, 0.99) < 1e-12);
  q[100][0] += 0.5;
  CHECK(bellman_residual_from_q(q, t, 0.99) > 1e-6);
}

TEST_CASE("gamma 0 turns training into immediate-reward regression") {
  BatchDataset ds = toy_dataset(2, 200, 11);
  TrainerConfig cfg;
  cfg.gamma = 0.0;
  cfg.updates = 800;
  cfg.eval_interval = 200;
  cfg.minibatch = 64;
  cfg.hidden1 = 16;
  cfg.hidden2 = 8;
  cfg.opt.lr = 3e-3;
  cfg.seed = 2;
  auto res = train_mlp(ds, {0}, {1}, cfg);
  // The reward is a deterministic function of (state, action), so the
  // residual must approach zero on both splits.
  CHECK(res.report.points.back().train_br < 0.01);
  CHECK(res.report.points.back().test_br < 0.02);
}

TEST_CASE("training on a single tuple drives its residual monotonically down") {
  BatchDataset ds;
  Trajectory t;
  t.dialog_id = "one";
  t.actor_role = "A";
  t.state_dim = 2;
  t.states = {0.5f, -0.25f, 0.1f, 0.9f};
  t.actions = {1};
  t.rewards = {2.0f};
  ds.trajectories.push_back(t);
  ds.subjects["one"] = {"x", "y"};
  TrainerConfig cfg;
  cfg.updates = 1500;
  cfg.eval_interval = 150;
  cfg.minibatch = 1;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  cfg.opt.lr = 1e-2;
  auto res = train_mlp(ds, {0}, {0}, cfg);
  const auto& pts = res.report.points;
  REQUIRE(pts.size() >= 3);
  for (size_t i = 1; i < pts.size(); ++i) CHECK(pts[i].train_br <= pts[i - 1].train_br);
  CHECK(pts.back().train_br < 0.05);
}

TEST_CASE("training is bit-deterministic per seed") {
  BatchDataset ds = toy_dataset(2, 120, 3);
  TrainerConfig cfg;
  cfg.updates = 120;
  cfg.eval_interval = 60;
  cfg.minibatch = 32;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  cfg.seed = 9;
  auto a = train_mlp(ds, {0}, {1}, cfg);
  auto b = train_mlp(ds, {0}, {1}, cfg);
  CHECK(a.network.params() == b.network.params());
  REQUIRE(a.report.points.size() == b.report.points.size());
  for (size_t i = 0; i < a.report.points.size(); ++i) {
    CHECK(a.report.points[i].train_br == b.report.points[i].train_br);
    CHECK(a.report.points[i].loss == b.report.points[i].loss);
  }
  cfg.seed = 10;
  auto c = train_mlp(ds, {0}, {1}, cfg);
  CHECK(a.network.params() != c.network.params());
}

TEST_CASE("LSTM training lowers the residual on short synthetic data") {
  auto batch = generate_synthetic(small_synth(SynthMode::mdp, 3, 13));
  TrainerConfig cfg;
  cfg.body = Body::fc_lstm;
  cfg.updates = 30;
  cfg.eval_interval = 30;
  cfg.minibatch = 8;
  cfg.seq_len = 40;
  cfg.hidden1 = 10;
  cfg.hidden2 = 5;
  cfg.opt.lr = 1e-3;
  cfg.target_sync = 10;
  auto res = train_lstm(batch.dataset, {0, 1}, {2}, cfg);
  CHECK(res.report.points.back().train_br < res.report.initial_train_br);
  CHECK(std::isfinite(res.report.points.back().test_br));
}

TEST_CASE("train_lstm rejects feedforward bodies and vice versa") {
  BatchDataset ds = toy_dataset(2, 90, 3);
  TrainerConfig cfg;
  cfg.body = Body::mlp;
  CHECK_THROWS(train_lstm(ds, {0}, {1}, cfg));
  cfg.body = Body::fc_lstm;
  CHECK_THROWS(train_mlp(ds, {0}, {1}, cfg));
}

TEST_CASE("supervised classifier separates a separable toy problem") {
  BatchDataset ds = toy_dataset(4, 300, 17);
  // Relabel actions to the separable rule a = [first dim > 0.5].
  for (auto& t : ds.trajectories)
    for (size_t k = 0; k < t.n_tuples(); ++k)
      t.actions[k] = t.states[k * 2] > 0.5f ? 1 : 0;
  TrainerConfig cfg;
  cfg.updates = 600;
  cfg.minibatch = 64;
  cfg.hidden1 = 16;
  cfg.hidden2 = 8;
  cfg.opt.lr = 3e-3;
  bcrl::nn::Network net = train_supervised(ds, {0, 1, 2}, cfg);
  size_t right = 0, total = 0;
  const auto& t = ds.trajectories[3];
  for (size_t k = 0; k < t.n_tuples(); ++k) {
    bcrl::kernels::Mat x(1, 2);
    x.at(0, 0) = t.states[k * 2];
    x.at(0, 1) = t.states[k * 2 + 1];
    auto y = net.forward_one(x);
    uint8_t pred = y.at(0, 1) > y.at(0, 0) ? 1 : 0;
    right += pred == t.actions[k];
    ++total;
  }
  CHECK(double(right) / double(total) >= 0.99);
}

TEST_CASE("supervised training requires both classes") {
  BatchDataset ds = toy_dataset(1, 50, 3);
  for (auto& t : ds.trajectories)
    for (auto& a : t.actions) a = 0;
  TrainerConfig cfg;
  CHECK_THROWS(train_supervised(ds, {0}, cfg));
}

TEST_CASE("the divergence guard throws and carries the residual history") {
  BatchDataset ds = toy_dataset(3, 200, 29);
  TrainerConfig cfg;
  cfg.body = Body::linear;
  cfg.use_sgd = true;
  cfg.opt.lr = 3.0;  // deliberately unstable step size
  cfg.target_sync = 1;
  cfg.updates = 2000;
  cfg.eval_interval = 100;
  cfg.minibatch = 32;
  cfg.divergence_factor = 1e3;
  bool threw = false;
  try {
    train_mlp(ds, {0, 1}, {2}, cfg);
  } catch (const DivergenceError& e) {
    threw = true;
    CHECK(!e.report.points.empty());
    CHECK(e.report.points.back().train_br >
          1e3 * std::max(e.report.initial_train_br, 1e-12));
  }
  CHECK(threw);
}

TEST_CASE("training log CSV has one row per checkpoint and split") {
  BatchDataset ds = toy_dataset(2, 80, 3);
  TrainerConfig cfg;
  cfg.updates = 100;
  cfg.eval_interval = 50;
  cfg.minibatch = 16;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  auto res = train_mlp(ds, {0}, {1}, cfg);
  write_training_log("test_qlog.csv", res.report);
  std::ifstream in("test_qlog.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line.find("update") == 0);
  size_t rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2 * res.report.points.size());
  in.close();
  std::remove("test_qlog.csv");
}

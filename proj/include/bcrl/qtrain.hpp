#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcrl/dataset.hpp"
#include "bcrl/nn.hpp"

namespace bcrl::qtrain {

enum class Body { mlp, fc_lstm, linear };

struct TrainerConfig {
  double gamma = 0.99;
  Body body = Body::mlp;
  size_t seq_len = 80;        // fc_lstm only; 80 steps = 2 s at 40 Hz
  size_t minibatch = 256;
  size_t updates = 20000;
  size_t target_sync = 1000;  // target-network refresh interval, 1 = literal fitting
  size_t eval_interval = 2000;
  size_t hidden1 = 100, hidden2 = 25;
  double grad_clip = 5.0;     // global-norm clip for recurrent training
  nn::OptimizerConfig opt;
  uint64_t seed = 1;
  bool use_sgd = false;       // divergence-diagnostic configurations only
  double divergence_factor = 1e3;
};

struct ResidualPoint {
  size_t update = 0;
  double train_br = 0.0, test_br = 0.0;
  double train_mean_q = 0.0, test_mean_q = 0.0;
  double loss = 0.0;
};

struct ResidualReport {
  std::vector<ResidualPoint> points;
  double initial_train_br = 0.0;
  double initial_test_br = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, ResidualReport report)
      : std::runtime_error(msg), report(std::move(report)) {}
  ResidualReport report;
};

struct TrainResult {
  nn::Network network;
  ResidualReport report;
};

std::vector<nn::LayerSpec> body_specs(Body body, size_t input_dim, size_t hidden1,
                                      size_t hidden2);

// r + gamma * max_a' Q(s', a'); r alone at terminals.  Throws on non-finite Q.
double bellman_target(double r, bool terminal, const std::array<double, 2>& q_next,
                      double gamma);

// Mean squared Bellman violation over all tuples of the chosen trajectories
// (Eq. over the entire batch); recurrent bodies are unrolled from each
// trajectory's start.  Also returns the mean over states of max_a Q.
struct BatchEval {
  double bellman_residual = 0.0;
  double mean_q = 0.0;
};
BatchEval evaluate(const nn::Network& net, const data::BatchDataset& ds,
                   const std::vector<size_t>& traj_idx, double gamma);

double bellman_residual(const nn::Network& net, const data::BatchDataset& ds,
                        const std::vector<size_t>& traj_idx, double gamma);
double mean_q(const nn::Network& net, const data::BatchDataset& ds,
              const std::vector<size_t>& traj_idx);

// Residual of an externally supplied tabular Q (q[k] = Q(s_k, .) for each
// tuple of the trajectory).
double bellman_residual_from_q(const std::vector<std::array<double, 2>>& q,
                               const data::Trajectory& traj, double gamma);

// Shuffled-minibatch semi-gradient Q-learning with a periodically synced
// frozen target network.  Throws DivergenceError when a checkpoint residual
// exceeds divergence_factor x the initial residual.
TrainResult train_mlp(const data::BatchDataset& ds,
                      const std::vector<size_t>& train_idx,
                      const std::vector<size_t>& test_idx, const TrainerConfig& cfg);

// Random-window BPTT training: each update samples (trajectory, start) pairs,
// unrolls seq_len steps from zero recurrent state, and sums the loss over all
// steps' selected actions.
TrainResult train_lstm(const data::BatchDataset& ds,
                       const std::vector<size_t>& train_idx,
                       const std::vector<size_t>& test_idx, const TrainerConfig& cfg);

// Laugh/no-laugh classifier on the same MLP body with class-weighted
// cross-entropy (inverse-frequency weights).
nn::Network train_supervised(const data::BatchDataset& ds,
                             const std::vector<size_t>& train_idx,
                             const TrainerConfig& cfg);

// Full-batch forward of a feedforward network over all tuple states;
// returns per-tuple Q rows per trajectory.
std::vector<std::vector<std::array<double, 2>>> q_values_feedforward(
    const nn::Network& net, const data::BatchDataset& ds,
    const std::vector<size_t>& traj_idx);

// Recurrent per-step Q values from a full-trajectory unroll.
std::vector<std::array<double, 2>> q_values_recurrent(const nn::Network& net,
                                                      const data::Trajectory& traj);

void write_training_log(const std::string& path, const ResidualReport& report);

}  // namespace bcrl::qtrain

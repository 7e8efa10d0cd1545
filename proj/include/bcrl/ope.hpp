#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bcrl/dataset.hpp"
#include "bcrl/nn.hpp"

namespace bcrl::ope {

inline constexpr double kDefaultClip = 0.95;

// A policy exposes P(laugh | history) at every tuple step of a trajectory.
// Recurrent bodies are unrolled from the trajectory start, so probabilities
// at step t depend only on states up to t.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> laugh_prob(const data::Trajectory& traj) const = 0;
};

// Argmax action gets probability `clip`; ties break toward no-laugh.
class GreedyPolicy : public Policy {
 public:
  GreedyPolicy(const nn::Network& net, double clip = kDefaultClip);
  std::string name() const override { return "greedy"; }
  std::vector<double> laugh_prob(const data::Trajectory& traj) const override;

 private:
  const nn::Network& net_;
  double clip_;
};

// Deterministic action = laugh iff softmax(Q)_laugh >= tau, then clipped.
class SoftmaxThresholdPolicy : public Policy {
 public:
  SoftmaxThresholdPolicy(const nn::Network& net, double tau,
                         double clip = kDefaultClip);
  std::string name() const override;
  std::vector<double> laugh_prob(const data::Trajectory& traj) const override;

 private:
  const nn::Network& net_;
  double tau_, clip_;
};

// Same thresholding on a supervised classifier's laugh probability.
class SupervisedThresholdPolicy : public Policy {
 public:
  SupervisedThresholdPolicy(const nn::Network& net, double tau,
                            double clip = kDefaultClip);
  std::string name() const override;
  std::vector<double> laugh_prob(const data::Trajectory& traj) const override;

 private:
  const nn::Network& net_;
  double tau_, clip_;
};

// k-NN estimate of the logging policy: P(laugh|s) =
// (laughs among the k nearest reference states + 1) / (k + 2), clamped.
struct BehaviorPolicyEstimate {
  size_t dim = 0;
  size_t k = 50;
  double prob_floor = 0.01;
  std::vector<float> ref_states;   // normalized, n_ref x dim
  std::vector<uint8_t> ref_actions;
  std::vector<float> mean, inv_std;  // z-scoring used for the distance
  size_t n_ref() const { return dim ? ref_states.size() / dim : 0; }
};

// Reference set drawn from the given trajectories (uniformly subsampled to
// max_reference when larger; exact k-NN is run against this set).
BehaviorPolicyEstimate estimate_behavior_policy(const data::BatchDataset& ds,
                                                const std::vector<size_t>& traj_idx,
                                                size_t k = 50,
                                                size_t max_reference = 20000,
                                                uint64_t seed = 0);

std::vector<double> behavior_laugh_prob(const BehaviorPolicyEstimate& est,
                                        const data::Trajectory& traj);

double knn_laugh_prob(const BehaviorPolicyEstimate& est, const float* state);

// Wraps the estimate as an evaluation policy (unclipped probabilities).
class BehaviorEstimatePolicy : public Policy {
 public:
  explicit BehaviorEstimatePolicy(const BehaviorPolicyEstimate& est) : est_(est) {}
  std::string name() const override { return "behavior-estimate"; }
  std::vector<double> laugh_prob(const data::Trajectory& traj) const override {
    return behavior_laugh_prob(est_, traj);
  }

 private:
  const BehaviorPolicyEstimate& est_;
};

// Fixed per-trajectory probabilities, keyed by trajectory index; used for
// oracle policies and in tests.
class TabularPolicy : public Policy {
 public:
  TabularPolicy(std::string name,
                std::vector<std::vector<double>> probs_by_traj,
                const data::BatchDataset& ds)
      : name_(std::move(name)), probs_(std::move(probs_by_traj)), ds_(&ds) {}
  std::string name() const override { return name_; }
  std::vector<double> laugh_prob(const data::Trajectory& traj) const override;

 private:
  std::string name_;
  std::vector<std::vector<double>> probs_;
  const data::BatchDataset* ds_;
};

struct Segment {
  size_t traj = 0;   // index into ds.trajectories
  size_t start = 0;  // first tuple index
};

struct SlidingResult {
  std::vector<Segment> segments;
  size_t skipped = 0;  // trajectories shorter than the horizon
};

// Every contiguous length-T tuple window of every listed trajectory,
// advancing by `shift`.
SlidingResult sliding_trajectories(const data::BatchDataset& ds,
                                   const std::vector<size_t>& traj_idx,
                                   size_t horizon = 200, size_t shift = 1);

struct OpeEstimate {
  double value = 0.0;
  size_t n_segments = 0;
  size_t horizon = 0;
  std::vector<double> ess;  // effective sample size per step
  double ess_min = 0.0;
  double laugh_fraction = 0.0;  // of the evaluated policy over batch states
  bool warm_start = true;       // recurrent policies warmed from trajectory start
};

// Step-wise weighted importance sampling with log-space cumulative weights.
// pi_probs / pib_probs are per-trajectory P(laugh) arrays indexed like
// ds.trajectories (only entries referenced by segments need be filled).
OpeEstimate step_wis(const data::BatchDataset& ds, const std::vector<Segment>& segments,
                     const std::vector<std::vector<double>>& pi_probs,
                     const std::vector<std::vector<double>>& pib_probs,
                     double gamma = 0.99, size_t horizon = 200);

// Average discounted return of the segments (the behavior value).
double empirical_segment_return(const data::BatchDataset& ds,
                                const std::vector<Segment>& segments, double gamma,
                                size_t horizon);

struct SweepRow {
  std::string policy;
  double tau = 0.0;  // NaN-free: 0 for non-threshold policies
  double laugh_fraction = 0.0;
  double value = 0.0;
  double ess_min = 0.0;
  size_t n_segments = 0;
};

// Evaluate one policy over the given trajectories.
SweepRow evaluate_policy(const data::BatchDataset& ds,
                         const std::vector<size_t>& traj_idx, const Policy& pi,
                         const std::vector<std::vector<double>>& pib_probs,
                         double gamma = 0.99, size_t horizon = 200, size_t shift = 1);

std::vector<std::vector<double>> policy_probs_by_traj(
    const data::BatchDataset& ds, const std::vector<size_t>& traj_idx,
    const Policy& pi);

void write_ope_report(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace bcrl::ope

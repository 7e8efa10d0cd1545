#include "bcrl/ope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "bcrl/io_util.hpp"
#include "bcrl/kernels.hpp"
#include "bcrl/qtrain.hpp"

namespace bcrl::ope {

namespace {

// Per-step Q rows for one trajectory, routed through the body-appropriate
// forward pass.
std::vector<std::array<double, 2>> q_per_step(const nn::Network& net,
                                              const data::Trajectory& traj) {
  if (net.recurrent()) return qtrain::q_values_recurrent(net, traj);
  size_t n = traj.n_tuples();
  kernels::Mat x(n, traj.state_dim);
  for (size_t k = 0; k < n; ++k) {
    const float* s = traj.state(k);
    for (size_t d = 0; d < traj.state_dim; ++d) x.at(k, d) = s[d];
  }
  kernels::Mat q = net.forward_one(x);
  std::vector<std::array<double, 2>> out(n);
  for (size_t k = 0; k < n; ++k) out[k] = {q.at(k, 0), q.at(k, 1)};
  return out;
}

std::string fmt_tau(double tau) {
  std::ostringstream os;
  os << tau;
  return os.str();
}

}  // namespace

GreedyPolicy::GreedyPolicy(const nn::Network& net, double clip)
    : net_(net), clip_(clip) {}

std::vector<double> GreedyPolicy::laugh_prob(const data::Trajectory& traj) const {
  auto q = q_per_step(net_, traj);
  std::vector<double> p(q.size());
  for (size_t k = 0; k < q.size(); ++k)
    p[k] = q[k][1] > q[k][0] ? clip_ : 1.0 - clip_;  // tie -> no-laugh
  return p;
}

SoftmaxThresholdPolicy::SoftmaxThresholdPolicy(const nn::Network& net, double tau,
                                               double clip)
    : net_(net), tau_(tau), clip_(clip) {}

std::string SoftmaxThresholdPolicy::name() const {
  return "softmax-threshold(tau=" + fmt_tau(tau_) + ")";
}

std::vector<double> SoftmaxThresholdPolicy::laugh_prob(
    const data::Trajectory& traj) const {
  auto q = q_per_step(net_, traj);
  std::vector<double> p(q.size());
  for (size_t k = 0; k < q.size(); ++k) {
    double probs[2];
    nn::softmax2(q[k].data(), probs);
    p[k] = probs[1] >= tau_ ? clip_ : 1.0 - clip_;
  }
  return p;
}

SupervisedThresholdPolicy::SupervisedThresholdPolicy(const nn::Network& net,
                                                     double tau, double clip)
    : net_(net), tau_(tau), clip_(clip) {}

std::string SupervisedThresholdPolicy::name() const {
  return "supervised-threshold(tau=" + fmt_tau(tau_) + ")";
}

std::vector<double> SupervisedThresholdPolicy::laugh_prob(
    const data::Trajectory& traj) const {
  auto logits = q_per_step(net_, traj);
  std::vector<double> p(logits.size());
  for (size_t k = 0; k < logits.size(); ++k) {
    double probs[2];
    nn::softmax2(logits[k].data(), probs);
    p[k] = probs[1] >= tau_ ? clip_ : 1.0 - clip_;
  }
  return p;
}

std::vector<double> TabularPolicy::laugh_prob(const data::Trajectory& traj) const {
  for (size_t i = 0; i < ds_->trajectories.size(); ++i) {
    if (&ds_->trajectories[i] == &traj) {
      if (i >= probs_.size() || probs_[i].size() != traj.n_tuples())
        throw std::runtime_error("tabular policy: missing probabilities for trajectory " +
                                 traj.dialog_id);
      return probs_[i];
    }
  }
  throw std::runtime_error("tabular policy: unknown trajectory " + traj.dialog_id);
}

BehaviorPolicyEstimate estimate_behavior_policy(const data::BatchDataset& ds,
                                                const std::vector<size_t>& traj_idx,
                                                size_t k, size_t max_reference,
                                                uint64_t seed) {
  if (k == 0) throw std::invalid_argument("behavior estimate: k must be positive");
  size_t dim = 0, total = 0;
  for (size_t ti : traj_idx) {
    const auto& t = ds.trajectories.at(ti);
    if (dim == 0) dim = t.state_dim;
    if (t.state_dim != dim)
      throw std::runtime_error("behavior estimate: mixed state dims");
    total += t.n_tuples();
  }
  if (total == 0) throw std::runtime_error("behavior estimate: empty batch");
  if (k >= total)
    throw std::invalid_argument("behavior estimate: k exceeds available tuples");

  // Gather (state, action) pairs, subsampling without replacement when the
  // pool is larger than max_reference.
  std::vector<float> raw;
  std::vector<uint8_t> acts;
  if (total <= max_reference) {
    raw.reserve(total * dim);
    acts.reserve(total);
    for (size_t ti : traj_idx) {
      const auto& t = ds.trajectories.at(ti);
      for (size_t j = 0; j < t.n_tuples(); ++j) {
        const float* s = t.state(j);
        raw.insert(raw.end(), s, s + dim);
        acts.push_back(t.actions[j]);
      }
    }
  } else {
    std::vector<uint8_t> take(total, 0);
    data::Rng rng(seed ^ 0xB0C5u);
    size_t chosen = 0;
    // Reservoir-free selection: mark max_reference distinct positions.
    while (chosen < max_reference) {
      size_t pos = rng.index(total);
      if (!take[pos]) { take[pos] = 1; ++chosen; }
    }
    raw.reserve(max_reference * dim);
    acts.reserve(max_reference);
    size_t flat = 0;
    for (size_t ti : traj_idx) {
      const auto& t = ds.trajectories.at(ti);
      for (size_t j = 0; j < t.n_tuples(); ++j, ++flat) {
        if (!take[flat]) continue;
        const float* s = t.state(j);
        raw.insert(raw.end(), s, s + dim);
        acts.push_back(t.actions[j]);
      }
    }
  }

  BehaviorPolicyEstimate est;
  est.dim = dim;
  est.k = k;
  est.ref_actions = std::move(acts);
  size_t n = est.ref_actions.size();

  // z-score each dim over the reference set so the Euclidean distance weighs
  // dims comparably.
  est.mean.assign(dim, 0.0f);
  est.inv_std.assign(dim, 0.0f);
  std::vector<double> mu(dim, 0.0), ss(dim, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t d = 0; d < dim; ++d) mu[d] += raw[i * dim + d];
  for (size_t d = 0; d < dim; ++d) mu[d] /= double(n);
  for (size_t i = 0; i < n; ++i)
    for (size_t d = 0; d < dim; ++d) {
      double c = raw[i * dim + d] - mu[d];
      ss[d] += c * c;
    }
  for (size_t d = 0; d < dim; ++d) {
    double sd = std::sqrt(ss[d] / double(n));
    est.mean[d] = float(mu[d]);
    est.inv_std[d] = float(1.0 / std::max(sd, 1e-8));
  }
  est.ref_states.resize(n * dim);
  for (size_t i = 0; i < n; ++i)
    for (size_t d = 0; d < dim; ++d)
      est.ref_states[i * dim + d] =
          (raw[i * dim + d] - est.mean[d]) * est.inv_std[d];
  return est;
}

double knn_laugh_prob(const BehaviorPolicyEstimate& est, const float* state) {
  std::vector<float> q(est.dim);
  for (size_t d = 0; d < est.dim; ++d)
    q[d] = (state[d] - est.mean[d]) * est.inv_std[d];
  std::vector<uint32_t> idx(est.k);
  kernels::knn_serial(q.data(), 1, est.ref_states.data(), est.n_ref(), est.dim,
                      est.k, idx.data());
  size_t laughs = 0;
  for (uint32_t i : idx) laughs += est.ref_actions[i];
  double p = (double(laughs) + 1.0) / (double(est.k) + 2.0);
  return std::clamp(p, est.prob_floor, 1.0 - est.prob_floor);
}

std::vector<double> behavior_laugh_prob(const BehaviorPolicyEstimate& est,
                                        const data::Trajectory& traj) {
  size_t n = traj.n_tuples();
  if (traj.state_dim != est.dim)
    throw std::runtime_error("behavior estimate: state dim mismatch");
  std::vector<float> q(n * est.dim);
  for (size_t i = 0; i < n; ++i) {
    const float* s = traj.state(i);
    for (size_t d = 0; d < est.dim; ++d)
      q[i * est.dim + d] = (s[d] - est.mean[d]) * est.inv_std[d];
  }
  std::vector<uint32_t> idx(n * est.k);
  kernels::knn_omp(q.data(), n, est.ref_states.data(), est.n_ref(), est.dim,
                   est.k, idx.data());
  std::vector<double> p(n);
  for (size_t i = 0; i < n; ++i) {
    size_t laughs = 0;
    for (size_t j = 0; j < est.k; ++j) laughs += est.ref_actions[idx[i * est.k + j]];
    p[i] = std::clamp((double(laughs) + 1.0) / (double(est.k) + 2.0),
                      est.prob_floor, 1.0 - est.prob_floor);
  }
  return p;
}

SlidingResult sliding_trajectories(const data::BatchDataset& ds,
                                   const std::vector<size_t>& traj_idx,
                                   size_t horizon, size_t shift) {
  if (horizon == 0 || shift == 0)
    throw std::invalid_argument("sliding segments: horizon and shift must be positive");
  SlidingResult res;
  for (size_t ti : traj_idx) {
    size_t n = ds.trajectories.at(ti).n_tuples();
    if (n < horizon) {
      ++res.skipped;
      continue;
    }
    for (size_t s = 0; s + horizon <= n; s += shift)
      res.segments.push_back({ti, s});
  }
  return res;
}

OpeEstimate step_wis(const data::BatchDataset& ds,
                     const std::vector<Segment>& segments,
                     const std::vector<std::vector<double>>& pi_probs,
                     const std::vector<std::vector<double>>& pib_probs,
                     double gamma, size_t horizon) {
  OpeEstimate est;
  est.horizon = horizon;
  est.n_segments = segments.size();
  if (segments.empty()) return est;

  size_t n = segments.size();
  for (const Segment& sg : segments) {
    size_t need = sg.start + horizon;
    if (sg.traj >= ds.trajectories.size() ||
        ds.trajectories[sg.traj].n_tuples() < need ||
        sg.traj >= pi_probs.size() || pi_probs[sg.traj].size() < need ||
        sg.traj >= pib_probs.size() || pib_probs[sg.traj].size() < need)
      throw std::runtime_error("step-WIS: segment exceeds available probabilities");
  }
  // log importance ratio per (segment, step), cumulative over the segment.
  std::vector<double> logr(n * horizon);
  int bad_behavior = 0;  // can't throw from inside the parallel region
#pragma omp parallel for schedule(static) reduction(| : bad_behavior)
  for (long long si = 0; si < (long long)n; ++si) {
    const Segment& sg = segments[si];
    const auto& traj = ds.trajectories[sg.traj];
    const auto& pi = pi_probs[sg.traj];
    const auto& pib = pib_probs[sg.traj];
    double acc = 0.0;
    for (size_t t = 0; t < horizon; ++t) {
      size_t k = sg.start + t;
      uint8_t a = traj.actions[k];
      double p = a ? pi[k] : 1.0 - pi[k];
      double b = a ? pib[k] : 1.0 - pib[k];
      if (!(b > 0.0)) bad_behavior = 1;
      acc += std::log(std::max(p, 1e-300)) - std::log(std::max(b, 1e-300));
      logr[si * horizon + t] = acc;
    }
  }
  if (bad_behavior)
    throw std::runtime_error("step-WIS: behavior probability is zero for a taken action");

  est.ess.assign(horizon, 0.0);
  double value = 0.0;
  double disc = 1.0;
  std::vector<double> w(n);
  for (size_t t = 0; t < horizon; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t si = 0; si < n; ++si)
      mx = std::max(mx, logr[si * horizon + t]);
    double z = 0.0;
    for (size_t si = 0; si < n; ++si) {
      w[si] = std::exp(logr[si * horizon + t] - mx);
      z += w[si];
    }
    double step_val = 0.0, sq = 0.0;
    for (size_t si = 0; si < n; ++si) {
      double wn = w[si] / z;
      const Segment& sg = segments[si];
      step_val += wn * ds.trajectories[sg.traj].rewards[sg.start + t];
      sq += wn * wn;
    }
    est.ess[t] = 1.0 / sq;
    value += disc * step_val;
    disc *= gamma;
  }
  est.value = value;
  est.ess_min = *std::min_element(est.ess.begin(), est.ess.end());
  return est;
}

double empirical_segment_return(const data::BatchDataset& ds,
                                const std::vector<Segment>& segments, double gamma,
                                size_t horizon) {
  if (segments.empty()) return 0.0;
  double total = 0.0;
  for (const Segment& sg : segments) {
    const auto& traj = ds.trajectories[sg.traj];
    double g = 0.0, disc = 1.0;
    for (size_t t = 0; t < horizon; ++t) {
      g += disc * traj.rewards[sg.start + t];
      disc *= gamma;
    }
    total += g;
  }
  return total / double(segments.size());
}

std::vector<std::vector<double>> policy_probs_by_traj(
    const data::BatchDataset& ds, const std::vector<size_t>& traj_idx,
    const Policy& pi) {
  std::vector<std::vector<double>> probs(ds.trajectories.size());
  for (size_t ti : traj_idx) probs[ti] = pi.laugh_prob(ds.trajectories[ti]);
  return probs;
}

SweepRow evaluate_policy(const data::BatchDataset& ds,
                         const std::vector<size_t>& traj_idx, const Policy& pi,
                         const std::vector<std::vector<double>>& pib_probs,
                         double gamma, size_t horizon, size_t shift) {
  auto sliding = sliding_trajectories(ds, traj_idx, horizon, shift);
  auto pi_probs = policy_probs_by_traj(ds, traj_idx, pi);
  OpeEstimate est =
      step_wis(ds, sliding.segments, pi_probs, pib_probs, gamma, horizon);

  size_t laughs = 0, steps = 0;
  for (size_t ti : traj_idx) {
    for (double p : pi_probs[ti]) {
      laughs += p > 0.5 ? 1 : 0;
      ++steps;
    }
  }
  SweepRow row;
  row.policy = pi.name();
  row.laugh_fraction = steps ? double(laughs) / double(steps) : 0.0;
  row.value = est.value;
  row.ess_min = est.ess_min;
  row.n_segments = est.n_segments;
  return row;
}

void write_ope_report(const std::string& path, const std::vector<SweepRow>& rows) {
  io::CsvWriter csv(path,
                    {"policy", "tau", "laugh_fraction", "value", "ess_min",
                     "n_segments"});
  for (const auto& r : rows) {
    csv.row({r.policy, std::to_string(r.tau), std::to_string(r.laugh_fraction),
             std::to_string(r.value), std::to_string(r.ess_min),
             std::to_string(r.n_segments)});
  }
}

}  // namespace bcrl::ope

#include "bcrl/qtrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bcrl/io_util.hpp"

namespace bcrl::qtrain {

using data::BatchDataset;
using data::Trajectory;
using nn::Mat;

namespace {

constexpr size_t kEvalChunk = 4096;     // feedforward states per eval batch
constexpr size_t kRecurrentEvalBatch = 4;  // trajectories per recurrent unroll

Mat states_to_mat(const Trajectory& t, const std::vector<size_t>& rows) {
  Mat x(rows.size(), t.state_dim);
  for (size_t i = 0; i < rows.size(); ++i) {
    const float* s = t.state(rows[i]);
    double* d = x.row(i);
    for (uint32_t j = 0; j < t.state_dim; ++j) d[j] = s[j];
  }
  return x;
}

struct TupleRef {
  uint32_t traj;
  uint32_t k;
};

std::vector<TupleRef> all_tuples(const BatchDataset& ds,
                                 const std::vector<size_t>& traj_idx) {
  std::vector<TupleRef> out;
  for (size_t ti : traj_idx) {
    const auto& t = ds.trajectories[ti];
    for (size_t k = 0; k < t.n_tuples(); ++k)
      out.push_back({static_cast<uint32_t>(ti), static_cast<uint32_t>(k)});
  }
  return out;
}

}  // namespace

std::vector<nn::LayerSpec> body_specs(Body body, size_t input_dim, size_t hidden1,
                                      size_t hidden2) {
  using nn::Activation;
  using nn::LayerKind;
  switch (body) {
    case Body::mlp:
      return {{LayerKind::dense, input_dim, hidden1, Activation::relu},
              {LayerKind::dense, hidden1, hidden2, Activation::relu},
              {LayerKind::dense, hidden2, 2, Activation::identity}};
    case Body::fc_lstm:
      return {{LayerKind::lstm, input_dim, hidden1, Activation::identity},
              {LayerKind::dense, hidden1, hidden2, Activation::relu},
              {LayerKind::dense, hidden2, 2, Activation::identity}};
    case Body::linear:
      return {{LayerKind::dense, input_dim, 2, Activation::identity}};
  }
  throw std::invalid_argument("unknown body");
}

double bellman_target(double r, bool terminal, const std::array<double, 2>& q_next,
                      double gamma) {
  if (terminal) return r;
  if (!std::isfinite(q_next[0]) || !std::isfinite(q_next[1]))
    throw std::runtime_error("non-finite Q value in Bellman target");
  return r + gamma * std::max(q_next[0], q_next[1]);
}

double bellman_residual_from_q(const std::vector<std::array<double, 2>>& q,
                               const Trajectory& traj, double gamma) {
  const size_t n = traj.n_tuples();
  if (q.size() != n) throw std::invalid_argument("tabular Q size mismatch");
  double acc = 0.0;
  for (size_t k = 0; k < n; ++k) {
    const double target =
        traj.terminal(k)
            ? traj.rewards[k]
            : bellman_target(traj.rewards[k], false, q[k + 1], gamma);
    const double diff = q[k][traj.actions[k]] - target;
    acc += diff * diff;
  }
  return acc / static_cast<double>(n);
}

std::vector<std::vector<std::array<double, 2>>> q_values_feedforward(
    const nn::Network& net, const BatchDataset& ds,
    const std::vector<size_t>& traj_idx) {
  std::vector<std::vector<std::array<double, 2>>> out;
  for (size_t ti : traj_idx) {
    const auto& t = ds.trajectories[ti];
    std::vector<std::array<double, 2>> q(t.n_tuples());
    for (size_t base = 0; base < t.n_tuples(); base += kEvalChunk) {
      const size_t hi = std::min(base + kEvalChunk, t.n_tuples());
      std::vector<size_t> rows(hi - base);
      std::iota(rows.begin(), rows.end(), base);
      const Mat y = net.forward_one(states_to_mat(t, rows));
      for (size_t i = 0; i < rows.size(); ++i) q[base + i] = {y.at(i, 0), y.at(i, 1)};
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<std::array<double, 2>> q_values_recurrent(const nn::Network& net,
                                                      const Trajectory& traj) {
  const size_t n = traj.n_tuples();
  std::vector<Mat> xs(n);
  for (size_t k = 0; k < n; ++k) xs[k] = states_to_mat(traj, {k});
  const auto cache = net.forward(xs);
  std::vector<std::array<double, 2>> q(n);
  for (size_t k = 0; k < n; ++k) q[k] = {cache.out[k].at(0, 0), cache.out[k].at(0, 1)};
  return q;
}

namespace {

// Batched full-trajectory unroll for equal-length trajectories.
std::vector<std::vector<std::array<double, 2>>> q_values_recurrent_group(
    const nn::Network& net, const BatchDataset& ds, const std::vector<size_t>& group) {
  const size_t n = ds.trajectories[group[0]].n_tuples();
  std::vector<Mat> xs(n);
  for (size_t k = 0; k < n; ++k) {
    Mat x(group.size(), ds.trajectories[group[0]].state_dim);
    for (size_t b = 0; b < group.size(); ++b) {
      const float* s = ds.trajectories[group[b]].state(k);
      double* d = x.row(b);
      for (uint32_t j = 0; j < x.cols; ++j) d[j] = s[j];
    }
    xs[k] = std::move(x);
  }
  const auto cache = net.forward(xs);
  std::vector<std::vector<std::array<double, 2>>> out(group.size());
  for (size_t b = 0; b < group.size(); ++b) {
    out[b].resize(n);
    for (size_t k = 0; k < n; ++k)
      out[b][k] = {cache.out[k].at(b, 0), cache.out[k].at(b, 1)};
  }
  return out;
}

std::vector<std::vector<std::array<double, 2>>> q_values_any(
    const nn::Network& net, const BatchDataset& ds,
    const std::vector<size_t>& traj_idx) {
  if (!net.recurrent()) return q_values_feedforward(net, ds, traj_idx);
  // Group equal-length trajectories so the unroll is batched.
  std::vector<std::vector<std::array<double, 2>>> out(traj_idx.size());
  std::vector<std::pair<size_t, size_t>> by_len;  // (n_tuples, position)
  for (size_t i = 0; i < traj_idx.size(); ++i)
    by_len.emplace_back(ds.trajectories[traj_idx[i]].n_tuples(), i);
  std::sort(by_len.begin(), by_len.end());
  size_t i = 0;
  while (i < by_len.size()) {
    std::vector<size_t> group, positions;
    const size_t len = by_len[i].first;
    while (i < by_len.size() && by_len[i].first == len &&
           group.size() < kRecurrentEvalBatch) {
      group.push_back(traj_idx[by_len[i].second]);
      positions.push_back(by_len[i].second);
      ++i;
    }
    auto qs = q_values_recurrent_group(net, ds, group);
    for (size_t g = 0; g < group.size(); ++g) out[positions[g]] = std::move(qs[g]);
  }
  return out;
}

}  // namespace

BatchEval evaluate(const nn::Network& net, const BatchDataset& ds,
                   const std::vector<size_t>& traj_idx, double gamma) {
  if (traj_idx.empty()) throw std::invalid_argument("empty evaluation batch");
  const auto qs = q_values_any(net, ds, traj_idx);
  double acc = 0.0, qacc = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < traj_idx.size(); ++i) {
    const auto& t = ds.trajectories[traj_idx[i]];
    const auto& q = qs[i];
    for (size_t k = 0; k < t.n_tuples(); ++k) {
      const double target =
          t.terminal(k) ? t.rewards[k]
                        : bellman_target(t.rewards[k], false, q[k + 1], gamma);
      const double diff = q[k][t.actions[k]] - target;
      acc += diff * diff;
      qacc += std::max(q[k][0], q[k][1]);
      ++n;
    }
  }
  return {acc / static_cast<double>(n), qacc / static_cast<double>(n)};
}

double bellman_residual(const nn::Network& net, const BatchDataset& ds,
                        const std::vector<size_t>& traj_idx, double gamma) {
  return evaluate(net, ds, traj_idx, gamma).bellman_residual;
}

double mean_q(const nn::Network& net, const BatchDataset& ds,
              const std::vector<size_t>& traj_idx) {
  return evaluate(net, ds, traj_idx, 0.0).mean_q;
}

namespace {

struct Checkpointer {
  const BatchDataset& ds;
  const std::vector<size_t>&train_idx, &test_idx;
  const TrainerConfig& cfg;
  ResidualReport report;

  void record(const nn::Network& net, size_t update, double loss) {
    const auto tr = evaluate(net, ds, train_idx, cfg.gamma);
    const auto te = evaluate(net, ds, test_idx, cfg.gamma);
    report.points.push_back({update, tr.bellman_residual, te.bellman_residual,
                             tr.mean_q, te.mean_q, loss});
    if (update == 0) {
      report.initial_train_br = tr.bellman_residual;
      report.initial_test_br = te.bellman_residual;
      return;
    }
    const double limit = cfg.divergence_factor *
                         std::max(report.initial_train_br, 1e-12);
    if (!std::isfinite(tr.bellman_residual) || tr.bellman_residual > limit)
      throw DivergenceError(
          "training diverged: Bellman residual " +
              std::to_string(tr.bellman_residual) + " exceeds " +
              std::to_string(cfg.divergence_factor) + "x initial " +
              std::to_string(report.initial_train_br),
          report);
  }
};

void optimizer_step(std::vector<double>& params, std::vector<double>& grads,
                    nn::AdamState& state, const TrainerConfig& cfg, bool clip) {
  if (clip) nn::clip_global_norm(grads, cfg.grad_clip);
  if (cfg.use_sgd)
    nn::sgd_step(params, grads, cfg.opt.lr);
  else
    nn::adam_step(params, grads, state, cfg.opt);
}

}  // namespace

TrainResult train_mlp(const BatchDataset& ds, const std::vector<size_t>& train_idx,
                      const std::vector<size_t>& test_idx, const TrainerConfig& cfg) {
  if (cfg.body == Body::fc_lstm)
    throw std::invalid_argument("train_mlp expects a feedforward body");
  const size_t dim = ds.trajectories.at(train_idx.at(0)).state_dim;
  nn::Network net(body_specs(cfg.body, dim, cfg.hidden1, cfg.hidden2));
  net.init_params(cfg.seed);
  nn::Network target = net;
  nn::AdamState adam;
  data::Rng rng(cfg.seed ^ 0xA5A5A5A5ull);

  auto tuples = all_tuples(ds, train_idx);
  if (tuples.empty()) throw std::invalid_argument("empty training set");
  std::vector<size_t> order(tuples.size());
  std::iota(order.begin(), order.end(), 0);
  auto reshuffle = [&] {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.index(i)]);
  };
  reshuffle();
  size_t cursor = 0;

  Checkpointer cp{ds, train_idx, test_idx, cfg, {}};
  cp.record(net, 0, 0.0);

  const size_t B = cfg.minibatch;
  for (size_t update = 1; update <= cfg.updates; ++update) {
    Mat x(B, dim), x2(B, dim);
    std::vector<std::vector<uint8_t>> action(1);
    std::vector<std::vector<double>> tgt(1);
    action[0].resize(B);
    tgt[0].resize(B);
    std::vector<float> r(B);
    std::vector<uint8_t> term(B);
    for (size_t b = 0; b < B; ++b) {
      if (cursor == order.size()) {
        reshuffle();
        cursor = 0;
      }
      const auto& ref = tuples[order[cursor++]];
      const auto& t = ds.trajectories[ref.traj];
      const float* s = t.state(ref.k);
      const float* s2 = t.state(ref.k + 1);
      for (size_t j = 0; j < dim; ++j) {
        x.at(b, j) = s[j];
        x2.at(b, j) = s2[j];
      }
      action[0][b] = t.actions[ref.k];
      r[b] = t.rewards[ref.k];
      term[b] = t.terminal(ref.k) ? 1 : 0;
    }
    const Mat qn = target.forward_one(x2);
    for (size_t b = 0; b < B; ++b)
      tgt[0][b] = bellman_target(r[b], term[b] != 0, {qn.at(b, 0), qn.at(b, 1)},
                                 cfg.gamma);
    auto cache = net.forward({x});
    std::vector<Mat> dq;
    const double loss = nn::mse_on_selected_action(cache.out, action, tgt, &dq);
    auto grads = net.backward(cache, dq);
    optimizer_step(net.params(), grads, adam, cfg, false);
    if (cfg.target_sync > 0 && update % cfg.target_sync == 0)
      target.params() = net.params();
    if (update % cfg.eval_interval == 0 || update == cfg.updates)
      cp.record(net, update, loss);
  }
  return {std::move(net), std::move(cp.report)};
}

TrainResult train_lstm(const BatchDataset& ds, const std::vector<size_t>& train_idx,
                       const std::vector<size_t>& test_idx, const TrainerConfig& cfg) {
  if (cfg.body != Body::fc_lstm)
    throw std::invalid_argument("train_lstm expects the fc-lstm body");
  if (cfg.seq_len < 2) throw std::invalid_argument("sequence length must be >= 2");
  const size_t dim = ds.trajectories.at(train_idx.at(0)).state_dim;
  const size_t L = cfg.seq_len;
  nn::Network net(body_specs(cfg.body, dim, cfg.hidden1, cfg.hidden2));
  net.init_params(cfg.seed);
  nn::Network target = net;
  nn::AdamState adam;
  data::Rng rng(cfg.seed ^ 0xA5A5A5A5ull);

  // Only trajectories long enough to host a full window are sampled.
  std::vector<size_t> usable;
  for (size_t ti : train_idx)
    if (ds.trajectories[ti].n_states() > L) usable.push_back(ti);
  if (usable.empty())
    throw std::invalid_argument("no trajectory long enough for the window length");

  Checkpointer cp{ds, train_idx, test_idx, cfg, {}};
  cp.record(net, 0, 0.0);

  const size_t B = cfg.minibatch;
  for (size_t update = 1; update <= cfg.updates; ++update) {
    std::vector<const Trajectory*> traj(B);
    std::vector<size_t> start(B);
    for (size_t b = 0; b < B; ++b) {
      traj[b] = &ds.trajectories[usable[rng.index(usable.size())]];
      start[b] = rng.index(traj[b]->n_states() - L);
    }
    // Main network over the L window steps; target network over the same
    // window plus one step so both unroll from the same zero state.
    std::vector<Mat> xs(L), xs_t(L + 1);
    for (size_t t = 0; t <= L; ++t) {
      Mat x(B, dim);
      for (size_t b = 0; b < B; ++b) {
        const float* s = traj[b]->state(start[b] + t);
        double* d = x.row(b);
        for (size_t j = 0; j < dim; ++j) d[j] = s[j];
      }
      if (t < L) xs[t] = x;
      xs_t[t] = std::move(x);
    }
    const auto tcache = target.forward(xs_t);
    std::vector<std::vector<uint8_t>> action(L);
    std::vector<std::vector<double>> tgt(L);
    for (size_t t = 0; t < L; ++t) {
      action[t].resize(B);
      tgt[t].resize(B);
      for (size_t b = 0; b < B; ++b) {
        const size_t k = start[b] + t;
        action[t][b] = traj[b]->actions[k];
        tgt[t][b] = bellman_target(
            traj[b]->rewards[k], traj[b]->terminal(k),
            {tcache.out[t + 1].at(b, 0), tcache.out[t + 1].at(b, 1)}, cfg.gamma);
      }
    }
    auto cache = net.forward(xs);
    std::vector<Mat> dq;
    const double loss = nn::mse_on_selected_action(cache.out, action, tgt, &dq);
    auto grads = net.backward(cache, dq);
    optimizer_step(net.params(), grads, adam, cfg, true);
    if (cfg.target_sync > 0 && update % cfg.target_sync == 0)
      target.params() = net.params();
    if (update % cfg.eval_interval == 0 || update == cfg.updates)
      cp.record(net, update, loss);
  }
  return {std::move(net), std::move(cp.report)};
}

nn::Network train_supervised(const BatchDataset& ds,
                             const std::vector<size_t>& train_idx,
                             const TrainerConfig& cfg) {
  const size_t dim = ds.trajectories.at(train_idx.at(0)).state_dim;
  nn::Network net(body_specs(Body::mlp, dim, cfg.hidden1, cfg.hidden2));
  net.init_params(cfg.seed);
  nn::AdamState adam;
  data::Rng rng(cfg.seed ^ 0x5A5A5A5Aull);

  auto tuples = all_tuples(ds, train_idx);
  size_t n_pos = 0;
  for (const auto& ref : tuples)
    n_pos += ds.trajectories[ref.traj].actions[ref.k];
  if (n_pos == 0 || n_pos == tuples.size())
    throw std::runtime_error("supervised training requires both classes present");
  const double n = static_cast<double>(tuples.size());
  const std::array<double, 2> weight{n / (2.0 * (n - static_cast<double>(n_pos))),
                                     n / (2.0 * static_cast<double>(n_pos))};

  std::vector<size_t> order(tuples.size());
  std::iota(order.begin(), order.end(), 0);
  auto reshuffle = [&] {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.index(i)]);
  };
  reshuffle();
  size_t cursor = 0;
  const size_t B = cfg.minibatch;
  for (size_t update = 1; update <= cfg.updates; ++update) {
    Mat x(B, dim);
    std::vector<uint8_t> labels(B);
    for (size_t b = 0; b < B; ++b) {
      if (cursor == order.size()) {
        reshuffle();
        cursor = 0;
      }
      const auto& ref = tuples[order[cursor++]];
      const auto& t = ds.trajectories[ref.traj];
      const float* s = t.state(ref.k);
      for (size_t j = 0; j < dim; ++j) x.at(b, j) = s[j];
      labels[b] = t.actions[ref.k];
    }
    auto cache = net.forward({x});
    Mat dlogits;
    nn::cross_entropy(cache.out[0], labels, weight, &dlogits);
    auto grads = net.backward(cache, {dlogits});
    nn::adam_step(net.params(), grads, adam, cfg.opt);
  }
  return net;
}

void write_training_log(const std::string& path, const ResidualReport& report) {
  io::CsvWriter csv(path, {"update", "split", "bellman_residual", "mean_q", "loss"});
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (const auto& p : report.points) {
    csv.row({std::to_string(p.update), "train", fmt(p.train_br), fmt(p.train_mean_q),
             fmt(p.loss)});
    csv.row({std::to_string(p.update), "test", fmt(p.test_br), fmt(p.test_mean_q),
             fmt(p.loss)});
  }
}

}  // namespace bcrl::qtrain

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bcrl/kernels.hpp"

namespace bcrl::nn {

using kernels::Mat;

enum class LayerKind : uint8_t { dense = 0, lstm = 1 };
enum class Activation : uint8_t { relu = 0, identity = 1 };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  size_t in = 0;
  size_t out = 0;
  Activation act = Activation::identity;  // ignored for lstm (cell defines its own)
};

size_t param_count(const LayerSpec& s);
size_t param_count(const std::vector<LayerSpec>& specs);
// Throws if sizes do not chain or any size is zero.
void validate_chain(const std::vector<LayerSpec>& specs);

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  uint64_t step = 0;
};

// Standard Adam with bias correction.  Throws on non-finite gradients without
// touching the parameters; verifies the updated parameters stay finite.
void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const OptimizerConfig& cfg);

// Plain SGD step, used only by the divergence-diagnostic configuration.
void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              double lr);

// Scales g in place so its global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::vector<double>& g, double max_norm);

// Activations cached by a forward pass, consumed by backward.
struct Cache {
  size_t steps = 0, batch = 0;
  std::vector<Mat> layer_in;            // [layer * steps + t] input to layer at step t
  std::vector<Mat> dense_pre;           // dense: preactivation
  std::vector<Mat> gates;               // lstm: sigmoided/tanhed gates, batch x 4H (i,f,g,o)
  std::vector<Mat> cell, cell_tanh, hidden;  // lstm per-step state
  std::vector<Mat> out;                 // [t] network output, batch x out_dim
};

class Network {
 public:
  explicit Network(std::vector<LayerSpec> specs);

  const std::vector<LayerSpec>& specs() const { return specs_; }
  size_t input_dim() const { return specs_.front().in; }
  size_t output_dim() const { return specs_.back().out; }
  size_t n_params() const { return params_.size(); }
  bool recurrent() const;
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Fan-in scaled uniform init (He for relu dense, Xavier otherwise); zero
  // biases except the LSTM forget gate at 1.
  void init_params(uint64_t seed);

  // xs[t] is a batch x input_dim matrix; recurrent layers carry state across
  // steps starting from zero.  Throws on dimension mismatch or non-finite
  // input.  Thread-safe (const): the cache carries all mutable state.
  Cache forward(const std::vector<Mat>& xs) const;
  // Single-step convenience for feedforward use.
  Mat forward_one(const Mat& x) const;

  // upstream[t] matches cache.out[t]; returns a flat gradient aligned with
  // params().  For sequences the gradient accumulates across all steps.
  std::vector<double> backward(const Cache& cache,
                               const std::vector<Mat>& upstream) const;

  void save(const std::string& path) const;
  static Network load(const std::string& path);

 private:
  std::vector<LayerSpec> specs_;
  std::vector<size_t> offsets_;  // param offset per layer
  std::vector<double> params_;
};

// Loss over the Q-output of the selected action only; entries indexed
// [t][b].  Gradient flows exclusively through the selected outputs.  If dq is
// non-null it is filled with matrices matching q.  Mean over all entries.
double mse_on_selected_action(const std::vector<Mat>& q,
                              const std::vector<std::vector<uint8_t>>& action,
                              const std::vector<std::vector<double>>& target,
                              std::vector<Mat>* dq = nullptr);

// Class-weighted softmax cross-entropy over 2-way logits; labels in {0,1}.
double cross_entropy(const Mat& logits, const std::vector<uint8_t>& labels,
                     const std::array<double, 2>& class_weight,
                     Mat* dlogits = nullptr);

void softmax2(const double* logits, double* probs);

struct GradientReport {
  double max_rel_error = 0.0;
  size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool pass = false;
};

// loss_fn evaluates the loss at the network's current parameters; when grad
// is non-null it must also fill the analytic flat gradient.  Central finite
// differences, relative error |ga-gn| / max(|ga|,|gn|,floor).
GradientReport gradient_check(
    Network& net,
    const std::function<double(const Network&, std::vector<double>* grad)>& loss_fn,
    double fd_step = 1e-5, double floor = 1e-8, double pass_threshold = 1e-4);

}  // namespace bcrl::nn

#include "bcrl/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "bcrl/io_util.hpp"

namespace bcrl::nn {

namespace {

using kernels::matmul_nn_acc_omp;
using kernels::matmul_nn_omp;
using kernels::matmul_nt_omp;
using kernels::matmul_tn_acc_omp;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Rng {
  uint64_t s;
  explicit Rng(uint64_t seed) : s(seed ^ 0x9E3779B97F4A7C15ull) {}
  uint64_t next() {
    // splitmix64
    uint64_t z = (s += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

bool all_finite(const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

void add_mat_into(const Mat& src, double* dst) {
  for (size_t i = 0; i < src.v.size(); ++i) dst[i] += src.v[i];
}

void colsum_into(const Mat& src, double* dst) {
  for (size_t i = 0; i < src.rows; ++i) {
    const double* r = src.row(i);
    for (size_t j = 0; j < src.cols; ++j) dst[j] += r[j];
  }
}

}  // namespace

size_t param_count(const LayerSpec& s) {
  if (s.kind == LayerKind::dense) return s.out * s.in + s.out;
  return 4 * (s.out * s.in + s.out * s.out + s.out);
}

size_t param_count(const std::vector<LayerSpec>& specs) {
  size_t n = 0;
  for (const auto& s : specs) n += param_count(s);
  return n;
}

void validate_chain(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw std::invalid_argument("empty layer chain");
  for (size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].in == 0 || specs[i].out == 0)
      throw std::invalid_argument("zero-sized layer");
    if (i > 0 && specs[i].in != specs[i - 1].out)
      throw std::invalid_argument("layer chain size mismatch at layer " +
                                  std::to_string(i));
  }
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const OptimizerConfig& cfg) {
  if (grads.size() != params.size())
    throw std::invalid_argument("gradient/parameter size mismatch");
  if (cfg.lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
  if (!all_finite(grads.data(), grads.size()))
    throw std::runtime_error("non-finite gradient, optimizer step aborted");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    params[i] -= cfg.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.eps);
  }
  if (!all_finite(params.data(), params.size()))
    throw std::runtime_error("non-finite parameters after optimizer step");
}

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              double lr) {
  if (grads.size() != params.size())
    throw std::invalid_argument("gradient/parameter size mismatch");
  for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

double clip_global_norm(std::vector<double>& g, double max_norm) {
  double ss = 0.0;
  for (double x : g) ss += x * x;
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& x : g) x *= scale;
  }
  return norm;
}

Network::Network(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
  validate_chain(specs_);
  offsets_.reserve(specs_.size());
  size_t off = 0;
  for (const auto& s : specs_) {
    offsets_.push_back(off);
    off += param_count(s);
  }
  params_.assign(off, 0.0);
}

bool Network::recurrent() const {
  for (const auto& s : specs_)
    if (s.kind == LayerKind::lstm) return true;
  return false;
}

void Network::init_params(uint64_t seed) {
  Rng rng(seed);
  for (size_t l = 0; l < specs_.size(); ++l) {
    const auto& s = specs_[l];
    double* p = params_.data() + offsets_[l];
    if (s.kind == LayerKind::dense) {
      const double limit = s.act == Activation::relu
                               ? std::sqrt(6.0 / static_cast<double>(s.in))
                               : std::sqrt(6.0 / static_cast<double>(s.in + s.out));
      for (size_t i = 0; i < s.out * s.in; ++i) p[i] = rng.uniform(-limit, limit);
      for (size_t i = 0; i < s.out; ++i) p[s.out * s.in + i] = 0.0;
    } else {
      const size_t H = s.out;
      const double lx = std::sqrt(6.0 / static_cast<double>(s.in + H));
      const double lh = std::sqrt(6.0 / static_cast<double>(H + H));
      double* wx = p;
      double* wh = p + 4 * H * s.in;
      double* b = wh + 4 * H * H;
      for (size_t i = 0; i < 4 * H * s.in; ++i) wx[i] = rng.uniform(-lx, lx);
      for (size_t i = 0; i < 4 * H * H; ++i) wh[i] = rng.uniform(-lh, lh);
      for (size_t i = 0; i < 4 * H; ++i) b[i] = 0.0;
      // forget gate bias at 1 (gate order i,f,g,o)
      for (size_t i = H; i < 2 * H; ++i) b[i] = 1.0;
    }
  }
}

Cache Network::forward(const std::vector<Mat>& xs) const {
  if (xs.empty()) throw std::invalid_argument("empty input sequence");
  const size_t T = xs.size();
  const size_t B = xs[0].rows;
  for (const auto& x : xs) {
    if (x.rows != B || x.cols != input_dim())
      throw std::invalid_argument("input dimension mismatch");
    if (!all_finite(x.v.data(), x.v.size()))
      throw std::invalid_argument("non-finite input");
  }
  const size_t L = specs_.size();
  Cache cache;
  cache.steps = T;
  cache.batch = B;
  cache.layer_in.resize(L * T);
  cache.dense_pre.resize(L * T);
  cache.gates.resize(L * T);
  cache.cell.resize(L * T);
  cache.cell_tanh.resize(L * T);
  cache.hidden.resize(L * T);
  cache.out.resize(T);

  std::vector<Mat> cur = xs;
  for (size_t l = 0; l < L; ++l) {
    const auto& s = specs_[l];
    const double* p = params_.data() + offsets_[l];
    if (s.kind == LayerKind::dense) {
      Mat w(s.out, s.in);
      std::copy(p, p + s.out * s.in, w.v.begin());
      const double* b = p + s.out * s.in;
      for (size_t t = 0; t < T; ++t) {
        cache.layer_in[l * T + t] = std::move(cur[t]);
        const Mat& x = cache.layer_in[l * T + t];
        Mat pre(B, s.out);
        matmul_nt_omp(x, w, pre);
        for (size_t i = 0; i < B; ++i)
          for (size_t j = 0; j < s.out; ++j) pre.at(i, j) += b[j];
        Mat y = pre;
        if (s.act == Activation::relu)
          for (double& v : y.v) v = v > 0.0 ? v : 0.0;
        cache.dense_pre[l * T + t] = std::move(pre);
        cur[t] = std::move(y);
      }
    } else {
      const size_t H = s.out;
      Mat wx(4 * H, s.in), wh(4 * H, H);
      std::copy(p, p + 4 * H * s.in, wx.v.begin());
      std::copy(p + 4 * H * s.in, p + 4 * H * s.in + 4 * H * H, wh.v.begin());
      const double* b = p + 4 * H * s.in + 4 * H * H;
      Mat h_prev(B, H), c_prev(B, H);  // zero initial state
      for (size_t t = 0; t < T; ++t) {
        cache.layer_in[l * T + t] = std::move(cur[t]);
        const Mat& x = cache.layer_in[l * T + t];
        Mat g(B, 4 * H);
        matmul_nt_omp(x, wx, g);
        Mat gh(B, 4 * H);
        matmul_nt_omp(h_prev, wh, gh);
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += gh.v[i];
        for (size_t i = 0; i < B; ++i) {
          double* gi = g.row(i);
          for (size_t j = 0; j < 4 * H; ++j) gi[j] += b[j];
          for (size_t j = 0; j < H; ++j) gi[j] = sigmoid(gi[j]);               // i
          for (size_t j = H; j < 2 * H; ++j) gi[j] = sigmoid(gi[j]);           // f
          for (size_t j = 2 * H; j < 3 * H; ++j) gi[j] = std::tanh(gi[j]);     // g
          for (size_t j = 3 * H; j < 4 * H; ++j) gi[j] = sigmoid(gi[j]);       // o
        }
        Mat c(B, H), ct(B, H), h(B, H);
        for (size_t i = 0; i < B; ++i) {
          const double* gi = g.row(i);
          const double* cp = c_prev.row(i);
          double* ci = c.row(i);
          double* cti = ct.row(i);
          double* hi = h.row(i);
          for (size_t j = 0; j < H; ++j) {
            ci[j] = gi[H + j] * cp[j] + gi[j] * gi[2 * H + j];
            cti[j] = std::tanh(ci[j]);
            hi[j] = gi[3 * H + j] * cti[j];
          }
        }
        cache.gates[l * T + t] = std::move(g);
        cache.cell[l * T + t] = c;
        cache.cell_tanh[l * T + t] = std::move(ct);
        cache.hidden[l * T + t] = h;
        h_prev = std::move(h);
        c_prev = std::move(c);
        cur[t] = cache.hidden[l * T + t];
      }
    }
  }
  for (size_t t = 0; t < T; ++t) cache.out[t] = std::move(cur[t]);
  return cache;
}

Mat Network::forward_one(const Mat& x) const {
  auto cache = forward(std::vector<Mat>{x});
  return std::move(cache.out[0]);
}

std::vector<double> Network::backward(const Cache& cache,
                                      const std::vector<Mat>& upstream) const {
  const size_t T = cache.steps;
  const size_t B = cache.batch;
  const size_t L = specs_.size();
  if (upstream.size() != T)
    throw std::invalid_argument("upstream gradient step count mismatch");
  for (const auto& u : upstream)
    if (u.rows != B || u.cols != output_dim())
      throw std::invalid_argument("upstream gradient shape mismatch");
  if (cache.layer_in.size() != L * T)
    throw std::invalid_argument("cache does not match this network");

  std::vector<double> grad(params_.size(), 0.0);
  std::vector<Mat> d = upstream;  // gradient flowing into current layer's output

  for (size_t li = L; li-- > 0;) {
    const auto& s = specs_[li];
    const double* p = params_.data() + offsets_[li];
    double* gp = grad.data() + offsets_[li];
    if (s.kind == LayerKind::dense) {
      Mat w(s.out, s.in);
      std::copy(p, p + s.out * s.in, w.v.begin());
      Mat dw(s.out, s.in);
      std::vector<double> db(s.out, 0.0);
      for (size_t t = 0; t < T; ++t) {
        const Mat& x = cache.layer_in[li * T + t];
        Mat dpre = d[t];
        if (s.act == Activation::relu) {
          const Mat& pre = cache.dense_pre[li * T + t];
          for (size_t i = 0; i < dpre.v.size(); ++i)
            if (pre.v[i] <= 0.0) dpre.v[i] = 0.0;
        }
        matmul_tn_acc_omp(dpre, x, dw);
        colsum_into(dpre, db.data());
        Mat dx(B, s.in);
        matmul_nn_omp(dpre, w, dx);
        d[t] = std::move(dx);
      }
      add_mat_into(dw, gp);
      for (size_t j = 0; j < s.out; ++j) gp[s.out * s.in + j] += db[j];
    } else {
      const size_t H = s.out;
      Mat wx(4 * H, s.in), wh(4 * H, H);
      std::copy(p, p + 4 * H * s.in, wx.v.begin());
      std::copy(p + 4 * H * s.in, p + 4 * H * s.in + 4 * H * H, wh.v.begin());
      Mat dwx(4 * H, s.in), dwh(4 * H, H);
      std::vector<double> db(4 * H, 0.0);
      Mat dh_next(B, H), dc_next(B, H);
      for (size_t t = T; t-- > 0;) {
        const Mat& g = cache.gates[li * T + t];
        const Mat& ct = cache.cell_tanh[li * T + t];
        const Mat& x = cache.layer_in[li * T + t];
        const Mat* c_prev = t > 0 ? &cache.cell[li * T + t - 1] : nullptr;
        const Mat* h_prev = t > 0 ? &cache.hidden[li * T + t - 1] : nullptr;
        Mat dg(B, 4 * H);
        Mat dc_prev(B, H);
        for (size_t i = 0; i < B; ++i) {
          const double* gi = g.row(i);
          const double* cti = ct.row(i);
          const double* cpi = c_prev ? c_prev->row(i) : nullptr;
          double* dgi = dg.row(i);
          double* dcpi = dc_prev.row(i);
          const double* du = d[t].row(i);
          const double* dhn = dh_next.row(i);
          const double* dcn = dc_next.row(i);
          for (size_t j = 0; j < H; ++j) {
            const double ig = gi[j], fg = gi[H + j], gg = gi[2 * H + j],
                         og = gi[3 * H + j];
            const double dh = du[j] + dhn[j];
            const double dct = dh * og;
            const double dc = dct * (1.0 - cti[j] * cti[j]) + dcn[j];
            const double do_ = dh * cti[j];
            const double di = dc * gg;
            const double dgg = dc * ig;
            const double df = dc * (cpi ? cpi[j] : 0.0);
            dcpi[j] = dc * fg;
            dgi[j] = di * ig * (1.0 - ig);
            dgi[H + j] = df * fg * (1.0 - fg);
            dgi[2 * H + j] = dgg * (1.0 - gg * gg);
            dgi[3 * H + j] = do_ * og * (1.0 - og);
          }
        }
        matmul_tn_acc_omp(dg, x, dwx);
        if (h_prev) matmul_tn_acc_omp(dg, *h_prev, dwh);
        colsum_into(dg, db.data());
        Mat dx(B, s.in);
        matmul_nn_omp(dg, wx, dx);
        d[t] = std::move(dx);
        if (t > 0) {
          Mat dhp(B, H);
          matmul_nn_omp(dg, wh, dhp);
          dh_next = std::move(dhp);
          dc_next = std::move(dc_prev);
        }
      }
      add_mat_into(dwx, gp);
      add_mat_into(dwh, gp + 4 * H * s.in);
      double* gb = gp + 4 * H * s.in + 4 * H * H;
      for (size_t j = 0; j < 4 * H; ++j) gb[j] += db[j];
    }
  }
  return grad;
}

void Network::save(const std::string& path) const {
  io::BinaryWriter w(path);
  io::write_magic(w, "BCQN");
  w.crc_begin();
  w.u32(1);  // version
  w.u32(static_cast<uint32_t>(specs_.size()));
  for (const auto& s : specs_) {
    w.u8(static_cast<uint8_t>(s.kind));
    w.u8(static_cast<uint8_t>(s.act));
    w.u32(static_cast<uint32_t>(s.in));
    w.u32(static_cast<uint32_t>(s.out));
  }
  w.u64(params_.size());
  w.f64_array(params_.data(), params_.size());
  w.crc_end();
  w.close();
}

Network Network::load(const std::string& path) {
  io::BinaryReader r(path);
  io::expect_magic(r, "BCQN", path);
  r.crc_begin();
  const uint32_t version = r.u32();
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  const uint32_t n = r.u32();
  std::vector<LayerSpec> specs(n);
  for (auto& s : specs) {
    s.kind = static_cast<LayerKind>(r.u8());
    s.act = static_cast<Activation>(r.u8());
    s.in = r.u32();
    s.out = r.u32();
  }
  Network net(std::move(specs));
  const uint64_t np = r.u64();
  if (np != net.n_params()) throw std::runtime_error("checkpoint parameter count mismatch");
  r.f64_array(net.params_.data(), np);
  r.crc_check(path);
  return net;
}

double mse_on_selected_action(const std::vector<Mat>& q,
                              const std::vector<std::vector<uint8_t>>& action,
                              const std::vector<std::vector<double>>& target,
                              std::vector<Mat>* dq) {
  if (q.size() != action.size() || q.size() != target.size())
    throw std::invalid_argument("loss input step counts differ");
  size_t n = 0;
  for (const auto& a : action) n += a.size();
  if (n == 0) throw std::invalid_argument("empty loss batch");
  if (dq) {
    dq->clear();
    for (const auto& m : q) dq->emplace_back(m.rows, m.cols);
  }
  double loss = 0.0;
  for (size_t t = 0; t < q.size(); ++t) {
    for (size_t b = 0; b < action[t].size(); ++b) {
      const size_t a = action[t][b];
      if (a >= q[t].cols) throw std::invalid_argument("action out of range");
      if (!std::isfinite(target[t][b])) throw std::invalid_argument("non-finite target");
      const double diff = q[t].at(b, a) - target[t][b];
      loss += diff * diff;
      if (dq) (*dq)[t].at(b, a) = 2.0 * diff / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

void softmax2(const double* logits, double* probs) {
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  probs[0] = e0 / (e0 + e1);
  probs[1] = e1 / (e0 + e1);
}

double cross_entropy(const Mat& logits, const std::vector<uint8_t>& labels,
                     const std::array<double, 2>& class_weight, Mat* dlogits) {
  if (logits.cols != 2) throw std::invalid_argument("expected 2-way logits");
  if (labels.size() != logits.rows) throw std::invalid_argument("label count mismatch");
  const size_t n = logits.rows;
  if (n == 0) throw std::invalid_argument("empty loss batch");
  if (dlogits) *dlogits = Mat(n, 2);
  double loss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const uint8_t y = labels[i];
    if (y > 1) throw std::invalid_argument("label must be 0 or 1");
    double p[2];
    softmax2(logits.row(i), p);
    const double w = class_weight[y];
    loss += -w * std::log(std::max(p[y], 1e-300));
    if (dlogits) {
      for (int a = 0; a < 2; ++a)
        dlogits->at(i, a) = w * (p[a] - (a == y ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

GradientReport gradient_check(
    Network& net,
    const std::function<double(const Network&, std::vector<double>* grad)>& loss_fn,
    double fd_step, double floor, double pass_threshold) {
  std::vector<double> analytic;
  loss_fn(net, &analytic);
  GradientReport rep;
  auto& p = net.params();
  for (size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + fd_step;
    const double lp = loss_fn(net, nullptr);
    p[i] = saved - fd_step;
    const double lm = loss_fn(net, nullptr);
    p[i] = saved;
    const double numeric = (lp - lm) / (2.0 * fd_step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = analytic[i];
      rep.numeric_at_worst = numeric;
    }
  }
  rep.pass = rep.max_rel_error < pass_threshold;
  return rep;
}

}  // namespace bcrl::nn

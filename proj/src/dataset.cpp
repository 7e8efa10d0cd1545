#include "bcrl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "bcrl/io_util.hpp"

namespace bcrl::data {

uint64_t Rng::next() {
  uint64_t z = (s += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
double Rng::normal(double mean, double std) {
  // Box-Muller; consumes two uniforms per call.
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return mean + std * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}
double Rng::exponential(double mean) {
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  return -mean * std::log(u);
}
size_t Rng::index(size_t n) { return static_cast<size_t>(next() % n); }

TupleView tuple_at(const Trajectory& t, size_t k) {
  if (k >= t.n_tuples()) throw std::out_of_range("tuple index");
  return TupleView{t.state(k), t.actions[k], t.rewards[k], t.state(k + 1),
                   t.terminal(k)};
}

size_t BatchDataset::total_tuples() const {
  size_t n = 0;
  for (const auto& t : trajectories) n += t.n_tuples();
  return n;
}

double BatchDataset::laugh_fraction() const {
  size_t n = 0, laughs = 0;
  for (const auto& t : trajectories) {
    n += t.actions.size();
    for (uint8_t a : t.actions) laughs += a;
  }
  return n ? static_cast<double>(laughs) / static_cast<double>(n) : 0.0;
}

std::vector<uint8_t> rasterize_intervals(const std::vector<reward::Interval>& iv,
                                         double start_time, size_t count,
                                         double rate_hz) {
  std::vector<uint8_t> out(count, 0);
  for (size_t k = 0; k < count; ++k) {
    const double t = start_time + static_cast<double>(k) / rate_hz;
    for (const auto& i : iv)
      if (t >= i.start && t < i.end) {
        out[k] = 1;
        break;
      }
  }
  return out;
}

Trajectory build_tuples(const std::string& dialog_id, const std::string& actor_role,
                        const std::vector<double>& timestamps,
                        const std::vector<float>& states, uint32_t state_dim,
                        const std::vector<uint8_t>& actions,
                        const std::vector<double>& action_timestamps,
                        const std::vector<double>& rewards,
                        const std::vector<double>& reward_timestamps) {
  const size_t n = timestamps.size();
  if (n < 2) throw std::runtime_error("need at least 2 aligned steps");
  if (states.size() != n * state_dim)
    throw std::runtime_error("state stream size mismatch");
  auto check_aligned = [&](const std::vector<double>& other, const char* name) {
    if (other.size() != n)
      throw std::runtime_error(std::string("alignment error: ") + name +
                               " stream has " + std::to_string(other.size()) +
                               " steps, expected " + std::to_string(n));
    for (size_t i = 0; i < n; ++i)
      if (std::abs(other[i] - timestamps[i]) > 1e-6)
        throw std::runtime_error(std::string("alignment error: ") + name +
                                 " timestamp mismatch at index " + std::to_string(i));
  };
  check_aligned(action_timestamps, "action");
  check_aligned(reward_timestamps, "reward");
  if (actions.size() != n || rewards.size() != n)
    throw std::runtime_error("alignment error: stream length mismatch");
  for (uint8_t a : actions)
    if (a > 1) throw std::runtime_error("actions must be 0 or 1");

  Trajectory t;
  t.dialog_id = dialog_id;
  t.actor_role = actor_role;
  t.state_dim = state_dim;
  t.start_time = timestamps.front();
  t.states = states;
  t.actions.assign(actions.begin(), actions.end() - 1);
  t.rewards.reserve(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) t.rewards.push_back(static_cast<float>(rewards[i]));
  return t;
}

std::vector<Fold> loso_split(const BatchDataset& ds, int fold_count) {
  std::set<std::string> pair_keys;
  auto key_of = [&](const Trajectory& t) {
    auto it = ds.subjects.find(t.dialog_id);
    if (it == ds.subjects.end())
      throw std::runtime_error("metadata error: unknown subjects for dialog " +
                               t.dialog_id);
    auto [a, b] = it->second;
    if (b < a) std::swap(a, b);
    return a + "|" + b;
  };
  for (const auto& t : ds.trajectories) pair_keys.insert(key_of(t));
  if (static_cast<int>(pair_keys.size()) != fold_count)
    throw std::runtime_error("expected " + std::to_string(fold_count) +
                             " subject pairs, found " +
                             std::to_string(pair_keys.size()));
  std::vector<Fold> folds;
  for (const auto& pk : pair_keys) {
    Fold f;
    f.held_out_pair = pk;
    for (size_t i = 0; i < ds.trajectories.size(); ++i) {
      if (key_of(ds.trajectories[i]) == pk)
        f.test_idx.push_back(i);
      else
        f.train_idx.push_back(i);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

void save_dataset(const std::string& path, const BatchDataset& ds) {
  io::BinaryWriter w(path);
  io::write_magic(w, "BCDS");
  w.u32(1);  // version
  // section: subject table
  w.crc_begin();
  w.u32(static_cast<uint32_t>(ds.subjects.size()));
  for (const auto& [id, pair] : ds.subjects) {
    w.str(id);
    w.str(pair.first);
    w.str(pair.second);
  }
  w.crc_end();
  // section: trajectory index
  w.crc_begin();
  w.u32(static_cast<uint32_t>(ds.trajectories.size()));
  for (const auto& t : ds.trajectories) {
    w.str(t.dialog_id);
    w.str(t.actor_role);
    w.u32(t.state_dim);
    w.u64(t.n_states());
    w.f64(t.start_time);
  }
  w.crc_end();
  // section: tuple block
  w.crc_begin();
  for (const auto& t : ds.trajectories) {
    w.f32_array(t.states.data(), t.states.size());
    w.raw(t.actions.data(), t.actions.size());
    w.f32_array(t.rewards.data(), t.rewards.size());
  }
  w.crc_end();
  w.close();
}

BatchDataset load_dataset(const std::string& path) {
  io::BinaryReader r(path);
  io::expect_magic(r, "BCDS", path);
  const uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error("dataset version " + std::to_string(version) +
                             " unsupported (expected 1)");
  BatchDataset ds;
  r.crc_begin();
  const uint32_t n_dialogs = r.u32();
  for (uint32_t i = 0; i < n_dialogs; ++i) {
    std::string id = r.str();
    std::string a = r.str();
    std::string b = r.str();
    ds.subjects[id] = {a, b};
  }
  r.crc_check("subject table");
  r.crc_begin();
  const uint32_t n_traj = r.u32();
  ds.trajectories.resize(n_traj);
  std::vector<uint64_t> n_states(n_traj);
  for (uint32_t i = 0; i < n_traj; ++i) {
    auto& t = ds.trajectories[i];
    t.dialog_id = r.str();
    t.actor_role = r.str();
    t.state_dim = r.u32();
    n_states[i] = r.u64();
    t.start_time = r.f64();
  }
  r.crc_check("trajectory index");
  r.crc_begin();
  for (uint32_t i = 0; i < n_traj; ++i) {
    auto& t = ds.trajectories[i];
    t.states.resize(n_states[i] * t.state_dim);
    r.f32_array(t.states.data(), t.states.size());
    t.actions.resize(n_states[i] ? n_states[i] - 1 : 0);
    r.raw(t.actions.data(), t.actions.size());
    t.rewards.resize(t.actions.size());
    r.f32_array(t.rewards.data(), t.rewards.size());
  }
  r.crc_check("tuple block");
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

constexpr int kRate = 40;
constexpr int kWindowSteps = 40;   // 1 s summarization window
constexpr int kPostSteps = 40;     // 1 s laugh-opportunity window

double min_climax_separation(const SyntheticDyadConfig& cfg) {
  return cfg.cue_lead_s + 2.5;
}

// Climax times snapped to the 40 Hz grid.
std::vector<double> schedule_climaxes(const SyntheticDyadConfig& cfg, Rng& rng) {
  const double min_sep = min_climax_separation(cfg);
  const double mean_gap = 60.0 / cfg.climax_rate_per_min;
  const double excess = mean_gap - min_sep;
  std::vector<double> out;
  double t = std::max(cfg.cue_lead_s + 1.5, 3.0) + rng.exponential(std::max(excess, 0.5));
  while (t + 1.5 < cfg.episode_length_s - 1.0) {
    out.push_back(std::round(t * kRate) / kRate);
    t += min_sep + rng.exponential(std::max(excess, 0.5));
  }
  return out;
}

struct EpisodeScript {
  std::vector<double> climaxes;
  std::vector<double> decoys;
  std::vector<uint8_t> post;   // per state step (index i at t = 1 + 0.025 i)
  std::vector<uint8_t> decoy;  // behavior laughs here at decoy_laugh_prob
  std::vector<uint8_t> trail;  // second after post; trailing_laugh_prob
  size_t n_states = 0;
};

// Poisson-thinned decoy windows kept clear of every climax's cue/post span
// and of each other.
std::vector<double> schedule_decoys(const SyntheticDyadConfig& cfg,
                                    const std::vector<double>& climaxes, Rng& rng) {
  std::vector<double> out;
  if (cfg.decoy_rate_per_min <= 0.0) return out;
  const double guard = cfg.cue_lead_s + 1.5;
  double t = 3.0 + rng.exponential(60.0 / cfg.decoy_rate_per_min);
  while (t + 2.5 < cfg.episode_length_s) {
    const double d = std::round(t * kRate) / kRate;
    bool clear = true;
    for (double c : climaxes)
      if (std::abs(d - c) < guard) clear = false;
    if (clear) out.push_back(d);
    t += 1.5 + rng.exponential(60.0 / cfg.decoy_rate_per_min);
  }
  return out;
}

EpisodeScript make_script(const SyntheticDyadConfig& cfg, Rng& rng) {
  EpisodeScript ep;
  ep.climaxes = schedule_climaxes(cfg, rng);
  ep.decoys = schedule_decoys(cfg, ep.climaxes, rng);
  const size_t n_frames = static_cast<size_t>(std::lround(cfg.episode_length_s * kRate));
  ep.n_states = n_frames - kWindowSteps + 1;
  ep.post.assign(ep.n_states, 0);
  ep.decoy.assign(ep.n_states, 0);
  ep.trail.assign(ep.n_states, 0);
  for (double c : ep.climaxes) {
    const long cstep = std::lround(c * kRate);
    for (long s = cstep; s < cstep + kPostSteps; ++s) {
      const long i = s - kRate;  // state i sits at grid step i + 40
      if (i >= 0 && i < static_cast<long>(ep.n_states)) ep.post[i] = 1;
    }
    for (long s = cstep + kPostSteps; s < cstep + 2 * kPostSteps; ++s) {
      const long i = s - kRate;
      if (i >= 0 && i < static_cast<long>(ep.n_states)) ep.trail[i] = 1;
    }
  }
  for (double d : ep.decoys) {
    const long dstep = std::lround(d * kRate);
    // states whose windows overlap the decoy marker by at least half a window
    for (long i = dstep - 20; i < dstep + 20; ++i)
      if (i >= 0 && i < static_cast<long>(ep.n_states)) ep.decoy[i] = 1;
  }
  return ep;
}

double behavior_prob(const SyntheticDyadConfig& cfg, const EpisodeScript& ep,
                     size_t i) {
  if (ep.post[i]) return cfg.behavior_laugh_prob_post;
  if (ep.decoy[i]) return cfg.decoy_laugh_prob;
  if (ep.trail[i]) return cfg.trailing_laugh_prob;
  return cfg.behavior_laugh_prob_else;
}

double step_reward(const SyntheticDyadConfig& cfg, bool post, uint8_t action) {
  if (action == 0) return 0.0;
  return post ? cfg.reward_gain : -cfg.spurious_penalty;
}

std::vector<reward::AnnotationEvent> make_annotations(
    const SyntheticDyadConfig& cfg, const EpisodeScript& ep,
    const std::vector<uint8_t>& actions) {
  std::vector<reward::AnnotationEvent> ann;
  const double E = cfg.episode_length_s;
  // The environment participant holds the floor for the whole episode.
  ann.push_back({"B", reward::AnnotationKind::speech_turn, 0.25, E - 0.25});
  // Scripted mutual-gaze episodes every 10 s give a constant CE background.
  for (double g = 10.0; g + 1.2 < E; g += 10.0) {
    ann.push_back({"A", reward::AnnotationKind::gaze_at_partner, g, g + 1.0});
    ann.push_back({"B", reward::AnnotationKind::gaze_at_partner, g + 0.2, g + 1.2});
  }
  // Actor laugh intervals from the 40 Hz action raster.
  size_t i = 0;
  while (i < actions.size()) {
    if (actions[i]) {
      size_t j = i;
      while (j < actions.size() && actions[j]) ++j;
      const double t0 = 1.0 + kStepSeconds * static_cast<double>(i);
      const double t1 = 1.0 + kStepSeconds * static_cast<double>(j);
      ann.push_back({"A", reward::AnnotationKind::laugh, t0, t1});
      i = j;
    } else {
      ++i;
    }
  }
  std::sort(ann.begin(), ann.end(),
            [](const auto& a, const auto& b) { return a.start < b.start; });
  return ann;
}

}  // namespace

void validate(const SyntheticDyadConfig& cfg) {
  if (cfg.episode_length_s < 10.0)
    throw std::invalid_argument("episode length must be at least 10 s");
  if (cfg.mode == SynthMode::pomdp && cfg.cue_lead_s <= 1.0)
    throw std::invalid_argument("pomdp mode requires cue lead > 1 s");
  if (cfg.cue_lead_s < cfg.cue_duration_s)
    throw std::invalid_argument("cue must end at or before the climax");
  const double mean_gap = 60.0 / cfg.climax_rate_per_min;
  if (mean_gap < min_climax_separation(cfg))
    throw std::invalid_argument(
        "climax rate too high for cue lead; events would overlap");
  if (cfg.episode_length_s < cfg.cue_lead_s + 6.0)
    throw std::invalid_argument("episode too short for a single climax");
  if (cfg.n_episodes < 1) throw std::invalid_argument("need at least one episode");
  if (cfg.post_marker_amplitude < 0.0 || cfg.decoy_rate_per_min < 0.0)
    throw std::invalid_argument("marker amplitude and decoy rate must be >= 0");
  if (cfg.decoy_laugh_prob < 0.0 || cfg.decoy_laugh_prob > 1.0 ||
      cfg.trailing_laugh_prob < 0.0 || cfg.trailing_laugh_prob > 1.0)
    throw std::invalid_argument("laugh probabilities must be in [0, 1]");
}

SyntheticBatch generate_synthetic(const SyntheticDyadConfig& cfg) {
  validate(cfg);
  SyntheticBatch out;
  Rng rng(cfg.seed);
  const size_t n_frames = static_cast<size_t>(std::lround(cfg.episode_length_s * kRate));

  for (int e = 0; e < cfg.n_episodes; ++e) {
    EpisodeScript ep = make_script(cfg, rng);

    // 19-d frame feature stream: white noise plus the cue burst on the
    // prosody-bearing dims 13..15.
    std::vector<dsp::FrameFeatures> frames(n_frames);
    for (size_t f = 0; f < n_frames; ++f) {
      frames[f].timestamp = static_cast<double>(f) / kRate;
      frames[f].values.resize(dsp::kFrameDim);
      for (int d = 0; d < dsp::kFrameDim; ++d)
        frames[f].values[d] = rng.normal(0.0, cfg.noise_std);
    }
    for (double c : ep.climaxes) {
      const long lo = std::lround((c - cfg.cue_lead_s) * kRate);
      const long hi = std::lround((c - cfg.cue_lead_s + cfg.cue_duration_s) * kRate);
      for (long f = lo; f < hi; ++f)
        if (f >= 0 && f < static_cast<long>(n_frames))
          for (int d = 13; d <= 15; ++d) frames[f].values[d] += cfg.cue_amplitude;
      if (cfg.post_marker_amplitude > 0.0) {
        const long cstep = std::lround(c * kRate);
        for (long f = cstep; f < cstep + kPostSteps; ++f)
          if (f >= 0 && f < static_cast<long>(n_frames))
            frames[f].values[17] += cfg.post_marker_amplitude;
      }
    }
    for (double d : ep.decoys) {
      const long dstep = std::lround(d * kRate);
      for (long f = dstep; f < dstep + kRate; ++f)
        if (f >= 0 && f < static_cast<long>(n_frames))
          frames[f].values[16] += cfg.cue_amplitude;
    }

    Trajectory traj;
    traj.dialog_id = "synth-ep" + std::to_string(e);
    traj.actor_role = "A";
    traj.state_dim = dsp::kStateDim;
    traj.start_time = 1.0;
    traj.states.reserve(ep.n_states * dsp::kStateDim);
    std::vector<dsp::FrameFeatures> window(kWindowSteps);
    for (size_t i = 0; i < ep.n_states; ++i) {
      window.assign(frames.begin() + i, frames.begin() + i + kWindowSteps);
      const auto sv = dsp::summarize(window, 1.0 + kStepSeconds * static_cast<double>(i));
      for (double v : sv.values) traj.states.push_back(static_cast<float>(v));
    }

    const size_t n_tuples = ep.n_states - 1;
    SyntheticOracle oracle;
    oracle.climax_times = ep.climaxes;
    oracle.post.resize(n_tuples);
    oracle.decoy.resize(n_tuples);
    oracle.behavior_prob.resize(n_tuples);
    oracle.oracle_action.resize(n_tuples);
    oracle.oracle_q.resize(n_tuples);
    traj.actions.resize(n_tuples);
    traj.rewards.resize(n_tuples);
    for (size_t i = 0; i < n_tuples; ++i) {
      oracle.post[i] = ep.post[i];
      oracle.decoy[i] = ep.decoy[i];
      oracle.behavior_prob[i] = behavior_prob(cfg, ep, i);
      traj.actions[i] = rng.uniform() < oracle.behavior_prob[i] ? 1 : 0;
      traj.rewards[i] =
          static_cast<float>(step_reward(cfg, ep.post[i], traj.actions[i]));
    }
    // Oracle Q by backward induction; dynamics are a scripted schedule, so
    // the realized chain is deterministic and the tabulated Q satisfies the
    // Bellman equation exactly on the emitted tuples.
    double v_next = 0.0;
    for (size_t i = n_tuples; i-- > 0;) {
      const double q0 = step_reward(cfg, oracle.post[i], 0) + cfg.gamma * v_next;
      const double q1 = step_reward(cfg, oracle.post[i], 1) + cfg.gamma * v_next;
      oracle.oracle_q[i] = {q0, q1};
      oracle.oracle_action[i] = q1 > q0 ? 1 : 0;
      v_next = std::max(q0, q1);
    }

    out.annotations.push_back(make_annotations(cfg, ep, traj.actions));
    const int pair = e % 5;
    out.dataset.subjects[traj.dialog_id] = {"subj" + std::to_string(2 * pair),
                                            "subj" + std::to_string(2 * pair + 1)};
    out.dataset.trajectories.push_back(std::move(traj));
    out.oracles.push_back(std::move(oracle));
  }
  return out;
}

double simulate_pace(const SyntheticDyadConfig& cfg, ScriptedPolicy policy,
                     int n_episodes, uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  double total = 0.0;
  size_t count = 0;
  for (int e = 0; e < n_episodes; ++e) {
    EpisodeScript ep = make_script(cfg, rng);
    const size_t n_tuples = ep.n_states - 1;
    std::vector<uint8_t> actions(n_tuples, 0);
    for (size_t i = 0; i < n_tuples; ++i) {
      switch (policy) {
        case ScriptedPolicy::oracle: actions[i] = ep.post[i]; break;
        case ScriptedPolicy::always_laugh: actions[i] = 1; break;
        case ScriptedPolicy::never_laugh: actions[i] = 0; break;
        case ScriptedPolicy::behavior:
          actions[i] = rng.uniform() < behavior_prob(cfg, ep, i) ? 1 : 0;
          break;
      }
    }
    const auto ann = make_annotations(cfg, ep, actions);
    const auto ces = reward::connection_events(ann, "A", "B");
    const auto series = reward::compute_engagement(ces, cfg.episode_length_s);
    for (double p : series.pace) {
      total += p;
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double simulate_clipped_oracle_value(const SyntheticDyadConfig& cfg, double clip,
                                     double gamma, size_t horizon,
                                     size_t n_samples, uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  double total = 0.0;
  for (size_t s = 0; s < n_samples; ++s) {
    EpisodeScript ep = make_script(cfg, rng);
    const size_t n_tuples = ep.n_states - 1;
    if (n_tuples < horizon) throw std::runtime_error("episode shorter than horizon");
    const size_t start = rng.index(n_tuples - horizon + 1);
    double ret = 0.0, disc = 1.0;
    for (size_t t = 0; t < horizon; ++t) {
      const bool post = ep.post[start + t];
      const double p_laugh = post ? clip : 1.0 - clip;
      const uint8_t a = rng.uniform() < p_laugh ? 1 : 0;
      ret += disc * step_reward(cfg, post, a);
      disc *= gamma;
    }
    total += ret;
  }
  return total / static_cast<double>(n_samples);
}

}  // namespace bcrl::data

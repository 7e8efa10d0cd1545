#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bcrl/dsp.hpp"
#include "bcrl/reward.hpp"

namespace bcrl::data {

inline constexpr double kStepSeconds = 0.025;

// One role of one dialog.  States are stored once; tuple k is
// <state k, action k, reward k, state k+1>, so next-state of tuple k and
// state of tuple k+1 share storage.  The final tuple is terminal.
struct Trajectory {
  std::string dialog_id;
  std::string actor_role;       // behavior-policy participant ("A" or "B")
  uint32_t state_dim = dsp::kStateDim;
  double start_time = 1.0;      // timestamp of state 0
  std::vector<float> states;    // n_states x state_dim, row-major
  std::vector<uint8_t> actions; // n_states - 1, in {0,1}
  std::vector<float> rewards;   // n_states - 1

  size_t n_states() const { return state_dim ? states.size() / state_dim : 0; }
  size_t n_tuples() const { return n_states() > 0 ? n_states() - 1 : 0; }
  const float* state(size_t i) const { return states.data() + i * state_dim; }
  bool terminal(size_t k) const { return k + 1 == n_tuples(); }
};

struct TupleView {
  const float* state;
  uint8_t action;
  float reward;
  const float* next_state;
  bool terminal;
};

TupleView tuple_at(const Trajectory& t, size_t k);

struct BatchDataset {
  std::vector<Trajectory> trajectories;
  // dialog id -> (subject of track A, subject of track B)
  std::map<std::string, std::pair<std::string, std::string>> subjects;

  size_t total_tuples() const;
  double laugh_fraction() const;
};

// a_t = 1 iff t falls inside one of the actor's laugh intervals.
std::vector<uint8_t> rasterize_intervals(const std::vector<reward::Interval>& iv,
                                         double start_time, size_t count,
                                         double rate_hz = 40.0);

// Assemble a trajectory from three aligned 40 Hz streams.  Timestamp vectors
// must agree element-wise; the first offending index is reported otherwise.
Trajectory build_tuples(const std::string& dialog_id, const std::string& actor_role,
                        const std::vector<double>& timestamps,
                        const std::vector<float>& states, uint32_t state_dim,
                        const std::vector<uint8_t>& actions,
                        const std::vector<double>& action_timestamps,
                        const std::vector<double>& rewards,
                        const std::vector<double>& reward_timestamps);

struct Fold {
  std::vector<size_t> train_idx, test_idx;  // trajectory indices
  std::string held_out_pair;
};

// Leave-one-subject-pair-out.  The distinct subject pairs must equal
// fold_count; every dialog's subjects must be known.
std::vector<Fold> loso_split(const BatchDataset& ds, int fold_count = 5);

void save_dataset(const std::string& path, const BatchDataset& ds);
BatchDataset load_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic dyadic data with a known-optimal policy.
//
// A scripted speaker alternates talking and pausing with Poisson-scheduled
// "climax" moments.  A narrow-band cue burst is injected into the
// prosody-bearing feature dims cue_lead seconds before each climax; laughing
// within the 1 s window after a climax is rewarded, laughing elsewhere is
// penalized.  In mdp mode (cue_lead <= 1 s) the cue is visible inside the
// current 1 s state window; in pomdp mode (cue_lead > 1 s) no function of the
// current window reveals the laugh opportunity and memory is required.

enum class SynthMode { mdp, pomdp };

struct SyntheticDyadConfig {
  double episode_length_s = 60.0;
  double climax_rate_per_min = 2.0;
  double cue_lead_s = 0.5;
  double cue_duration_s = 0.5;
  SynthMode mode = SynthMode::mdp;
  double reward_gain = 1.0;
  double spurious_penalty = 2.0;
  double cue_amplitude = 40.0;
  double noise_std = 1.0;
  double behavior_laugh_prob_post = 0.5;
  double behavior_laugh_prob_else = 0.05;
  // Optional hardening of the pomdp setting (both default off).  The post
  // marker adds a weak burst on feature dim 17 during the laugh-opportunity
  // second, making it noisily detectable from the current window alone.
  // Decoys are strongly marked windows (dim 16, cue amplitude) scheduled away
  // from climaxes where the scripted behavior laughs at decoy_laugh_prob;
  // laughing there is spurious, so imitating the behavior is penalized.
  double post_marker_amplitude = 0.0;
  double decoy_rate_per_min = 0.0;
  double decoy_laugh_prob = 0.05;
  // Behavior laugh probability in the second after a laugh-opportunity window
  // (where the post marker still trails through the summarization window).
  // Raising it above `else` gives the learner on-policy evidence that those
  // aliased states are penalized.
  double trailing_laugh_prob = 0.05;
  int n_episodes = 50;
  double gamma = 0.99;  // used for the oracle Q tabulation
  uint64_t seed = 1;
};

void validate(const SyntheticDyadConfig& cfg);

// Per-trajectory oracle annotations, parallel to tuple indices.
struct SyntheticOracle {
  std::vector<uint8_t> post;            // laugh-opportunity indicator
  std::vector<uint8_t> decoy;           // decoy-window indicator
  std::vector<double> behavior_prob;    // scripted P(laugh) at each tuple
  std::vector<uint8_t> oracle_action;   // optimal action (laugh iff post)
  std::vector<std::array<double, 2>> oracle_q;  // backward-induction Q values
  std::vector<double> climax_times;
};

struct SyntheticBatch {
  BatchDataset dataset;
  std::vector<SyntheticOracle> oracles;  // one per trajectory
  std::vector<std::vector<reward::AnnotationEvent>> annotations;  // per episode
};

SyntheticBatch generate_synthetic(const SyntheticDyadConfig& cfg);

enum class ScriptedPolicy { oracle, always_laugh, never_laugh, behavior };

// Mean engagement pace of fresh episodes played under a scripted policy,
// computed through the connection-event detectors.
double simulate_pace(const SyntheticDyadConfig& cfg, ScriptedPolicy policy,
                     int n_episodes, uint64_t seed);

// Expected discounted T-step return of the clipped oracle policy (laugh with
// probability `clip` in the post-climax window, 1-clip elsewhere), estimated
// by fresh simulation from uniformly drawn segment starts.
double simulate_clipped_oracle_value(const SyntheticDyadConfig& cfg, double clip,
                                     double gamma, size_t horizon,
                                     size_t n_samples, uint64_t seed);

// Deterministic 64-bit RNG used everywhere seeds matter.
struct Rng {
  uint64_t s;
  explicit Rng(uint64_t seed) : s(seed ^ 0x9E3779B97F4A7C15ull) {}
  uint64_t next();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double std = 1.0);
  double exponential(double mean);
  size_t index(size_t n);                 // uniform in [0, n)
};

}  // namespace bcrl::data

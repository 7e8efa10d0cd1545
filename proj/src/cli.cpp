#include "bcrl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "bcrl/dataset.hpp"
#include "bcrl/dsp.hpp"
#include "bcrl/io_util.hpp"
#include "bcrl/nn.hpp"
#include "bcrl/ope.hpp"
#include "bcrl/qtrain.hpp"
#include "bcrl/reward.hpp"

namespace bcrl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Configuration

json default_config() {
  return json{
      {"seed", 1},
      {"features",
       {{"n_filters", 26}, {"fft_size", 1024}, {"f_lo", 0.0}, {"f_hi", 8000.0}}},
      {"rewards",
       {{"window_s", 15.0},
        {"min_gaze_overlap_s", 0.3},
        {"max_adjacency_gap_s", 2.0}}},
      {"dataset", {{"folds", 5}}},
      {"trainer",
       {{"body", "mlp"},
        {"gamma", 0.99},
        {"updates", 20000},
        {"minibatch", 256},
        {"seq_len", 80},
        {"target_sync", 1000},
        {"eval_interval", 2000},
        {"hidden1", 100},
        {"hidden2", 25},
        {"grad_clip", 5.0},
        {"lr", 1e-4},
        {"use_sgd", false},
        {"divergence_factor", 1e3},
        {"folds", json::array()}}},
      {"ope",
       {{"gamma", 0.99},
        {"horizon", 200},
        {"shift", 1},
        {"knn_k", 50},
        {"clip", 0.95},
        {"max_reference", 20000},
        {"taus", json::array({0.1, 0.3, 0.5, 0.7, 0.9})}}},
      {"synth",
       {{"episode_length_s", 60.0},
        {"climax_rate_per_min", 2.0},
        {"cue_lead_s", 0.5},
        {"cue_duration_s", 0.5},
        {"mode", "mdp"},
        {"reward_gain", 1.0},
        {"spurious_penalty", 2.0},
        {"cue_amplitude", 40.0},
        {"noise_std", 1.0},
        {"behavior_laugh_prob_post", 0.5},
        {"behavior_laugh_prob_else", 0.05},
        {"post_marker_amplitude", 0.0},
        {"decoy_rate_per_min", 0.0},
        {"decoy_laugh_prob", 0.05},
        {"trailing_laugh_prob", 0.05},
        {"n_episodes", 50}}},
  };
}

void merge_into(json& base, const json& user, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key()))
      throw std::runtime_error("config error: unknown key " + path);
    if (base[it.key()].is_object() && it.value().is_object())
      merge_into(base[it.key()], it.value(), path);
    else
      base[it.key()] = it.value();
  }
}

json load_config(const std::string& path, uint64_t seed_override, bool has_seed) {
  json cfg = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    json user = json::parse(in);
    merge_into(cfg, user, "");
  }
  if (has_seed) cfg["seed"] = seed_override;
  return cfg;
}

uint32_t config_hash(const json& cfg) {
  std::string s = cfg.dump();  // keys are stored sorted -> canonical
  return io::crc32(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Input manifest

struct DialogEntry {
  std::string id;
  std::map<std::string, std::string> wav;  // role -> path
  std::string annotations;
  std::map<std::string, std::string> subjects;  // role -> subject id
};

std::vector<DialogEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  json m = json::parse(in);
  if (!m.contains("dialogs") || !m["dialogs"].is_array())
    throw std::runtime_error("manifest error: missing dialogs array");
  std::vector<DialogEntry> out;
  for (const auto& d : m["dialogs"]) {
    DialogEntry e;
    e.id = d.at("id").get<std::string>();
    for (auto it = d.at("wav").begin(); it != d.at("wav").end(); ++it)
      e.wav[it.key()] = it.value().get<std::string>();
    if (d.contains("annotations"))
      e.annotations = d["annotations"].get<std::string>();
    if (d.contains("subjects"))
      for (auto it = d["subjects"].begin(); it != d["subjects"].end(); ++it)
        e.subjects[it.key()] = it.value().get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

std::string other_role(const DialogEntry& d, const std::string& role) {
  for (const auto& [r, _] : d.wav)
    if (r != role) return r;
  throw std::runtime_error("dialog " + d.id + ": no partner track for role " + role);
}

std::string stream_path(const std::string& dir, const std::string& dialog,
                        const std::string& role, const std::string& kind) {
  return (fs::path(dir) / (dialog + "." + role + "." + kind + ".bin")).string();
}

// ---------------------------------------------------------------------------
// Run manifest

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const json& cfg,
                        const std::vector<std::string>& input_paths) {
  json inputs = json::object();
  for (const auto& p : input_paths) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", io::file_crc32(p));
    inputs[p] = buf;
  }
  char cfg_buf[16];
  std::snprintf(cfg_buf, sizeof cfg_buf, "%08x", config_hash(cfg));
  json m{{"command", command},
         {"artifact_version", kArtifactVersion},
         {"seed", cfg.at("seed").get<uint64_t>()},
         {"config_crc32", cfg_buf},
         {"inputs", inputs}};
  std::ofstream out(fs::path(out_dir) / ("run_manifest_" + command + ".json"));
  out << m.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Commands

dsp::MfccConfig mfcc_config(const json& cfg) {
  dsp::MfccConfig mc;
  const auto& f = cfg.at("features");
  mc.n_filters = f.at("n_filters").get<int>();
  mc.fft_size = f.at("fft_size").get<int>();
  mc.f_lo = f.at("f_lo").get<double>();
  mc.f_hi = f.at("f_hi").get<double>();
  return mc;
}

int cmd_features(const std::string& manifest_path, const std::string& out_dir,
                 const json& cfg) {
  auto dialogs = load_manifest(manifest_path);
  fs::create_directories(out_dir);
  dsp::MfccConfig mc = mfcc_config(cfg);
  int failures = 0;
  std::vector<std::string> inputs{manifest_path};
  for (const auto& d : dialogs) {
    for (const auto& [role, wav_path] : d.wav) {
      try {
        dsp::AudioTrack track = dsp::read_wav(wav_path);
        auto states = dsp::extract_states(track, mc);
        dsp::StreamFile sf = dsp::states_to_stream(states);
        dsp::write_stream(stream_path(out_dir, d.id, role, "states"), sf);
        std::cout << "track " << d.id << "." << role << ": " << states.size()
                  << " states, " << track.duration() << " s\n";
        inputs.push_back(wav_path);
      } catch (const std::exception& e) {
        ++failures;
        std::cerr << "track " << d.id << "." << role << ": error: " << e.what()
                  << "\n";
      }
    }
  }
  write_run_manifest(out_dir, "features", cfg, inputs);
  return failures == 0 ? 0 : 1;
}

int cmd_rewards(const std::string& manifest_path, const std::string& out_dir,
                const json& cfg) {
  auto dialogs = load_manifest(manifest_path);
  fs::create_directories(out_dir);
  reward::EngagementConfig ec;
  ec.window_s = cfg.at("rewards").at("window_s").get<double>();
  ec.min_gaze_overlap_s = cfg.at("rewards").at("min_gaze_overlap_s").get<double>();
  ec.max_adjacency_gap_s = cfg.at("rewards").at("max_adjacency_gap_s").get<double>();
  int failures = 0;
  std::vector<std::string> inputs{manifest_path};
  for (const auto& d : dialogs) {
    try {
      if (d.annotations.empty())
        throw std::runtime_error("dialog " + d.id + ": no annotation file");
      auto events = reward::read_annotations(d.annotations);
      inputs.push_back(d.annotations);
      for (const auto& [role, _] : d.wav) {
        dsp::StreamFile st =
            dsp::read_stream(stream_path(out_dir, d.id, role, "states"));
        const size_t n = st.count();
        const std::string env = other_role(d, role);
        const double t_last = st.start_time + double(n - 1) / st.rate_hz;
        auto ces = reward::connection_events(events, role, env, ec);
        auto series = reward::compute_engagement(ces, t_last, ec);
        auto laughs = reward::intervals_of(events, role, reward::AnnotationKind::laugh);
        auto actions = data::rasterize_intervals(laughs, st.start_time, n, st.rate_hz);

        dsp::StreamFile rf, af;
        rf.dims = 1;
        rf.rate_hz = st.rate_hz;
        rf.start_time = st.start_time;
        af = rf;
        rf.data.resize(n);
        af.data.resize(n);
        for (size_t k = 0; k < n; ++k) {
          double t = st.start_time + double(k) / st.rate_hz;
          long idx = std::lround(t * series.rate_hz);
          idx = std::clamp(idx, 0L, (long)series.reward.size() - 1);
          rf.data[k] = float(series.reward[idx]);
          af.data[k] = float(actions[k]);
        }
        dsp::write_stream(stream_path(out_dir, d.id, role, "rewards"), rf);
        dsp::write_stream(stream_path(out_dir, d.id, role, "actions"), af);
        std::cout << "rewards " << d.id << "." << role << ": " << n << " steps, "
                  << ces.size() << " CEs\n";
      }
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "dialog " << d.id << ": error: " << e.what() << "\n";
    }
  }
  write_run_manifest(out_dir, "rewards", cfg, inputs);
  return failures == 0 ? 0 : 1;
}

int cmd_build(const std::string& manifest_path, const std::string& out_dir,
              const json& cfg) {
  auto dialogs = load_manifest(manifest_path);
  fs::create_directories(out_dir);
  data::BatchDataset ds;
  int failures = 0;
  std::vector<std::string> inputs{manifest_path};
  for (const auto& d : dialogs) {
    for (const auto& [role, _] : d.wav) {
      try {
        auto sp = stream_path(out_dir, d.id, role, "states");
        auto ap = stream_path(out_dir, d.id, role, "actions");
        auto rp = stream_path(out_dir, d.id, role, "rewards");
        dsp::StreamFile st = dsp::read_stream(sp);
        dsp::StreamFile af = dsp::read_stream(ap);
        dsp::StreamFile rf = dsp::read_stream(rp);
        auto times = [](const dsp::StreamFile& s) {
          std::vector<double> t(s.count());
          for (size_t i = 0; i < t.size(); ++i)
            t[i] = s.start_time + double(i) / s.rate_hz;
          return t;
        };
        std::vector<uint8_t> actions(af.count());
        for (size_t i = 0; i < actions.size(); ++i)
          actions[i] = af.data[i] != 0.0f ? 1 : 0;
        std::vector<double> rewards(rf.data.begin(), rf.data.end());
        ds.trajectories.push_back(data::build_tuples(
            d.id, role, times(st), st.data, st.dims, actions, times(af), rewards,
            times(rf)));
        inputs.insert(inputs.end(), {sp, ap, rp});
      } catch (const std::exception& e) {
        ++failures;
        std::cerr << "dialog " << d.id << "." << role << ": error: " << e.what()
                  << "\n";
      }
    }
    auto a = d.subjects.count("A") ? d.subjects.at("A") : "unknown-A-" + d.id;
    auto b = d.subjects.count("B") ? d.subjects.at("B") : "unknown-B-" + d.id;
    ds.subjects[d.id] = {a, b};
  }
  if (!ds.trajectories.empty()) {
    std::string out = (fs::path(out_dir) / "dataset.bin").string();
    data::save_dataset(out, ds);
    std::cout << "dataset: " << ds.trajectories.size() << " trajectories, "
              << ds.total_tuples() << " tuples, laugh fraction "
              << ds.laugh_fraction() << "\n";
  }
  write_run_manifest(out_dir, "build", cfg, inputs);
  return failures == 0 ? 0 : 1;
}

data::SyntheticDyadConfig synth_config(const json& cfg) {
  const auto& s = cfg.at("synth");
  data::SyntheticDyadConfig sc;
  sc.episode_length_s = s.at("episode_length_s").get<double>();
  sc.climax_rate_per_min = s.at("climax_rate_per_min").get<double>();
  sc.cue_lead_s = s.at("cue_lead_s").get<double>();
  sc.cue_duration_s = s.at("cue_duration_s").get<double>();
  std::string mode = s.at("mode").get<std::string>();
  if (mode == "mdp")
    sc.mode = data::SynthMode::mdp;
  else if (mode == "pomdp")
    sc.mode = data::SynthMode::pomdp;
  else
    throw std::runtime_error("config error: synth.mode must be mdp or pomdp");
  sc.reward_gain = s.at("reward_gain").get<double>();
  sc.spurious_penalty = s.at("spurious_penalty").get<double>();
  sc.cue_amplitude = s.at("cue_amplitude").get<double>();
  sc.noise_std = s.at("noise_std").get<double>();
  sc.behavior_laugh_prob_post = s.at("behavior_laugh_prob_post").get<double>();
  sc.behavior_laugh_prob_else = s.at("behavior_laugh_prob_else").get<double>();
  sc.post_marker_amplitude = s.at("post_marker_amplitude").get<double>();
  sc.decoy_rate_per_min = s.at("decoy_rate_per_min").get<double>();
  sc.decoy_laugh_prob = s.at("decoy_laugh_prob").get<double>();
  sc.trailing_laugh_prob = s.at("trailing_laugh_prob").get<double>();
  sc.n_episodes = s.at("n_episodes").get<int>();
  sc.gamma = cfg.at("trainer").at("gamma").get<double>();
  sc.seed = cfg.at("seed").get<uint64_t>();
  return sc;
}

int cmd_synth(const std::string& out_dir, const json& cfg) {
  fs::create_directories(out_dir);
  data::SyntheticDyadConfig sc = synth_config(cfg);
  data::validate(sc);
  data::SyntheticBatch batch = data::generate_synthetic(sc);
  std::string ds_path = (fs::path(out_dir) / "dataset.bin").string();
  data::save_dataset(ds_path, batch.dataset);

  json dialogs = json::array();
  for (size_t i = 0; i < batch.dataset.trajectories.size(); ++i) {
    const auto& t = batch.dataset.trajectories[i];
    std::string ann_path =
        (fs::path(out_dir) / (t.dialog_id + ".annotations.jsonl")).string();
    reward::write_annotations(ann_path, batch.annotations[i]);
    std::string oracle_path =
        (fs::path(out_dir) / (t.dialog_id + ".oracle.csv")).string();
    io::CsvWriter csv(oracle_path,
                      {"tuple", "post", "oracle_action", "q_nolaugh", "q_laugh"});
    const auto& o = batch.oracles[i];
    for (size_t k = 0; k < o.post.size(); ++k)
      csv.row({std::to_string(k), std::to_string(int(o.post[k])),
               std::to_string(int(o.oracle_action[k])),
               std::to_string(o.oracle_q[k][0]), std::to_string(o.oracle_q[k][1])});
    dialogs.push_back(json{{"id", t.dialog_id},
                           {"annotations", ann_path},
                           {"oracle", oracle_path}});
  }
  json m{{"dataset", ds_path}, {"dialogs", dialogs}};
  std::ofstream mf(fs::path(out_dir) / "synth_manifest.json");
  mf << m.dump(2) << "\n";
  std::cout << "synthetic: " << batch.dataset.trajectories.size() << " episodes, "
            << batch.dataset.total_tuples() << " tuples, laugh fraction "
            << batch.dataset.laugh_fraction() << "\n";
  write_run_manifest(out_dir, "synth", cfg, {});
  return 0;
}

qtrain::TrainerConfig trainer_config(const json& cfg) {
  const auto& t = cfg.at("trainer");
  qtrain::TrainerConfig tc;
  std::string body = t.at("body").get<std::string>();
  if (body == "mlp")
    tc.body = qtrain::Body::mlp;
  else if (body == "fc_lstm")
    tc.body = qtrain::Body::fc_lstm;
  else if (body == "linear")
    tc.body = qtrain::Body::linear;
  else if (body != "supervised")
    throw std::runtime_error(
        "config error: trainer.body must be mlp, fc_lstm, linear or supervised");
  tc.gamma = t.at("gamma").get<double>();
  tc.updates = t.at("updates").get<size_t>();
  tc.minibatch = t.at("minibatch").get<size_t>();
  tc.seq_len = t.at("seq_len").get<size_t>();
  tc.target_sync = t.at("target_sync").get<size_t>();
  tc.eval_interval = t.at("eval_interval").get<size_t>();
  tc.hidden1 = t.at("hidden1").get<size_t>();
  tc.hidden2 = t.at("hidden2").get<size_t>();
  tc.grad_clip = t.at("grad_clip").get<double>();
  tc.opt.lr = t.at("lr").get<double>();
  tc.use_sgd = t.at("use_sgd").get<bool>();
  tc.divergence_factor = t.at("divergence_factor").get<double>();
  tc.seed = cfg.at("seed").get<uint64_t>();
  return tc;
}

int cmd_train(const std::string& dataset_path, const std::string& out_dir,
              const json& cfg) {
  fs::create_directories(out_dir);
  data::BatchDataset ds = data::load_dataset(dataset_path);
  int fold_count = cfg.at("dataset").at("folds").get<int>();
  auto folds = data::loso_split(ds, fold_count);
  std::vector<size_t> selected;
  for (const auto& f : cfg.at("trainer").at("folds"))
    selected.push_back(f.get<size_t>());
  if (selected.empty())
    for (size_t i = 0; i < folds.size(); ++i) selected.push_back(i);

  std::string body = cfg.at("trainer").at("body").get<std::string>();
  int failures = 0;
  for (size_t fi : selected) {
    if (fi >= folds.size())
      throw std::runtime_error("config error: fold index out of range");
    const auto& fold = folds[fi];
    qtrain::TrainerConfig tc = trainer_config(cfg);
    tc.seed = tc.seed + fi;  // distinct but reproducible per fold
    std::string stem = "fold" + std::to_string(fi) + "_" + body;
    std::string ckpt = (fs::path(out_dir) / (stem + ".ckpt")).string();
    std::string log = (fs::path(out_dir) / (stem + "_log.csv")).string();
    try {
      if (body == "supervised") {
        nn::Network net = qtrain::train_supervised(ds, fold.train_idx, tc);
        net.save(ckpt);
        std::cout << "fold " << fi << " (" << body << "): saved " << ckpt << "\n";
      } else {
        qtrain::TrainResult res =
            tc.body == qtrain::Body::fc_lstm
                ? qtrain::train_lstm(ds, fold.train_idx, fold.test_idx, tc)
                : qtrain::train_mlp(ds, fold.train_idx, fold.test_idx, tc);
        res.network.save(ckpt);
        qtrain::write_training_log(log, res.report);
        const auto& last = res.report.points.back();
        std::cout << "fold " << fi << " (" << body << "): test B_r "
                  << res.report.initial_test_br << " -> " << last.test_br << "\n";
      }
    } catch (const qtrain::DivergenceError& e) {
      ++failures;
      qtrain::write_training_log(log, e.report);
      std::cerr << "fold " << fi << ": " << e.what() << "\n";
    }
  }
  write_run_manifest(out_dir, "train", cfg, {dataset_path});
  return failures == 0 ? 0 : 1;
}

int cmd_eval(const std::string& dataset_path,
             const std::vector<std::string>& checkpoints,
             const std::vector<std::string>& supervised, int fold_index,
             const std::string& out_dir, const json& cfg) {
  fs::create_directories(out_dir);
  data::BatchDataset ds = data::load_dataset(dataset_path);

  std::vector<size_t> idx;
  if (fold_index >= 0) {
    int fold_count = cfg.at("dataset").at("folds").get<int>();
    auto folds = data::loso_split(ds, fold_count);
    if (size_t(fold_index) >= folds.size())
      throw std::runtime_error("fold index out of range");
    idx = folds[size_t(fold_index)].test_idx;
  } else {
    for (size_t i = 0; i < ds.trajectories.size(); ++i) idx.push_back(i);
  }
  uint32_t state_dim = ds.trajectories.at(idx.at(0)).state_dim;

  // Load all networks before producing any output so a dimension mismatch
  // leaves nothing partial behind.
  auto load_checked = [&](const std::string& path) {
    nn::Network net = nn::Network::load(path);
    if (net.input_dim() != state_dim)
      throw std::runtime_error("dimension error: checkpoint " + path +
                               " expects input dim " +
                               std::to_string(net.input_dim()) +
                               " but dataset has state dim " +
                               std::to_string(state_dim));
    return net;
  };
  std::vector<std::pair<std::string, nn::Network>> q_nets, sup_nets;
  for (const auto& p : checkpoints)
    q_nets.emplace_back(fs::path(p).stem().string(), load_checked(p));
  for (const auto& p : supervised)
    sup_nets.emplace_back(fs::path(p).stem().string(), load_checked(p));

  const auto& oc = cfg.at("ope");
  double gamma = oc.at("gamma").get<double>();
  size_t horizon = oc.at("horizon").get<size_t>();
  size_t shift = oc.at("shift").get<size_t>();
  size_t k = oc.at("knn_k").get<size_t>();
  double clip = oc.at("clip").get<double>();
  size_t max_ref = oc.at("max_reference").get<size_t>();
  std::vector<double> taus;
  for (const auto& t : oc.at("taus")) taus.push_back(t.get<double>());

  auto est = ope::estimate_behavior_policy(ds, idx, k, max_ref,
                                           cfg.at("seed").get<uint64_t>());
  std::vector<std::vector<double>> pib(ds.trajectories.size());
  for (size_t ti : idx) pib[ti] = ope::behavior_laugh_prob(est, ds.trajectories[ti]);

  std::vector<ope::SweepRow> rows;
  auto eval_one = [&](const ope::Policy& pi, const std::string& label, double tau) {
    ope::SweepRow row = ope::evaluate_policy(ds, idx, pi, pib, gamma, horizon, shift);
    row.policy = label;
    row.tau = tau;
    rows.push_back(row);
    std::cout << "policy " << label << " tau " << tau << ": value " << row.value
              << ", laugh fraction " << row.laugh_fraction << "\n";
  };

  for (const auto& [name, net] : q_nets) {
    eval_one(ope::GreedyPolicy(net, clip), name + ":greedy", 0.0);
    for (double tau : taus)
      eval_one(ope::SoftmaxThresholdPolicy(net, tau, clip), name + ":softmax", tau);
  }
  for (const auto& [name, net] : sup_nets)
    for (double tau : taus)
      eval_one(ope::SupervisedThresholdPolicy(net, tau, clip), name + ":supervised",
               tau);

  // Self-consistency reference: the estimated behavior policy and the plain
  // empirical discounted return of the same segments.
  eval_one(ope::BehaviorEstimatePolicy(est), "behavior-estimate", 0.0);
  auto sliding = ope::sliding_trajectories(ds, idx, horizon, shift);
  ope::SweepRow emp;
  emp.policy = "behavior-empirical";
  emp.value = ope::empirical_segment_return(ds, sliding.segments, gamma, horizon);
  emp.laugh_fraction = ds.laugh_fraction();
  emp.n_segments = sliding.segments.size();
  emp.ess_min = double(sliding.segments.size());
  rows.push_back(emp);
  std::cout << "policy behavior-empirical: value " << emp.value << "\n";

  std::string report = (fs::path(out_dir) / "ope_report.csv").string();
  ope::write_ope_report(report, rows);

  std::vector<std::string> inputs{dataset_path};
  inputs.insert(inputs.end(), checkpoints.begin(), checkpoints.end());
  inputs.insert(inputs.end(), supervised.begin(), supervised.end());
  write_run_manifest(out_dir, "eval", cfg, inputs);
  return 0;
}

// Aggregates per-fold CSV logs: training curves keyed by (update, split),
// OPE reports keyed by (policy, tau); mean +- std with n per group.
int cmd_report(const std::vector<std::string>& logs, const std::string& out_dir,
               const json& cfg) {
  fs::create_directories(out_dir);
  using Key = std::vector<std::string>;
  std::map<std::string, std::map<Key, std::vector<std::vector<double>>>> groups;
  std::map<std::string, std::vector<std::string>> headers;

  for (const auto& path : logs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open log " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty log " + path);
    std::vector<std::string> cols;
    {
      std::stringstream ss(line);
      std::string c;
      while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    std::string kind;
    size_t n_key = 0;
    if (!cols.empty() && cols[0] == "update") {
      kind = "training";
      n_key = 2;  // update, split
    } else if (!cols.empty() && cols[0] == "policy") {
      kind = "ope";
      n_key = 2;  // policy, tau
    } else {
      throw std::runtime_error("unrecognized log header in " + path);
    }
    headers[kind] = cols;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string c;
      std::vector<std::string> cells;
      while (std::getline(ss, c, ',')) cells.push_back(c);
      if (cells.size() != cols.size())
        throw std::runtime_error("ragged row in " + path);
      Key key(cells.begin(), cells.begin() + n_key);
      std::vector<double> vals;
      for (size_t i = n_key; i < cells.size(); ++i) vals.push_back(std::stod(cells[i]));
      groups[kind][key].push_back(vals);
    }
  }

  for (const auto& [kind, by_key] : groups) {
    const auto& cols = headers[kind];
    size_t n_key = 2;
    std::vector<std::string> header(cols.begin(), cols.begin() + n_key);
    for (size_t i = n_key; i < cols.size(); ++i) {
      header.push_back(cols[i] + "_mean");
      header.push_back(cols[i] + "_std");
    }
    header.push_back("n");
    io::CsvWriter csv((fs::path(out_dir) / ("report_" + kind + ".csv")).string(),
                      header);
    for (const auto& [key, rows] : by_key) {
      std::vector<std::string> out(key);
      size_t nv = cols.size() - n_key;
      for (size_t j = 0; j < nv; ++j) {
        double mu = 0.0;
        for (const auto& r : rows) mu += r[j];
        mu /= double(rows.size());
        double ss = 0.0;
        for (const auto& r : rows) ss += (r[j] - mu) * (r[j] - mu);
        double sd = std::sqrt(ss / double(rows.size()));
        out.push_back(std::to_string(mu));
        out.push_back(std::to_string(sd));
      }
      out.push_back(std::to_string(rows.size()));
      csv.row(out);
    }
  }
  write_run_manifest(out_dir, "report", cfg, logs);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& argv) {
  CLI::App app{"batch RL pipeline for laugh backchannel timing"};
  app.require_subcommand(0, 1);

  std::string config_path, out_dir = ".", manifest, dataset_path;
  uint64_t seed = 0;
  bool seed_set = false, print_defaults = false;
  int jobs = 0, fold_index = -1;
  std::vector<std::string> checkpoints, supervised, logs;

  app.add_option("--config", config_path, "pipeline config (JSON)");
  app.add_option("--seed", seed, "global seed override")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--jobs", jobs, "worker thread count (0 = library default)");
  app.add_flag("--print-defaults", print_defaults,
               "print the full effective config and exit");

  auto* c_features = app.add_subcommand("features", "extract state streams from WAV");
  c_features->add_option("--manifest", manifest)->required();
  auto* c_rewards = app.add_subcommand("rewards", "compute action/reward streams");
  c_rewards->add_option("--manifest", manifest)->required();
  auto* c_build = app.add_subcommand("build", "assemble the tuple dataset");
  c_build->add_option("--manifest", manifest)->required();
  auto* c_train = app.add_subcommand("train", "train value networks per fold");
  c_train->add_option("--dataset", dataset_path)->required();
  auto* c_eval = app.add_subcommand("eval", "off-policy evaluation report");
  c_eval->add_option("--dataset", dataset_path)->required();
  c_eval->add_option("--checkpoint", checkpoints, "Q-network checkpoint(s)");
  c_eval->add_option("--supervised", supervised, "classifier checkpoint(s)");
  c_eval->add_option("--fold", fold_index, "restrict to this fold's test split");
  auto* c_synth = app.add_subcommand("synth", "generate synthetic dyadic data");
  (void)c_synth;
  auto* c_report = app.add_subcommand("report", "aggregate fold logs");
  c_report->add_option("--log", logs, "training-log or OPE-report CSV(s)")
      ->required();

  std::vector<const char*> cargv;
  cargv.push_back("bcrl");
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(int(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
#ifdef _OPENMP
    if (jobs > 0) omp_set_num_threads(jobs);
#endif
    json cfg = load_config(config_path, seed, seed_set);
    if (print_defaults) {
      std::cout << cfg.dump(2) << "\n";
      return 0;
    }
    if (c_features->parsed()) return cmd_features(manifest, out_dir, cfg);
    if (c_rewards->parsed()) return cmd_rewards(manifest, out_dir, cfg);
    if (c_build->parsed()) return cmd_build(manifest, out_dir, cfg);
    if (c_train->parsed()) return cmd_train(dataset_path, out_dir, cfg);
    if (c_eval->parsed())
      return cmd_eval(dataset_path, checkpoints, supervised, fold_index, out_dir,
                      cfg);
    if (c_synth->parsed()) return cmd_synth(out_dir, cfg);
    if (c_report->parsed()) return cmd_report(logs, out_dir, cfg);
    std::cerr << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bcrl::cli

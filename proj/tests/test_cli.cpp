#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bcrl/cli.hpp"
#include "bcrl/dataset.hpp"
#include "bcrl/dsp.hpp"
#include "bcrl/nn.hpp"
#include "bcrl/reward.hpp"

namespace fs = std::filesystem;
using bcrl::cli::run_cli;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

size_t csv_rows(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n ? n - 1 : 0;  // minus header
}

void write_tone(const std::string& path, double seconds, double hz,
                int sample_rate = 16000) {
  bcrl::dsp::AudioTrack t;
  t.sample_rate = sample_rate;
  size_t n = size_t(seconds * sample_rate);
  t.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    t.samples[i] = 0.3 * std::sin(2.0 * M_PI * hz * double(i) / sample_rate);
  bcrl::dsp::write_wav(path, t);
}

// Minimal valid PCM16 mono RIFF at an arbitrary sample rate.
void write_raw_wav(const std::string& path, uint32_t rate, uint32_t n_samples) {
  std::ofstream out(path, std::ios::binary);
  auto u32 = [&](uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
  auto u16 = [&](uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
  uint32_t data_bytes = n_samples * 2;
  out.write("RIFF", 4);
  u32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(rate);
  u32(rate * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(data_bytes);
  for (uint32_t i = 0; i < n_samples; ++i) u16(uint16_t(int16_t(i % 1000)));
}

void write_dialog_annotations(const std::string& path) {
  using namespace bcrl::reward;
  std::vector<AnnotationEvent> ev = {
      {"A", AnnotationKind::speech_turn, 0.5, 4.5},
      {"B", AnnotationKind::speech_turn, 5.0, 9.0},
      {"A", AnnotationKind::gaze_at_partner, 1.0, 8.0},
      {"B", AnnotationKind::gaze_at_partner, 2.0, 7.0},
      {"A", AnnotationKind::laugh, 6.0, 7.0},
      {"B", AnnotationKind::nod, 2.5, 2.8},
  };
  write_annotations(path, ev);
}

}  // namespace

TEST_CASE("print-defaults succeeds; unknown config keys are rejected") {
  CHECK(run_cli({"--print-defaults"}) == 0);

  TempDir dir("cfg");
  write_text(dir / "bad.json", "{\"trainer\": {\"bogus\": 1}}");
  CHECK(run_cli({"--config", dir / "bad.json", "--print-defaults"}) == 1);

  write_text(dir / "good.json", "{\"trainer\": {\"updates\": 5}}");
  CHECK(run_cli({"--config", dir / "good.json", "--print-defaults"}) == 0);
}

TEST_CASE("wav pipeline: features, rewards, build produce a loadable dataset") {
  TempDir dir("wav");
  write_tone(dir / "a.wav", 12.0, 200.0);
  write_tone(dir / "b.wav", 12.0, 150.0);
  write_dialog_annotations(dir / "d1.jsonl");
  write_text(dir / "manifest.json", R"({"dialogs":[{"id":"d1",
    "wav":{"A":")" + (dir / "a.wav") + R"(","B":")" + (dir / "b.wav") + R"("},
    "annotations":")" + (dir / "d1.jsonl") + R"(",
    "subjects":{"A":"s1","B":"s2"}}]})");

  CHECK(run_cli({"--out", dir.path.string(), "features", "--manifest",
                 dir / "manifest.json"}) == 0);
  CHECK(fs::exists(dir / "d1.A.states.bin"));
  CHECK(fs::exists(dir / "run_manifest_features.json"));

  CHECK(run_cli({"--out", dir.path.string(), "rewards", "--manifest",
                 dir / "manifest.json"}) == 0);
  CHECK(run_cli({"--out", dir.path.string(), "build", "--manifest",
                 dir / "manifest.json"}) == 0);

  auto ds = bcrl::data::load_dataset(dir / "dataset.bin");
  REQUIRE(ds.trajectories.size() == 2);
  for (const auto& t : ds.trajectories) {
    CHECK(t.dialog_id == "d1");
    CHECK(t.state_dim == 209);
    // 12 s of audio -> states at t = 1.0 .. 12.0 every 25 ms
    CHECK(t.n_states() == 441);
    CHECK(t.start_time == doctest::Approx(1.0));
    for (float r : t.rewards) {
      CHECK(std::isfinite(r));
      CHECK(r >= 0.0f);
    }
  }
  CHECK(ds.subjects.at("d1") == std::make_pair(std::string("s1"), std::string("s2")));
  // A laughs during [6,7): 40 action steps on A's track, none on B's.
  const auto& ta = ds.trajectories[0].actor_role == "A" ? ds.trajectories[0]
                                                        : ds.trajectories[1];
  const auto& tb = ds.trajectories[0].actor_role == "A" ? ds.trajectories[1]
                                                        : ds.trajectories[0];
  size_t laughs_a = 0, laughs_b = 0;
  for (auto a : ta.actions) laughs_a += a;
  for (auto a : tb.actions) laughs_b += a;
  CHECK(laughs_a >= 39);
  CHECK(laughs_a <= 41);
  CHECK(laughs_b == 0);
}

TEST_CASE("feature extraction is byte-deterministic across reruns") {
  TempDir dir("det");
  write_tone(dir / "a.wav", 2.0, 300.0);
  write_text(dir / "manifest.json", R"({"dialogs":[{"id":"d",
    "wav":{"A":")" + (dir / "a.wav") + R"("}}]})");
  fs::create_directories(dir / "r1");
  fs::create_directories(dir / "r2");
  CHECK(run_cli({"--out", dir / "r1", "features", "--manifest",
                 dir / "manifest.json"}) == 0);
  CHECK(run_cli({"--out", dir / "r2", "features", "--manifest",
                 dir / "manifest.json"}) == 0);
  auto b1 = read_bytes((fs::path(dir / "r1") / "d.A.states.bin").string());
  auto b2 = read_bytes((fs::path(dir / "r2") / "d.A.states.bin").string());
  CHECK(!b1.empty());
  CHECK(b1 == b2);
}

TEST_CASE("a wrong-rate wav fails the features command without aborting the rest") {
  TempDir dir("rate");
  write_raw_wav(dir / "bad.wav", 8000, 16000);
  write_tone(dir / "good.wav", 2.0, 200.0);
  write_text(dir / "manifest.json", R"({"dialogs":[{"id":"d",
    "wav":{"A":")" + (dir / "bad.wav") + R"(","B":")" + (dir / "good.wav") +
                                          R"("}}]})");
  CHECK(run_cli({"--out", dir.path.string(), "features", "--manifest",
                 dir / "manifest.json"}) == 1);
  CHECK(!fs::exists(dir / "d.A.states.bin"));  // the bad track produced nothing
  CHECK(fs::exists(dir / "d.B.states.bin"));   // the good track still ran
}

TEST_CASE("synth, train, eval, report round trip on a small configuration") {
  TempDir dir("synth");
  write_text(dir / "cfg.json", R"({
    "seed": 3,
    "synth": {"episode_length_s": 30.0, "n_episodes": 10},
    "trainer": {"updates": 100, "minibatch": 32, "eval_interval": 50,
                "hidden1": 16, "hidden2": 8, "lr": 0.001, "folds": [0]},
    "ope": {"shift": 50, "max_reference": 2000, "taus": [0.3, 0.7]}
  })");
  std::vector<std::string> base = {"--config", dir / "cfg.json", "--out",
                                   dir.path.string()};

  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> v = base;
    v.insert(v.end(), extra.begin(), extra.end());
    return v;
  };

  CHECK(run_cli(with({"synth"})) == 0);
  REQUIRE(fs::exists(dir / "dataset.bin"));
  CHECK(fs::exists(dir / "synth-ep0.annotations.jsonl"));
  CHECK(fs::exists(dir / "synth-ep0.oracle.csv"));
  CHECK(fs::exists(dir / "synth_manifest.json"));
  auto ds = bcrl::data::load_dataset(dir / "dataset.bin");
  CHECK(ds.trajectories.size() == 10);
  CHECK(ds.trajectories[0].n_tuples() == 1160);  // 30 s episode

  CHECK(run_cli(with({"train", "--dataset", dir / "dataset.bin"})) == 0);
  REQUIRE(fs::exists(dir / "fold0_mlp.ckpt"));
  CHECK(fs::exists(dir / "fold0_mlp_log.csv"));
  CHECK(csv_rows(dir / "fold0_mlp_log.csv") > 0);

  CHECK(run_cli(with({"eval", "--dataset", dir / "dataset.bin", "--checkpoint",
                      dir / "fold0_mlp.ckpt", "--fold", "0"})) == 0);
  REQUIRE(fs::exists(dir / "ope_report.csv"));
  // greedy + 2 taus + behavior-estimate + behavior-empirical
  CHECK(csv_rows(dir / "ope_report.csv") == 5);

  // aggregate the same report twice: same keys, n = 2 per group
  fs::create_directories(dir / "agg");
  CHECK(run_cli({"--out", dir / "agg", "report", "--log", dir / "ope_report.csv",
                 "--log", dir / "ope_report.csv"}) == 0);
  REQUIRE(fs::exists((fs::path(dir / "agg") / "report_ope.csv").string()));
  CHECK(csv_rows((fs::path(dir / "agg") / "report_ope.csv").string()) == 5);
  std::ifstream in((fs::path(dir / "agg") / "report_ope.csv").string());
  std::string line;
  std::getline(in, line);
  CHECK(line.find("value_mean") != std::string::npos);
  CHECK(line.find("value_std") != std::string::npos);
  while (std::getline(in, line))
    if (!line.empty()) CHECK(line.substr(line.rfind(',') + 1) == "2");

  // run manifests recorded at every stage
  for (std::string c : {"synth", "train", "eval"}) {
    std::ifstream mf(dir / ("run_manifest_" + c + ".json"));
    REQUIRE(mf.good());
    std::ostringstream ss;
    ss << mf.rdbuf();
    CHECK(ss.str().find("\"seed\": 3") != std::string::npos);
    CHECK(ss.str().find("config_crc32") != std::string::npos);
  }
}

TEST_CASE("eval rejects a checkpoint whose input dim mismatches the dataset") {
  TempDir dir("dim");
  write_text(dir / "cfg.json", R"({
    "synth": {"episode_length_s": 30.0, "n_episodes": 5},
    "ope": {"max_reference": 500}
  })");
  CHECK(run_cli({"--config", dir / "cfg.json", "--out", dir.path.string(),
                 "synth"}) == 0);

  bcrl::nn::Network tiny({{bcrl::nn::LayerKind::dense, 5, 2,
                           bcrl::nn::Activation::identity}});
  tiny.init_params(1);
  tiny.save(dir / "tiny.ckpt");

  fs::create_directories(dir / "out");
  CHECK(run_cli({"--config", dir / "cfg.json", "--out", dir / "out", "eval",
                 "--dataset", dir / "dataset.bin", "--checkpoint",
                 dir / "tiny.ckpt"}) == 1);
  CHECK(!fs::exists((fs::path(dir / "out") / "ope_report.csv").string()));
}

TEST_CASE("train surfaces a divergent run as a failure with a log") {
  TempDir dir("div");
  write_text(dir / "cfg.json", R"({
    "synth": {"episode_length_s": 30.0, "n_episodes": 10},
    "trainer": {"body": "linear", "use_sgd": true, "lr": 3.0, "target_sync": 1,
                "updates": 2000, "eval_interval": 100, "minibatch": 32,
                "folds": [0]}
  })");
  CHECK(run_cli({"--config", dir / "cfg.json", "--out", dir.path.string(),
                 "synth"}) == 0);
  CHECK(run_cli({"--config", dir / "cfg.json", "--out", dir.path.string(),
                 "train", "--dataset", dir / "dataset.bin"}) == 1);
  CHECK(fs::exists(dir / "fold0_linear_log.csv"));
  CHECK(!fs::exists(dir / "fold0_linear.ckpt"));
}

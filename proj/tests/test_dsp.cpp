#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <vector>

#include "bcrl/dataset.hpp"
#include "bcrl/dsp.hpp"

using namespace bcrl::dsp;
using bcrl::data::Rng;

namespace {

constexpr double kPi = 3.14159265358979323846;

AudioTrack tone(double freq_hz, double seconds, double amp = 0.5) {
  AudioTrack t;
  t.samples.resize(size_t(seconds * kSampleRate));
  for (size_t i = 0; i < t.samples.size(); ++i)
    t.samples[i] = amp * std::sin(2.0 * kPi * freq_hz * i / kSampleRate);
  return t;
}

AudioTrack noise(double seconds, uint64_t seed, double amp = 0.3) {
  AudioTrack t;
  Rng rng(seed);
  t.samples.resize(size_t(seconds * kSampleRate));
  for (auto& s : t.samples) s = amp * std::clamp(rng.normal(), -3.0, 3.0) / 3.0;
  return t;
}

double hz_to_mel_ref(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz_ref(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Independent MFCC reference: direct O(n^2) DFT instead of the FFT, with the
// filterbank and DCT written out from the definitions.
std::vector<double> mfcc_oracle(const Frame& fr, const MfccConfig& cfg) {
  const int n = cfg.fft_size;
  const int n_bins = n / 2 + 1;
  std::vector<double> power(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    double re = 0.0, im = 0.0;
    for (size_t i = 0; i < fr.samples.size(); ++i) {
      const double ang = -2.0 * kPi * b * double(i) / n;
      re += fr.samples[i] * std::cos(ang);
      im += fr.samples[i] * std::sin(ang);
    }
    power[b] = re * re + im * im;
  }
  const double mlo = hz_to_mel_ref(cfg.f_lo), mhi = hz_to_mel_ref(cfg.f_hi);
  std::vector<double> log_e(cfg.n_filters);
  for (int f = 0; f < cfg.n_filters; ++f) {
    const double lo = mel_to_hz_ref(mlo + (mhi - mlo) * f / (cfg.n_filters + 1));
    const double mid =
        mel_to_hz_ref(mlo + (mhi - mlo) * (f + 1) / (cfg.n_filters + 1));
    const double hi =
        mel_to_hz_ref(mlo + (mhi - mlo) * (f + 2) / (cfg.n_filters + 1));
    double e = 0.0;
    for (int b = 0; b < n_bins; ++b) {
      const double fz = b * double(kSampleRate) / n;
      double w = 0.0;
      if (fz > lo && fz < mid)
        w = (fz - lo) / (mid - lo);
      else if (fz >= mid && fz < hi)
        w = (hi - fz) / (hi - mid);
      e += w * power[b];
    }
    log_e[f] = std::log(std::max(e, cfg.energy_floor));
  }
  std::vector<double> out(kNumMfcc);
  for (int k = 0; k < kNumMfcc; ++k) {
    double s = 0.0;
    for (int f = 0; f < cfg.n_filters; ++f)
      s += log_e[f] * std::cos(kPi * k * (f + 0.5) / cfg.n_filters);
    out[k] = s * std::sqrt((k == 0 ? 1.0 : 2.0) / cfg.n_filters);
  }
  return out;
}

}  // namespace

TEST_CASE("one second of audio yields 39 frames at 40 ms / 25 ms") {
  auto frames = frame_signal(tone(440.0, 1.0));
  CHECK(frames.size() == 39);
  CHECK(frames[0].timestamp == 0.0);
  CHECK(frames[1].timestamp == doctest::Approx(0.025));
  CHECK(frames.back().timestamp == doctest::Approx(0.95));
}

TEST_CASE("hamming window shapes a constant signal") {
  AudioTrack t;
  t.samples.assign(kWindowSamples, 1.0);
  auto frames = frame_signal(t);
  REQUIRE(frames.size() == 1);
  auto w = hamming_window(kWindowSamples);
  CHECK(frames[0].samples.front() == doctest::Approx(0.08).epsilon(1e-12));
  CHECK(frames[0].samples.back() == doctest::Approx(0.08).epsilon(1e-9));
  // peak near the middle at ~1.0
  CHECK(*std::max_element(frames[0].samples.begin(), frames[0].samples.end()) ==
        doctest::Approx(1.0).epsilon(1e-3));
  for (int i = 0; i < kWindowSamples; ++i)
    CHECK(frames[0].samples[i] == doctest::Approx(w[i]).epsilon(1e-12));
}

TEST_CASE("MFCC matches the naive-DFT reference on 100 random frames") {
  Rng rng(99);
  MfccConfig cfg;
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    Frame fr;
    fr.samples.resize(kWindowSamples);
    for (auto& s : fr.samples) s = 0.3 * rng.normal();
    auto got = mfcc(fr, cfg);
    auto want = mfcc_oracle(fr, cfg);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i)
      worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("all-zero frame hits the energy floor in every filter") {
  Frame fr;
  fr.samples.assign(kWindowSamples, 0.0);
  MfccConfig cfg;
  auto c = mfcc(fr, cfg);
  // constant log-energy vector: only the DC coefficient survives the DCT
  CHECK(c[0] ==
        doctest::Approx(std::log(cfg.energy_floor) * std::sqrt(double(cfg.n_filters)))
            .epsilon(1e-9));
  for (int k = 1; k < kNumMfcc; ++k) CHECK(c[k] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("autocorrelation pitch finds a 200 Hz tone within 5 Hz") {
  auto frames = frame_signal(tone(200.0, 0.5));
  int voiced = 0;
  for (const auto& fr : frames) {
    auto p = prosody_point(fr);
    if (p.pitch > 0.0) {
      ++voiced;
      CHECK(std::abs(p.pitch - 200.0) <= 5.0);
      CHECK(p.confidence >= 0.3);
    }
  }
  CHECK(voiced == int(frames.size()));
}

TEST_CASE("pitch is invariant to amplitude scaling") {
  auto loud = frame_signal(tone(150.0, 0.2, 0.8));
  auto soft = frame_signal(tone(150.0, 0.2, 0.05));
  for (size_t i = 0; i < loud.size(); ++i) {
    auto a = prosody_point(loud[i]);
    auto b = prosody_point(soft[i]);
    CHECK(a.pitch == doctest::Approx(b.pitch));
    CHECK(a.intensity > b.intensity);
  }
}

TEST_CASE("silence conventions: floored intensity, zero pitch and confidence") {
  Frame fr;
  fr.samples.assign(kWindowSamples, 0.0);
  auto p = prosody_point(fr);
  CHECK(p.intensity == doctest::Approx(std::log(1e-10)));
  CHECK(p.pitch == 0.0);
  CHECK(p.confidence == 0.0);
}

TEST_CASE("functionals of the ramp 1..40") {
  std::vector<double> v(40);
  std::iota(v.begin(), v.end(), 1.0);
  double f[kNumFunctionals];
  functionals(v, f);
  CHECK(f[0] == doctest::Approx(20.5));                      // mean
  CHECK(f[1] == doctest::Approx(std::sqrt(133.25)));         // population std
  CHECK(f[2] == doctest::Approx(0.0).epsilon(1e-12));        // skewness
  // excess kurtosis of a discrete uniform: -6(n^2+1)/(5(n^2-1))
  CHECK(f[3] == doctest::Approx(-6.0 * 1601.0 / (5.0 * 1599.0)).epsilon(1e-9));
  CHECK(f[4] == doctest::Approx(39.0));   // range
  CHECK(f[5] == doctest::Approx(1.0));    // min
  CHECK(f[6] == doctest::Approx(40.0));   // max
  CHECK(f[7] == doctest::Approx(10.75));  // Q1: h = 39*0.25 = 9.75
  CHECK(f[8] == doctest::Approx(30.25));  // Q3
  CHECK(f[9] == doctest::Approx(20.5));   // median
  CHECK(f[10] == doctest::Approx(19.5));  // IQR
}

TEST_CASE("functionals are permutation-invariant and handle zero variance") {
  Rng rng(21);
  std::vector<double> v(37);
  for (auto& x : v) x = rng.normal();
  double a[kNumFunctionals], b[kNumFunctionals];
  functionals(v, a);
  std::reverse(v.begin(), v.end());
  std::swap(v[3], v[19]);
  functionals(v, b);
  for (int i = 0; i < kNumFunctionals; ++i)
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  std::vector<double> c(10, 4.2);
  double f[kNumFunctionals];
  functionals(c, f);
  CHECK(f[0] == doctest::Approx(4.2));
  CHECK(f[1] == 0.0);
  CHECK(f[2] == 0.0);  // zero-variance convention
  CHECK(f[3] == 0.0);
  CHECK(f[4] == 0.0);
  CHECK(f[10] == 0.0);
}

TEST_CASE("10 s of audio yields 361 states of dimension 209") {
  auto states = extract_states(noise(10.0, 5));
  CHECK(states.size() == 361);
  for (const auto& s : states) CHECK(s.values.size() == 209);
  CHECK(states[0].timestamp == doctest::Approx(1.0));
  CHECK(states[1].timestamp == doctest::Approx(1.025));
  CHECK(states.back().timestamp == doctest::Approx(10.0));
}

TEST_CASE("tracks shorter than about a second are rejected") {
  CHECK_THROWS(extract_states(noise(0.9, 1)));
  CHECK_NOTHROW(extract_states(noise(1.2, 1)));
}

TEST_CASE("state layout is dim-major: 11 consecutive functionals per feature") {
  // A pure tone's pitch is constant, so the pitch dim's std (functional 1)
  // is ~0 while min == max == the tone pitch.
  auto states = extract_states(tone(200.0, 2.0));
  const int pitch_dim = 14;  // 13 MFCC, then intensity, pitch, ...
  const auto& s = states[20].values;
  double mn = s[pitch_dim * kNumFunctionals + 5];
  double mx = s[pitch_dim * kNumFunctionals + 6];
  CHECK(mn == doctest::Approx(mx).epsilon(0.05));
  CHECK(std::abs(mn - 200.0) <= 5.0);
}

TEST_CASE("normalization: fit, apply, undo round-trip") {
  auto states = extract_states(noise(4.0, 77));
  REQUIRE(states.size() >= 100);
  auto st = fit_normalization(states, "train");
  // residual mean ~0 and std ~1 over the fitted split
  std::vector<double> mean(209, 0.0);
  for (const auto& s : states) {
    auto z = apply_normalization(s, st);
    for (int d = 0; d < 209; ++d) mean[d] += z.values[d];
  }
  for (int d = 0; d < 209; ++d)
    CHECK(std::abs(mean[d] / double(states.size())) < 1e-9);

  auto z = apply_normalization(states[7], st);
  CHECK(z.normalized);
  auto back = undo_normalization(z, st);
  for (int d = 0; d < 209; ++d)
    CHECK(back.values[d] == doctest::Approx(states[7].values[d]).epsilon(1e-12));
}

TEST_CASE("normalization refuses tiny splits") {
  auto states = extract_states(noise(1.5, 3));
  REQUIRE(states.size() < 100);
  CHECK_THROWS(fit_normalization(states, "tiny"));
}

TEST_CASE("normalization stats survive a save/load round-trip") {
  auto states = extract_states(noise(4.0, 13));
  auto st = fit_normalization(states, "train");
  save_normalization("test_norm.bin", st);
  auto back = load_normalization("test_norm.bin");
  CHECK(back.mean == st.mean);
  CHECK(back.stddev == st.stddev);
  CHECK(back.source_split == st.source_split);
  std::remove("test_norm.bin");
}

TEST_CASE("stream container round-trips bit-exactly and detects corruption") {
  auto states = extract_states(noise(2.0, 31));
  StreamFile sf = states_to_stream(states);
  write_stream("test_stream.bin", sf);
  StreamFile back = read_stream("test_stream.bin");
  CHECK(back.dims == sf.dims);
  CHECK(back.rate_hz == sf.rate_hz);
  CHECK(back.start_time == sf.start_time);
  CHECK(back.data == sf.data);

  FILE* f = std::fopen("test_stream.bin", "r+b");
  REQUIRE(f);
  std::fseek(f, 64, SEEK_SET);
  int ch = std::fgetc(f);
  std::fseek(f, 64, SEEK_SET);
  std::fputc(ch ^ 0x55, f);
  std::fclose(f);
  CHECK_THROWS(read_stream("test_stream.bin"));
  std::remove("test_stream.bin");
}

TEST_CASE("WAV round-trip at 16-bit quantization accuracy") {
  AudioTrack t = tone(330.0, 0.3);
  write_wav("test_tone.wav", t);
  AudioTrack back = read_wav("test_tone.wav");
  REQUIRE(back.samples.size() == t.samples.size());
  CHECK(back.sample_rate == kSampleRate);
  for (size_t i = 0; i < t.samples.size(); i += 37)
    CHECK(std::abs(back.samples[i] - t.samples[i]) < 1.0 / 32000.0);
  std::remove("test_tone.wav");
}

TEST_CASE("an 8 kHz WAV is rejected with an error naming the file") {
  // Hand-built header with rate 8000.
  std::ofstream out("test_8k.wav", std::ios::binary);
  auto u32 = [&](uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
  auto u16 = [&](uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
  out.write("RIFF", 4);
  u32(36 + 16);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  u32(16);
  u16(1);
  u16(1);
  u32(8000);
  u32(16000);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(16);
  for (int i = 0; i < 8; ++i) u16(0);
  out.close();
  try {
    read_wav("test_8k.wav");
    FAIL("expected rejection");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("test_8k.wav") != std::string::npos);
    CHECK(msg.find("8000") != std::string::npos);
  }
  std::remove("test_8k.wav");
}

TEST_CASE("fft matches the direct DFT and rejects non-power-of-two sizes") {
  Rng rng(6);
  std::vector<std::complex<double>> a(64);
  for (auto& v : a) v = {rng.normal(), rng.normal()};
  auto dft = [&](int k) {
    std::complex<double> s = 0;
    for (int i = 0; i < 64; ++i)
      s += a[i] * std::polar(1.0, -2.0 * kPi * k * i / 64.0);
    return s;
  };
  std::vector<std::complex<double>> want(64);
  for (int k = 0; k < 64; ++k) want[k] = dft(k);
  fft(a);
  for (int k = 0; k < 64; ++k) CHECK(std::abs(a[k] - want[k]) < 1e-9);

  std::vector<std::complex<double>> bad(48);
  CHECK_THROWS(fft(bad));
}

#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bcrl::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr int kWindowMs = 40;
inline constexpr int kHopMs = 25;
inline constexpr int kWindowSamples = kSampleRate * kWindowMs / 1000;  // 640
inline constexpr int kHopSamples = kSampleRate * kHopMs / 1000;        // 400
inline constexpr int kNumMfcc = 13;
inline constexpr int kNumProsody = 6;
inline constexpr int kFrameDim = kNumMfcc + kNumProsody;  // 19
inline constexpr int kNumFunctionals = 11;
inline constexpr int kStateDim = kFrameDim * kNumFunctionals;  // 209
inline constexpr int kStateRateHz = 40;
inline constexpr int kFramesPerSecond = 40;

struct MfccConfig {
  int n_filters = 26;
  int fft_size = 1024;
  double f_lo = 0.0;
  double f_hi = 8000.0;
  double energy_floor = 1e-10;
};

struct AudioTrack {
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = kSampleRate;
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Rejects anything that is not RIFF/WAVE, PCM 16-bit signed LE, mono, 16 kHz.
AudioTrack read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioTrack& track);

struct Frame {
  double timestamp = 0.0;              // seconds, start of frame
  std::vector<double> samples;         // Hamming-weighted, kWindowSamples long
};

struct FrameFeatures {
  double timestamp = 0.0;
  std::vector<double> values;  // 13 MFCC then 6 prosody, length 19
};

struct StateVector {
  double timestamp = 0.0;      // seconds; >= 1.0
  std::vector<double> values;  // length 209: dim-major, 11 functionals per dim
  bool normalized = false;
};

struct NormalizationStats {
  std::vector<double> mean, stddev;  // 209 each; stddev clamped to >= 1e-8
  std::string source_split;
  int n_clamped = 0;
};

// In-place radix-2 FFT; n must be a power of two.
void fft(std::vector<std::complex<double>>& a);

std::vector<double> hamming_window(int n);

// Frame k covers samples [k*hop, k*hop + window).  Throws if the track is
// shorter than one window.
std::vector<Frame> frame_signal(const AudioTrack& track,
                                int window_samples = kWindowSamples,
                                int hop_samples = kHopSamples);

// 13 coefficients: log mel-filterbank energies (floored) through an
// orthonormal DCT-II.
std::vector<double> mfcc(const Frame& frame, const MfccConfig& cfg = {});

struct ProsodyPoint {
  double intensity = 0.0;   // log RMS, floored
  double pitch = 0.0;       // Hz; 0 when unvoiced
  double confidence = 0.0;  // normalized autocorrelation peak in [0,1]
};

ProsodyPoint prosody_point(const Frame& frame);

// intensity, pitch, confidence and their first differences over the hop.
// prev == nullopt at the first frame (derivatives zero).
std::vector<double> prosody(const Frame& frame,
                            const std::optional<ProsodyPoint>& prev,
                            ProsodyPoint* out_point = nullptr);

FrameFeatures frame_features(const Frame& frame,
                             const std::optional<ProsodyPoint>& prev,
                             ProsodyPoint* out_point = nullptr,
                             const MfccConfig& cfg = {});

// The 11 functionals, in this fixed order: mean, std, skewness, kurtosis
// (excess), range, min, max, Q1, Q3, median, IQR.  Quantiles interpolate
// linearly between order statistics (h = (n-1)p).  Zero-variance windows get
// skewness = kurtosis = 0.
void functionals(const std::vector<double>& values, double* out11);

// Summarize a trailing window of frames (>= 2) into one 209-d state.
StateVector summarize(const std::vector<FrameFeatures>& window, double timestamp);

// One state per 25 ms from t = 1.0 s; state i summarizes frames [i, i+40)
// clipped to the available frames.  Throws if the track is shorter than 1.04 s.
std::vector<StateVector> extract_states(const AudioTrack& track,
                                        const MfccConfig& cfg = {});

NormalizationStats fit_normalization(const std::vector<StateVector>& states,
                                     const std::string& split_id = "");
StateVector apply_normalization(const StateVector& s, const NormalizationStats& st);
StateVector undo_normalization(const StateVector& s, const NormalizationStats& st);

// Versioned binary container for per-track feature streams (also used for
// 1-d reward/action streams): header {dims, rate, count, start_time}, body
// little-endian float32 row-major.
struct StreamFile {
  uint32_t dims = 0;
  double rate_hz = kStateRateHz;
  double start_time = 0.0;
  std::vector<float> data;  // count * dims
  size_t count() const { return dims ? data.size() / dims : 0; }
};

void write_stream(const std::string& path, const StreamFile& s);
StreamFile read_stream(const std::string& path);
void write_stream_csv(const std::string& path, const StreamFile& s);

StreamFile states_to_stream(const std::vector<StateVector>& states);

void save_normalization(const std::string& path, const NormalizationStats& st);
NormalizationStats load_normalization(const std::string& path);

}  // namespace bcrl::dsp

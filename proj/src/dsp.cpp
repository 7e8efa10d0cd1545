#include "bcrl/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bcrl/io_util.hpp"

namespace bcrl::dsp {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kRmsFloor = 1e-10;
constexpr double kVoicingThreshold = 0.3;
constexpr double kPitchLoHz = 60.0;
constexpr double kPitchHiHz = 400.0;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

AudioTrack read_wav(const std::string& path) {
  io::BinaryReader r(path);
  io::expect_magic(r, "RIFF", path);
  r.u32();  // chunk size
  io::expect_magic(r, "WAVE", path);
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  AudioTrack track;
  while (!r.eof()) {
    char id[4];
    r.raw(id, 4);
    const uint32_t size = r.u32();
    if (std::memcmp(id, "fmt ", 4) == 0) {
      uint16_t v16;
      r.raw(&v16, 2); format = v16;
      r.raw(&v16, 2); channels = v16;
      rate = r.u32();
      r.u32();  // byte rate
      r.raw(&v16, 2);  // block align
      r.raw(&v16, 2); bits = v16;
      for (uint32_t i = 16; i < size; ++i) r.u8();
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error(path + ": data chunk before fmt");
      if (format != 1) throw std::runtime_error(path + ": not PCM (format tag != 1)");
      if (channels != 1) throw std::runtime_error(path + ": not mono");
      if (bits != 16) throw std::runtime_error(path + ": not 16-bit");
      if (rate != kSampleRate)
        throw std::runtime_error(path + ": sample rate " + std::to_string(rate) +
                                 " Hz unsupported, expected 16000 Hz");
      const size_t n = size / 2;
      std::vector<int16_t> raw(n);
      r.raw(raw.data(), size);
      track.samples.resize(n);
      for (size_t i = 0; i < n; ++i) track.samples[i] = raw[i] / 32768.0;
      track.sample_rate = kSampleRate;
      return track;
    } else {
      for (uint32_t i = 0; i < size; ++i) r.u8();
    }
  }
  throw std::runtime_error(path + ": no data chunk");
}

void write_wav(const std::string& path, const AudioTrack& track) {
  if (track.sample_rate != kSampleRate)
    throw std::invalid_argument("write_wav expects 16 kHz");
  io::BinaryWriter w(path);
  const uint32_t data_bytes = static_cast<uint32_t>(track.samples.size() * 2);
  io::write_magic(w, "RIFF");
  w.u32(36 + data_bytes);
  io::write_magic(w, "WAVE");
  io::write_magic(w, "fmt ");
  w.u32(16);
  uint16_t v16 = 1; w.raw(&v16, 2);   // PCM
  v16 = 1; w.raw(&v16, 2);            // mono
  w.u32(kSampleRate);
  w.u32(kSampleRate * 2);
  v16 = 2; w.raw(&v16, 2);
  v16 = 16; w.raw(&v16, 2);
  io::write_magic(w, "data");
  w.u32(data_bytes);
  for (double s : track.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::lrint(c * 32767.0));
    w.raw(&q, 2);
  }
  w.close();
}

void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft size not a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::vector<double> hamming_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (n - 1));
  return w;
}

std::vector<Frame> frame_signal(const AudioTrack& track, int window_samples,
                                int hop_samples) {
  if (track.sample_rate <= 0) throw std::invalid_argument("bad sample rate");
  const size_t len = track.samples.size();
  if (len < static_cast<size_t>(window_samples))
    throw std::runtime_error("track shorter than one analysis window");
  const auto win = hamming_window(window_samples);
  const size_t n_frames = 1 + (len - window_samples) / hop_samples;
  std::vector<Frame> frames(n_frames);
  for (size_t k = 0; k < n_frames; ++k) {
    frames[k].timestamp = static_cast<double>(k * hop_samples) / track.sample_rate;
    frames[k].samples.resize(window_samples);
    const double* src = track.samples.data() + k * hop_samples;
    for (int i = 0; i < window_samples; ++i) frames[k].samples[i] = src[i] * win[i];
  }
  return frames;
}

std::vector<double> mfcc(const Frame& frame, const MfccConfig& cfg) {
  const int n = cfg.fft_size;
  if (n < static_cast<int>(frame.samples.size()))
    throw std::invalid_argument("fft size smaller than frame");
  std::vector<std::complex<double>> buf(n);
  for (size_t i = 0; i < frame.samples.size(); ++i) buf[i] = frame.samples[i];
  fft(buf);
  const int n_bins = n / 2 + 1;
  std::vector<double> power(n_bins);
  for (int i = 0; i < n_bins; ++i) power[i] = std::norm(buf[i]);

  // Triangular mel filterbank, HTK mel scale.
  const double mel_lo = hz_to_mel(cfg.f_lo);
  const double mel_hi = hz_to_mel(cfg.f_hi);
  std::vector<double> centers(cfg.n_filters + 2);
  for (int i = 0; i < cfg.n_filters + 2; ++i)
    centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_filters + 1));
  std::vector<double> log_e(cfg.n_filters);
  const double bin_hz = static_cast<double>(kSampleRate) / n;
  for (int f = 0; f < cfg.n_filters; ++f) {
    const double lo = centers[f], mid = centers[f + 1], hi = centers[f + 2];
    double e = 0.0;
    for (int b = 0; b < n_bins; ++b) {
      const double fz = b * bin_hz;
      double w = 0.0;
      if (fz > lo && fz < mid)
        w = (fz - lo) / (mid - lo);
      else if (fz >= mid && fz < hi)
        w = (hi - fz) / (hi - mid);
      e += w * power[b];
    }
    log_e[f] = std::log(std::max(e, cfg.energy_floor));
  }

  // Orthonormal DCT-II.
  std::vector<double> out(kNumMfcc);
  const double nf = cfg.n_filters;
  for (int k = 0; k < kNumMfcc; ++k) {
    double s = 0.0;
    for (int f = 0; f < cfg.n_filters; ++f)
      s += log_e[f] * std::cos(kPi * k * (f + 0.5) / nf);
    out[k] = s * (k == 0 ? std::sqrt(1.0 / nf) : std::sqrt(2.0 / nf));
  }
  return out;
}

ProsodyPoint prosody_point(const Frame& frame) {
  ProsodyPoint p;
  const auto& x = frame.samples;
  const size_t n = x.size();
  double energy = 0.0;
  for (double v : x) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(n));
  p.intensity = std::log(std::max(rms, kRmsFloor));

  const double r0 = energy;
  if (r0 < 1e-12) return p;  // silence: pitch 0, confidence 0

  const int lag_lo = static_cast<int>(std::ceil(kSampleRate / kPitchHiHz));   // 40
  const int lag_hi = static_cast<int>(std::floor(kSampleRate / kPitchLoHz));  // 266
  double best = 0.0;
  int best_lag = 0;
  for (int lag = lag_lo; lag <= lag_hi && lag < static_cast<int>(n); ++lag) {
    double r = 0.0;
    for (size_t i = 0; i + lag < n; ++i) r += x[i] * x[i + lag];
    if (r > best) {
      best = r;
      best_lag = lag;
    }
  }
  const double conf = std::clamp(best / r0, 0.0, 1.0);
  p.confidence = conf;
  if (best_lag > 0 && conf >= kVoicingThreshold)
    p.pitch = static_cast<double>(kSampleRate) / best_lag;
  return p;
}

std::vector<double> prosody(const Frame& frame,
                            const std::optional<ProsodyPoint>& prev,
                            ProsodyPoint* out_point) {
  const ProsodyPoint p = prosody_point(frame);
  if (out_point) *out_point = p;
  const double hop_s = static_cast<double>(kHopSamples) / kSampleRate;
  std::vector<double> out(kNumProsody, 0.0);
  out[0] = p.intensity;
  out[1] = p.pitch;
  out[2] = p.confidence;
  if (prev) {
    out[3] = (p.intensity - prev->intensity) / hop_s;
    out[4] = (p.pitch - prev->pitch) / hop_s;
    out[5] = (p.confidence - prev->confidence) / hop_s;
  }
  return out;
}

FrameFeatures frame_features(const Frame& frame,
                             const std::optional<ProsodyPoint>& prev,
                             ProsodyPoint* out_point, const MfccConfig& cfg) {
  FrameFeatures ff;
  ff.timestamp = frame.timestamp;
  ff.values = mfcc(frame, cfg);
  const auto pro = prosody(frame, prev, out_point);
  ff.values.insert(ff.values.end(), pro.begin(), pro.end());
  return ff;
}

namespace {
double quantile_sorted(const std::vector<double>& s, double p) {
  const size_t n = s.size();
  const double h = (n - 1) * p;
  const size_t lo = static_cast<size_t>(h);
  if (lo + 1 >= n) return s.back();
  return s[lo] + (h - lo) * (s[lo + 1] - s[lo]);
}
}  // namespace

void functionals(const std::vector<double>& values, double* out) {
  const size_t n = values.size();
  if (n < 2) throw std::invalid_argument("functionals need at least 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n; m3 /= n; m4 /= n;
  // Constant windows leave rounding residue in m2; treat variance below
  // double-precision noise (relative to the value scale) as exactly zero.
  const double scale = m2 + mean * mean;
  const bool degenerate = m2 <= 1e-28 * scale;
  const double stddev = degenerate ? 0.0 : std::sqrt(m2);
  const double skew = degenerate ? 0.0 : m3 / (m2 * stddev);
  const double kurt = degenerate ? 0.0 : m4 / (m2 * m2) - 3.0;
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  const double mn = sorted.front(), mx = sorted.back();
  const double q1 = quantile_sorted(sorted, 0.25);
  const double q3 = quantile_sorted(sorted, 0.75);
  const double med = quantile_sorted(sorted, 0.5);
  out[0] = mean;
  out[1] = stddev;
  out[2] = skew;
  out[3] = kurt;
  out[4] = mx - mn;
  out[5] = mn;
  out[6] = mx;
  out[7] = q1;
  out[8] = q3;
  out[9] = med;
  out[10] = q3 - q1;
}

StateVector summarize(const std::vector<FrameFeatures>& window, double timestamp) {
  if (window.size() < 2)
    throw std::runtime_error("insufficient data: summarization window needs >= 2 frames");
  StateVector s;
  s.timestamp = timestamp;
  s.values.resize(kStateDim);
  std::vector<double> col(window.size());
  for (int d = 0; d < kFrameDim; ++d) {
    for (size_t i = 0; i < window.size(); ++i) col[i] = window[i].values[d];
    functionals(col, s.values.data() + d * kNumFunctionals);
  }
  return s;
}

std::vector<StateVector> extract_states(const AudioTrack& track,
                                        const MfccConfig& cfg) {
  const size_t len = track.samples.size();
  if (len < static_cast<size_t>(kSampleRate + kWindowSamples))  // 1.04 s
    throw std::runtime_error("insufficient data: track must be at least 1.04 s");
  const auto frames = frame_signal(track);
  std::vector<FrameFeatures> feats(frames.size());
  std::optional<ProsodyPoint> prev;
  for (size_t k = 0; k < frames.size(); ++k) {
    ProsodyPoint pt;
    feats[k] = frame_features(frames[k], prev, &pt, cfg);
    prev = pt;
  }
  // State i at t = 1.0 + 0.025 i summarizes frames [i, i+40) clipped to end.
  const long max_i = (static_cast<long>(len) - kSampleRate) / kHopSamples;
  if (max_i < 0) throw std::runtime_error("insufficient data");
  std::vector<StateVector> states;
  states.reserve(static_cast<size_t>(max_i) + 1);
  for (long i = 0; i <= max_i; ++i) {
    const size_t lo = static_cast<size_t>(i);
    const size_t hi = std::min(lo + kFramesPerSecond, feats.size());
    if (hi - lo < 2) break;
    std::vector<FrameFeatures> window(feats.begin() + lo, feats.begin() + hi);
    states.push_back(summarize(window, 1.0 + 0.025 * static_cast<double>(i)));
  }
  return states;
}

NormalizationStats fit_normalization(const std::vector<StateVector>& states,
                                     const std::string& split_id) {
  if (states.size() < 100)
    throw std::runtime_error("normalization needs at least 100 states");
  NormalizationStats st;
  st.source_split = split_id;
  st.mean.assign(kStateDim, 0.0);
  st.stddev.assign(kStateDim, 0.0);
  const double n = static_cast<double>(states.size());
  for (const auto& s : states)
    for (int d = 0; d < kStateDim; ++d) st.mean[d] += s.values[d];
  for (int d = 0; d < kStateDim; ++d) st.mean[d] /= n;
  for (const auto& s : states)
    for (int d = 0; d < kStateDim; ++d) {
      const double diff = s.values[d] - st.mean[d];
      st.stddev[d] += diff * diff;
    }
  for (int d = 0; d < kStateDim; ++d) {
    st.stddev[d] = std::sqrt(st.stddev[d] / n);
    if (st.stddev[d] < 1e-8) {
      st.stddev[d] = 1e-8;
      ++st.n_clamped;
    }
  }
  return st;
}

StateVector apply_normalization(const StateVector& s, const NormalizationStats& st) {
  StateVector out = s;
  for (int d = 0; d < kStateDim; ++d)
    out.values[d] = (s.values[d] - st.mean[d]) / st.stddev[d];
  out.normalized = true;
  return out;
}

StateVector undo_normalization(const StateVector& s, const NormalizationStats& st) {
  StateVector out = s;
  for (int d = 0; d < kStateDim; ++d)
    out.values[d] = s.values[d] * st.stddev[d] + st.mean[d];
  out.normalized = false;
  return out;
}

void write_stream(const std::string& path, const StreamFile& s) {
  io::BinaryWriter w(path);
  io::write_magic(w, "BCST");
  w.crc_begin();
  w.u32(1);  // version
  w.u32(s.dims);
  w.f64(s.rate_hz);
  w.f64(s.start_time);
  w.u64(s.count());
  w.f32_array(s.data.data(), s.data.size());
  w.crc_end();
  w.close();
}

StreamFile read_stream(const std::string& path) {
  io::BinaryReader r(path);
  io::expect_magic(r, "BCST", path);
  r.crc_begin();
  if (r.u32() != 1) throw std::runtime_error("unsupported stream file version");
  StreamFile s;
  s.dims = r.u32();
  s.rate_hz = r.f64();
  s.start_time = r.f64();
  const uint64_t count = r.u64();
  s.data.resize(count * s.dims);
  r.f32_array(s.data.data(), s.data.size());
  r.crc_check(path);
  return s;
}

void write_stream_csv(const std::string& path, const StreamFile& s) {
  std::vector<std::string> header{"timestamp"};
  for (uint32_t d = 0; d < s.dims; ++d) header.push_back("v" + std::to_string(d));
  io::CsvWriter csv(path, header);
  for (size_t i = 0; i < s.count(); ++i) {
    std::vector<std::string> row;
    row.push_back(std::to_string(s.start_time + i / s.rate_hz));
    for (uint32_t d = 0; d < s.dims; ++d)
      row.push_back(std::to_string(s.data[i * s.dims + d]));
    csv.row(row);
  }
}

StreamFile states_to_stream(const std::vector<StateVector>& states) {
  StreamFile s;
  s.dims = kStateDim;
  s.rate_hz = kStateRateHz;
  s.start_time = states.empty() ? 0.0 : states.front().timestamp;
  s.data.reserve(states.size() * kStateDim);
  for (const auto& sv : states)
    for (double v : sv.values) s.data.push_back(static_cast<float>(v));
  return s;
}

void save_normalization(const std::string& path, const NormalizationStats& st) {
  io::BinaryWriter w(path);
  io::write_magic(w, "BCNZ");
  w.crc_begin();
  w.u32(1);
  w.str(st.source_split);
  w.u32(static_cast<uint32_t>(st.n_clamped));
  w.u32(kStateDim);
  w.f64_array(st.mean.data(), st.mean.size());
  w.f64_array(st.stddev.data(), st.stddev.size());
  w.crc_end();
  w.close();
}

NormalizationStats load_normalization(const std::string& path) {
  io::BinaryReader r(path);
  io::expect_magic(r, "BCNZ", path);
  r.crc_begin();
  if (r.u32() != 1) throw std::runtime_error("unsupported normalization file version");
  NormalizationStats st;
  st.source_split = r.str();
  st.n_clamped = static_cast<int>(r.u32());
  const uint32_t dim = r.u32();
  if (dim != kStateDim) throw std::runtime_error("normalization dimension mismatch");
  st.mean.resize(dim);
  st.stddev.resize(dim);
  r.f64_array(st.mean.data(), dim);
  r.f64_array(st.stddev.data(), dim);
  r.crc_check(path);
  return st;
}

}  // namespace bcrl::dsp

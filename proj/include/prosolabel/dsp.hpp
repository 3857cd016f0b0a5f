#pragma once

// Native acoustic baselines: log-mel spectrogram and a DIO-style F0 tracker.
// Both emit single-layer frame-axis FeatureTensors on the same frame grid:
// frame t is centred on sample t*hop + hop/2 and T = ceil(N / hop).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/wav.hpp"

namespace prosolabel {

struct FrameGrid {
  std::size_t hop = 320;
  std::size_t window = 640;

  // 20 ms hop, 40 ms window.
  static FrameGrid canonical(int sample_rate) {
    return {static_cast<std::size_t>(std::lround(0.020 * sample_rate)),
            static_cast<std::size_t>(std::lround(0.040 * sample_rate))};
  }

  std::size_t frame_count(std::size_t samples) const { return (samples + hop - 1) / hop; }
  std::size_t center(std::size_t frame) const { return frame * hop + hop / 2; }

  void validate() const {
    if (hop == 0 || hop > window) fail(Errc::InvalidConfig, "frame grid needs 0 < hop <= window");
  }
};

inline constexpr double kLogFloor = 1e-10;

namespace detail {

inline void check_waveform(const Waveform& w) {
  if (w.sample_rate <= 0) fail(Errc::InvalidConfig, "sample rate must be positive");
  if (w.samples.empty()) fail(Errc::EmptyWaveform, "waveform has no samples");
  for (double s : w.samples) {
    if (!std::isfinite(s)) fail(Errc::NonFiniteValue, "waveform sample");
  }
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

// Real-input FFT of fixed size with owned buffers. FFTW_ESTIMATE keeps plan
// selection deterministic.
class RealFft {
 public:
  explicit RealFft(std::size_t size)
      : size_(size),
        in_(fftw_alloc_real(size)),
        out_(fftw_alloc_complex(size / 2 + 1)),
        plan_(fftw_plan_dft_r2c_1d(static_cast<int>(size), in_.get(), out_.get(), FFTW_ESTIMATE),
              &fftw_destroy_plan) {}

  std::size_t size() const { return size_; }
  double* input() { return in_.get(); }
  const fftw_complex* output() const { return out_.get(); }
  void execute() { fftw_execute(plan_.get()); }

 private:
  std::size_t size_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  std::unique_ptr<fftw_plan_s, decltype(&fftw_destroy_plan)> plan_;
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mel spectrogram

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// n_mels + 2 band edges equally spaced on the mel scale; filter m spans
// edges[m]..edges[m+2] and peaks at edges[m+1].
inline std::vector<double> mel_band_edges(int n_mels, double fmin, double fmax) {
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (n_mels + 1));
  }
  return edges;
}

struct MelOptions {
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 = Nyquist
};

// Triangular filterbank over FFT bins, n_mels x (n_fft/2+1).
inline Matrix mel_filterbank(int sample_rate, std::size_t n_fft, int n_mels, double fmin,
                             double fmax) {
  const auto edges = mel_band_edges(n_mels, fmin, fmax);
  const std::size_t bins = n_fft / 2 + 1;
  Matrix bank = Matrix::Zero(n_mels, static_cast<Eigen::Index>(bins));
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      bank(m, static_cast<Eigen::Index>(k)) = w;
    }
  }
  return bank;
}

// 1 x T x n_mels natural-log mel power, floored at kLogFloor.
inline FeatureTensor melspectrogram(const Waveform& w, const FrameGrid& grid, int n_mels,
                                    double fmin, double fmax) {
  detail::check_waveform(w);
  grid.validate();
  if (n_mels < 1 || fmin < 0.0 || fmin >= fmax || fmax > w.sample_rate / 2.0) {
    fail(Errc::InvalidBand, "mel band needs n_mels >= 1 and 0 <= fmin < fmax <= sr/2");
  }
  const std::size_t frames = grid.frame_count(w.samples.size());
  const std::size_t n_fft = detail::next_pow2(grid.window);
  const Matrix bank = mel_filterbank(w.sample_rate, n_fft, n_mels, fmin, fmax);

  std::vector<double> window(grid.window);
  for (std::size_t i = 0; i < grid.window; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(grid.window));
  }

  detail::RealFft fft(n_fft);
  Vector power(static_cast<Eigen::Index>(n_fft / 2 + 1));
  FeatureTensor out(1, frames, static_cast<std::size_t>(n_mels), AxisKind::Frame);
  const auto n = static_cast<long long>(w.samples.size());
  for (std::size_t t = 0; t < frames; ++t) {
    const long long start =
        static_cast<long long>(grid.center(t)) - static_cast<long long>(grid.window / 2);
    double* buf = fft.input();
    std::fill(buf, buf + n_fft, 0.0);
    for (std::size_t i = 0; i < grid.window; ++i) {
      const long long s = start + static_cast<long long>(i);
      if (s >= 0 && s < n) buf[i] = w.samples[static_cast<std::size_t>(s)] * window[i];
    }
    fft.execute();
    for (Eigen::Index k = 0; k < power.size(); ++k) {
      const auto& c = fft.output()[k];
      power(k) = c[0] * c[0] + c[1] * c[1];
    }
    const Vector mel = bank * power;
    for (int m = 0; m < n_mels; ++m) out.at(0, t, static_cast<std::size_t>(m)) = std::log(mel(m) + kLogFloor);
  }
  return out;
}

inline FeatureTensor melspectrogram(const Waveform& w, const FrameGrid& grid,
                                    const MelOptions& opt = {}) {
  const double fmax = opt.fmax > 0.0 ? opt.fmax : w.sample_rate / 2.0;
  return melspectrogram(w, grid, opt.n_mels, opt.fmin, fmax);
}

// ---------------------------------------------------------------------------
// F0 estimation
//
// DIO scheme: the signal is low-passed at a ladder of cutoffs (two per
// octave); in each band, intervals between negative-going and positive-going
// zero crossings, peaks and dips give four instantaneous-frequency tracks.
// Their mean is the band's candidate, their relative spread its score. The
// best-scoring candidate per frame is kept, implausible jumps and short voiced
// runs are removed, and each surviving value is refined by a normalized
// autocorrelation search around the candidate period.

struct F0Options {
  double f0_floor = 70.0;
  double f0_ceil = 400.0;
  double channels_in_octave = 2.0;
  double max_spread = 0.1;        // relative std of the four tracks for a voiced frame
  double allowed_jump = 0.2;      // relative frame-to-frame change kept as continuous
  std::size_t min_voiced_run = 3; // frames
  double min_correlation = 0.5;   // refinement accepted above this normalized peak
};

namespace detail {

inline void nuttall_window(std::vector<double>& w) {
  const auto n = static_cast<double>(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = (static_cast<double>(i) + 1.0 - (n + 1.0) / 2.0) / (n + 1.0);
    w[i] = 0.355768 + 0.487396 * std::cos(2.0 * std::numbers::pi * x) +
           0.144232 * std::cos(4.0 * std::numbers::pi * x) +
           0.012604 * std::cos(6.0 * std::numbers::pi * x);
  }
}

// Zero-phase FIR low-pass with a Nuttall kernel of 4 * half_length taps.
inline std::vector<double> nuttall_lowpass(const std::vector<double>& x, std::size_t half_length) {
  std::vector<double> kernel(half_length * 4);
  nuttall_window(kernel);
  const std::size_t n_fft = next_pow2(x.size() + kernel.size());
  RealFft fx(n_fft), fk(n_fft);
  std::fill(fx.input(), fx.input() + n_fft, 0.0);
  std::fill(fk.input(), fk.input() + n_fft, 0.0);
  std::copy(x.begin(), x.end(), fx.input());
  std::copy(kernel.begin(), kernel.end(), fk.input());
  fx.execute();
  fk.execute();

  const std::size_t bins = n_fft / 2 + 1;
  std::unique_ptr<fftw_complex, FftwFree> spec(fftw_alloc_complex(bins));
  std::unique_ptr<double, FftwFree> time(fftw_alloc_real(n_fft));
  for (std::size_t k = 0; k < bins; ++k) {
    const std::complex<double> a(fx.output()[k][0], fx.output()[k][1]);
    const std::complex<double> b(fk.output()[k][0], fk.output()[k][1]);
    const auto c = a * b;
    spec.get()[k][0] = c.real();
    spec.get()[k][1] = c.imag();
  }
  std::unique_ptr<fftw_plan_s, decltype(&fftw_destroy_plan)> inverse(
      fftw_plan_dft_c2r_1d(static_cast<int>(n_fft), spec.get(), time.get(), FFTW_ESTIMATE),
      &fftw_destroy_plan);
  fftw_execute(inverse.get());

  // Kernel centre sits at 2*half_length - 0.5; shift by 2*half_length.
  std::vector<double> y(x.size());
  const std::size_t delay = half_length * 2;
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = time.get()[i + delay] / static_cast<double>(n_fft);
  return y;
}

// Frequency estimates from the spacing of successive negative-going zero
// crossings, located at the midpoint between crossings (seconds).
struct IntervalTrack {
  std::vector<double> times;
  std::vector<double> freqs;

  // Linear interpolation inside the observed range, NaN outside.
  double at(double t) const {
    if (times.size() < 2 || t < times.front() || t > times.back()) return std::nan("");
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.end()) return freqs.back();
    const std::size_t hi = static_cast<std::size_t>(it - times.begin());
    const std::size_t lo = hi - 1;
    const double a = (t - times[lo]) / (times[hi] - times[lo]);
    return freqs[lo] + a * (freqs[hi] - freqs[lo]);
  }
};

inline IntervalTrack negative_crossings(const std::vector<double>& x, double fs) {
  std::vector<double> edges;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    if (x[i] > 0.0 && x[i + 1] <= 0.0) {
      edges.push_back(static_cast<double>(i) + x[i] / (x[i] - x[i + 1]));
    }
  }
  IntervalTrack track;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    track.freqs.push_back(fs / (edges[i + 1] - edges[i]));
    track.times.push_back((edges[i] + edges[i + 1]) / 2.0 / fs);
  }
  return track;
}

struct BandCandidates {
  std::vector<double> f0;      // 0 = no candidate
  std::vector<double> spread;  // relative std; +inf when no candidate
};

inline BandCandidates band_candidates(const std::vector<double>& x, double fs,
                                      const FrameGrid& grid, std::size_t frames, double boundary,
                                      const F0Options& opt) {
  const auto half = static_cast<std::size_t>(std::max(1L, std::lround(fs / boundary / 2.0)));
  const std::vector<double> y = nuttall_lowpass(x, half);
  std::vector<double> neg(y.size()), diff(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) neg[i] = -y[i];
  for (std::size_t i = 0; i + 1 < y.size(); ++i) diff[i] = y[i + 1] - y[i];
  if (!y.empty()) diff.back() = diff.size() > 1 ? diff[diff.size() - 2] : 0.0;
  std::vector<double> neg_diff(diff.size());
  for (std::size_t i = 0; i < diff.size(); ++i) neg_diff[i] = -diff[i];

  const IntervalTrack tracks[4] = {negative_crossings(y, fs), negative_crossings(neg, fs),
                                   negative_crossings(diff, fs), negative_crossings(neg_diff, fs)};

  BandCandidates out{std::vector<double>(frames, 0.0),
                     std::vector<double>(frames, std::numeric_limits<double>::infinity())};
  for (std::size_t t = 0; t < frames; ++t) {
    // diff is offset half a sample from y; negligible at these rates.
    const double time = static_cast<double>(grid.center(t)) / fs;
    double values[4];
    bool ok = true;
    for (int k = 0; k < 4; ++k) {
      values[k] = tracks[k].at(time);
      ok = ok && std::isfinite(values[k]);
    }
    if (!ok) continue;
    const double mean = (values[0] + values[1] + values[2] + values[3]) / 4.0;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double spread = std::sqrt(var / 3.0) / mean;
    if (mean > boundary || mean < boundary / 2.0 || mean > opt.f0_ceil || mean < opt.f0_floor) {
      continue;
    }
    out.f0[t] = mean;
    out.spread[t] = spread;
  }
  return out;
}

// Normalized autocorrelation peak near `period` (samples) around `center`.
inline double refine_period(const std::vector<double>& x, std::size_t center, double period,
                            double min_correlation) {
  const auto lo = static_cast<long long>(std::floor(period * 0.9));
  const auto hi = static_cast<long long>(std::ceil(period * 1.1));
  const auto span = static_cast<long long>(std::ceil(2.0 * period));
  const long long begin = static_cast<long long>(center) - span / 2 - hi / 2;
  const long long n = static_cast<long long>(x.size());
  if (begin < 0 || begin + span + hi + 1 >= n || lo < 2) return period;

  auto corr = [&](long long lag) {
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (long long i = 0; i < span; ++i) {
      const double a = x[static_cast<std::size_t>(begin + i)];
      const double b = x[static_cast<std::size_t>(begin + i + lag)];
      xy += a * b;
      xx += a * a;
      yy += b * b;
    }
    return xx > 0.0 && yy > 0.0 ? xy / std::sqrt(xx * yy) : 0.0;
  };

  std::vector<double> r(static_cast<std::size_t>(hi - lo + 3));
  for (long long lag = lo - 1; lag <= hi + 1; ++lag) r[static_cast<std::size_t>(lag - lo + 1)] = corr(lag);
  std::size_t best = 1;
  for (std::size_t i = 1; i + 1 < r.size(); ++i) {
    if (r[i] > r[best]) best = i;
  }
  if (r[best] < min_correlation || r[best] < r[best - 1] || r[best] < r[best + 1]) return period;
  const double denom = r[best - 1] - 2.0 * r[best] + r[best + 1];
  const double offset = denom < 0.0 ? 0.5 * (r[best - 1] - r[best + 1]) / denom : 0.0;
  return static_cast<double>(lo - 1) + static_cast<double>(best) + offset;
}

}  // namespace detail

// Raw F0 track in Hz (0 = unvoiced), one value per frame.
inline std::vector<double> f0_track(const Waveform& w, const FrameGrid& grid,
                                    const F0Options& opt = {}) {
  detail::check_waveform(w);
  grid.validate();
  const double fs = w.sample_rate;
  if (opt.f0_floor <= 0.0 || opt.f0_floor >= opt.f0_ceil || opt.f0_ceil > fs / 2.0) {
    fail(Errc::InvalidBand, "F0 band needs 0 < f0_floor < f0_ceil <= sr/2");
  }
  const std::size_t frames = grid.frame_count(w.samples.size());

  std::vector<double> x = w.samples;
  double mean = 0.0;
  for (double s : x) mean += s;
  mean /= static_cast<double>(x.size());
  for (double& s : x) s -= mean;

  const int bands =
      1 + static_cast<int>(std::log2(opt.f0_ceil / opt.f0_floor) * opt.channels_in_octave);
  std::vector<double> best(frames, 0.0);
  std::vector<double> best_spread(frames, std::numeric_limits<double>::infinity());
  for (int b = 0; b < bands; ++b) {
    const double boundary = opt.f0_floor * std::pow(2.0, (b + 1) / opt.channels_in_octave);
    const auto cand = detail::band_candidates(x, fs, grid, frames, boundary, opt);
    for (std::size_t t = 0; t < frames; ++t) {
      if (cand.spread[t] < best_spread[t]) {
        best_spread[t] = cand.spread[t];
        best[t] = cand.f0[t];
      }
    }
  }
  for (std::size_t t = 0; t < frames; ++t) {
    if (best_spread[t] > opt.max_spread) best[t] = 0.0;
  }

  // Drop values that jump away from both neighbours.
  std::vector<double> smooth = best;
  for (std::size_t t = 0; t < frames; ++t) {
    if (best[t] == 0.0) continue;
    auto close = [&](std::size_t u) {
      return best[u] > 0.0 && std::abs(best[u] - best[t]) / best[t] < opt.allowed_jump;
    };
    const bool prev = t > 0 && close(t - 1);
    const bool next = t + 1 < frames && close(t + 1);
    if (!prev && !next) smooth[t] = 0.0;
  }
  // Drop short voiced runs.
  for (std::size_t t = 0; t < frames;) {
    if (smooth[t] == 0.0) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end < frames && smooth[end] > 0.0) ++end;
    if (end - t < opt.min_voiced_run) std::fill(smooth.begin() + static_cast<long>(t), smooth.begin() + static_cast<long>(end), 0.0);
    t = end;
  }
  for (std::size_t t = 0; t < frames; ++t) {
    if (smooth[t] == 0.0) continue;
    const double period =
        detail::refine_period(x, grid.center(t), fs / smooth[t], opt.min_correlation);
    const double refined = fs / period;
    if (std::abs(refined - smooth[t]) / smooth[t] < 0.1) smooth[t] = refined;
  }
  return smooth;
}

// 1 x T x 2: channel 0 = log F0 (0 when unvoiced), channel 1 = voiced flag.
inline FeatureTensor estimate_f0(const Waveform& w, const FrameGrid& grid, double f0_floor,
                                 double f0_ceil) {
  F0Options opt;
  opt.f0_floor = f0_floor;
  opt.f0_ceil = f0_ceil;
  const auto track = f0_track(w, grid, opt);
  FeatureTensor out(1, track.size(), 2, AxisKind::Frame);
  for (std::size_t t = 0; t < track.size(); ++t) {
    if (track[t] > 0.0) {
      out.at(0, t, 0) = std::log(track[t]);
      out.at(0, t, 1) = 1.0;
    }
  }
  return out;
}

}  // namespace prosolabel

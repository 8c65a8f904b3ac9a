// Copyright 2026 The PSE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pse/error.hpp"

namespace pse {

int DspConfig::win_length() const {
  return static_cast<int>(std::lround(win_ms * sample_rate / 1000.0));
}

int DspConfig::hop() const {
  return static_cast<int>(std::lround(win_length() * (1.0 - overlap)));
}

int DspConfig::fft_length() const {
  return fft_size > 0 ? fft_size : win_length();
}

int DspConfig::df_bins() const {
  const double limit = f_df * fft_length() / sample_rate;
  int count = static_cast<int>(std::ceil(limit - 1e-9));
  return std::clamp(count, 0, bins());
}

double DspConfig::frames_per_second() const {
  return static_cast<double>(sample_rate) / hop();
}

double DspConfig::norm_alpha() const {
  return std::exp(-(static_cast<double>(hop()) / sample_rate) / norm_tau_s);
}

void DspConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  const double exact_win = win_ms * sample_rate / 1000.0;
  const int win = win_length();
  if (win < 2 || std::abs(exact_win - win) > 1e-6) {
    throw ConfigError("window of " + std::to_string(win_ms) +
                      " ms is not a whole number of samples >= 2");
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) {
    throw ConfigError("overlap must lie in [0, 1)");
  }
  const double exact_hop = win * (1.0 - overlap);
  const int h = hop();
  if (h < 1 || std::abs(exact_hop - h) > 1e-6 || win % h != 0) {
    throw ConfigError("hop must be a whole number of samples dividing the "
                      "window length");
  }
  if (fft_length() < win || fft_length() % 2 != 0) {
    throw ConfigError("fft_size must be even and at least the window length");
  }
  if (!(f_df > 0.0) || f_df > sample_rate / 2.0) {
    throw ConfigError("f_df must lie in (0, sample_rate / 2]");
  }
  if (erb_bands < 2) throw ConfigError("erb_bands must be >= 2");
  if (df_order < 1) throw ConfigError("df_order must be >= 1");
  if (lookahead_frames < 0) throw ConfigError("lookahead_frames must be >= 0");
  if (!(norm_tau_s > 0.0)) throw ConfigError("norm_tau_s must be positive");
  if (df_bins() < 1) throw ConfigError("f_df selects no STFT bins");
}

bool operator==(const DspConfig& a, const DspConfig& b) {
  return a.sample_rate == b.sample_rate && a.win_ms == b.win_ms &&
         a.overlap == b.overlap && a.fft_length() == b.fft_length() &&
         a.lookahead_frames == b.lookahead_frames &&
         a.erb_bands == b.erb_bands && a.f_df == b.f_df &&
         a.df_order == b.df_order && a.norm_tau_s == b.norm_tau_s;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

namespace {

// 1 / sum_j w^2(p + j*hop) for p in [0, hop).
std::vector<double> wola_inverse_norm(const std::vector<double>& w, int hop) {
  const int win = static_cast<int>(w.size());
  std::vector<double> inv(hop);
  for (int p = 0; p < hop; ++p) {
    double acc = 0.0;
    for (int q = p; q < win; q += hop) acc += w[q] * w[q];
    inv[p] = 1.0 / acc;
  }
  return inv;
}

template <typename T>
std::vector<T> cast_vector(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

void check_rate(const AudioBuffer& audio, const DspConfig& cfg) {
  if (audio.sample_rate != cfg.sample_rate) {
    throw ConfigError("audio sample rate " +
                      std::to_string(audio.sample_rate) +
                      " Hz does not match the configured " +
                      std::to_string(cfg.sample_rate) + " Hz");
  }
}

}  // namespace

template <typename T>
BasicSpectrogram<T> stft(const AudioBuffer& audio, const DspConfig& cfg) {
  cfg.validate();
  check_rate(audio, cfg);
  if (audio.samples.empty()) throw DomainError("stft of empty audio");
  const int win = cfg.win_length();
  const int hop = cfg.hop();
  const int nfft = cfg.fft_length();
  const std::size_t len = audio.samples.size();
  const std::size_t frames = (len + hop - 1) / hop;

  const auto window = hann_window(win);
  RealFft<T> fft(nfft);
  std::vector<T> buf(nfft, T(0));
  BasicSpectrogram<T> spec(frames, cfg.bins());
  for (std::size_t k = 0; k < frames; ++k) {
    const long start = static_cast<long>((k + 1) * hop) - win;
    for (int p = 0; p < win; ++p) {
      const long n = start + p;
      const double x = (n >= 0 && n < static_cast<long>(len))
                           ? audio.samples[static_cast<std::size_t>(n)]
                           : 0.0;
      buf[p] = static_cast<T>(x * window[p]);
    }
    fft.forward(buf, spec.row(k));
  }
  return spec;
}

template <typename T>
AudioBuffer istft(const BasicSpectrogram<T>& spec, const DspConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(spec.cols()) != cfg.bins()) {
    throw DomainError("spectrogram has " + std::to_string(spec.cols()) +
                      " bins, configuration expects " +
                      std::to_string(cfg.bins()));
  }
  const int win = cfg.win_length();
  const int hop = cfg.hop();
  const int nfft = cfg.fft_length();
  const std::size_t frames = spec.rows();
  const auto window = hann_window(win);
  const auto inv_norm = wola_inverse_norm(window, hop);

  RealFft<T> fft(nfft);
  std::vector<T> frame(nfft);
  // accum[i] holds output sample i - (win - hop).
  std::vector<double> accum(frames * hop + win, 0.0);
  for (std::size_t k = 0; k < frames; ++k) {
    fft.inverse(spec.row(k), frame);
    double* dst = accum.data() + k * hop;
    for (int p = 0; p < win; ++p) dst[p] += window[p] * frame[p];
  }
  AudioBuffer out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(frames * hop);
  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    out.samples[n] = accum[n + win - hop] * inv_norm[n % hop];
  }
  return out;
}

template <typename T>
StreamingStft<T>::StreamingStft(const DspConfig& cfg)
    : win_(cfg.win_length()),
      hop_(cfg.hop()),
      nfft_(cfg.fft_length()),
      window_(cast_vector<T>(hann_window(cfg.win_length()))),
      history_(cfg.win_length(), T(0)),
      scratch_(cfg.fft_length(), T(0)),
      fft_(cfg.fft_length()) {
  cfg.validate();
}

template <typename T>
void StreamingStft<T>::reset() {
  std::fill(history_.begin(), history_.end(), T(0));
}

template <typename T>
void StreamingStft<T>::push(std::span<const T> hop_samples,
                            std::span<std::complex<T>> frame) {
  if (static_cast<int>(hop_samples.size()) != hop_) {
    throw DomainError("streaming STFT expects exactly one hop of samples");
  }
  std::copy(history_.begin() + hop_, history_.end(), history_.begin());
  std::copy(hop_samples.begin(), hop_samples.end(),
            history_.end() - hop_);
  for (int p = 0; p < win_; ++p) {
    scratch_[p] = static_cast<T>(static_cast<double>(history_[p]) *
                                 static_cast<double>(window_[p]));
  }
  fft_.forward(scratch_, frame);
}

template <typename T>
StreamingIstft<T>::StreamingIstft(const DspConfig& cfg)
    : win_(cfg.win_length()),
      hop_(cfg.hop()),
      nfft_(cfg.fft_length()),
      window_(cast_vector<T>(hann_window(cfg.win_length()))),
      inv_norm_(cast_vector<T>(
          wola_inverse_norm(hann_window(cfg.win_length()), cfg.hop()))),
      accum_(cfg.win_length(), T(0)),
      scratch_(cfg.fft_length(), T(0)),
      fft_(cfg.fft_length()) {
  cfg.validate();
}

template <typename T>
void StreamingIstft<T>::reset() {
  std::fill(accum_.begin(), accum_.end(), T(0));
}

template <typename T>
void StreamingIstft<T>::push(std::span<const std::complex<T>> frame,
                             std::span<T> hop_out) {
  fft_.inverse(frame, scratch_);
  for (int p = 0; p < win_; ++p) accum_[p] += window_[p] * scratch_[p];
  for (int p = 0; p < hop_; ++p) hop_out[p] = accum_[p] * inv_norm_[p];
  std::copy(accum_.begin() + hop_, accum_.end(), accum_.begin());
  std::fill(accum_.end() - hop_, accum_.end(), T(0));
}

template class StreamingStft<float>;
template class StreamingStft<double>;
template class StreamingIstft<float>;
template class StreamingIstft<double>;

template BasicSpectrogram<float> stft<float>(const AudioBuffer&,
                                             const DspConfig&);
template BasicSpectrogram<double> stft<double>(const AudioBuffer&,
                                               const DspConfig&);
template AudioBuffer istft<float>(const BasicSpectrogram<float>&,
                                  const DspConfig&);
template AudioBuffer istft<double>(const BasicSpectrogram<double>&,
                                   const DspConfig&);

double erb_rate(double hz) { return 9.265 * std::log1p(hz / (24.7 * 9.16)); }

double erb_rate_inverse(double erb) {
  return 24.7 * 9.16 * std::expm1(erb / 9.265);
}

ErbFilterbank build_erb_filterbank(const DspConfig& cfg) {
  cfg.validate();
  const int bins = cfg.bins();
  const int bands = cfg.erb_bands;
  if (2 * bands > bins) {
    throw ConfigError(std::to_string(bands) + " ERB bands of >= 2 bins do "
                      "not fit into " + std::to_string(bins) + " bins");
  }
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_length();
  const double top = erb_rate(cfg.sample_rate / 2.0);

  ErbFilterbank fb;
  fb.edges.assign(bands + 1, 0);
  for (int b = 1; b < bands; ++b) {
    const double hz = erb_rate_inverse(top * b / bands);
    const int target = static_cast<int>(std::lround(hz / bin_hz));
    fb.edges[b] = std::max(target, fb.edges[b - 1] + 2);
  }
  fb.edges[bands] = bins;
  for (int b = bands - 1; b >= 1; --b) {
    fb.edges[b] = std::min(fb.edges[b], fb.edges[b + 1] - 2);
  }
  return fb;
}

template <typename T>
void erb_feature_frame(std::span<const std::complex<T>> frame,
                       const ErbFilterbank& fb, NormState<T>& state,
                       std::span<T> out) {
  const int bands = fb.bands();
  for (int b = 0; b < bands; ++b) {
    T power = T(0);
    for (int f = fb.edges[b]; f < fb.edges[b + 1]; ++f) {
      const T re = frame[f].real();
      const T im = frame[f].imag();
      power += re * re + im * im;
    }
    power /= static_cast<T>(fb.width(b));
    T v = std::log10(power + static_cast<T>(kEps));
    if (state.enabled) {
      T& m = state.values[b];
      m = state.alpha * m + (T(1) - state.alpha) * v;
      v -= m;
    }
    out[b] = v;
  }
}

template <typename T>
ErbFeature<T> erb_features(const BasicSpectrogram<T>& spec,
                           const ErbFilterbank& fb, NormState<T>& state) {
  if (static_cast<int>(spec.cols()) != fb.bins()) {
    throw DomainError("spectrogram bins do not match the ERB filterbank");
  }
  if (state.enabled && static_cast<int>(state.values.size()) != fb.bands()) {
    throw DomainError("ERB normalization state has the wrong size");
  }
  ErbFeature<T> feat;
  feat.normalized = state.enabled;
  feat.values = Matrix<T>(spec.rows(), fb.bands());
  for (std::size_t k = 0; k < spec.rows(); ++k) {
    erb_feature_frame<T>(spec.row(k), fb, state, feat.values.row(k));
  }
  return feat;
}

template <typename T>
void complex_feature_frame(std::span<const std::complex<T>> frame,
                           int df_bins, NormState<T>& state,
                           std::span<std::complex<T>> out) {
  for (int f = 0; f < df_bins; ++f) {
    if (!state.enabled) {
      out[f] = frame[f];
      continue;
    }
    const T re = frame[f].real();
    const T im = frame[f].imag();
    T& s = state.values[f];
    s = state.alpha * s + (T(1) - state.alpha) * (re * re + im * im);
    const T scale = T(1) / std::sqrt(s + static_cast<T>(kEps));
    out[f] = {re * scale, im * scale};
  }
}

template <typename T>
ComplexFeature<T> complex_features(const BasicSpectrogram<T>& spec,
                                   const DspConfig& cfg, NormState<T>& state) {
  const int df = cfg.df_bins();
  if (static_cast<int>(spec.cols()) < df) {
    throw DomainError("spectrogram narrower than the deep-filter band");
  }
  if (state.enabled && static_cast<int>(state.values.size()) != df) {
    throw DomainError("complex normalization state has the wrong size");
  }
  ComplexFeature<T> feat;
  feat.values = BasicSpectrogram<T>(spec.rows(), df);
  for (std::size_t k = 0; k < spec.rows(); ++k) {
    complex_feature_frame<T>(spec.row(k), df, state, feat.values.row(k));
  }
  return feat;
}

template <typename T>
void apply_erb_gains_frame(std::span<const std::complex<T>> frame,
                           std::span<const T> gains, const ErbFilterbank& fb,
                           std::span<std::complex<T>> out) {
  const int bands = fb.bands();
  for (int b = 0; b < bands; ++b) {
    const T g = gains[b];
    for (int f = fb.edges[b]; f < fb.edges[b + 1]; ++f) {
      out[f] = {frame[f].real() * g, frame[f].imag() * g};
    }
  }
}

template <typename T>
BasicSpectrogram<T> apply_erb_gains(const BasicSpectrogram<T>& spec,
                                    const Matrix<T>& gains,
                                    const ErbFilterbank& fb) {
  if (static_cast<int>(spec.cols()) != fb.bins() ||
      gains.rows() != spec.rows() ||
      static_cast<int>(gains.cols()) != fb.bands()) {
    throw DomainError("gain matrix dimensions do not match the spectrogram");
  }
  for (T g : gains.data()) {
    if (!(g >= T(0) && g <= T(1))) {
      throw DomainError("ERB gain outside [0, 1]");
    }
  }
  BasicSpectrogram<T> out(spec.rows(), spec.cols());
  for (std::size_t k = 0; k < spec.rows(); ++k) {
    apply_erb_gains_frame<T>(spec.row(k), gains.row(k), fb, out.row(k));
  }
  return out;
}

template <typename T>
void deep_filter_frame(std::span<const std::span<const std::complex<T>>> inputs,
                       std::span<const std::complex<T>> taps,
                       std::span<const std::complex<T>> center,
                       std::span<std::complex<T>> out) {
  const std::size_t order = inputs.size();
  const std::size_t df_bins = taps.size() / order;
  for (std::size_t f = 0; f < df_bins; ++f) {
    T re = T(0);
    T im = T(0);
    for (std::size_t i = 0; i < order; ++i) {
      if (inputs[i].empty()) continue;
      const std::complex<T> a = taps[i * df_bins + f];
      const std::complex<T> x = inputs[i][f];
      re += a.real() * x.real() - a.imag() * x.imag();
      im += a.real() * x.imag() + a.imag() * x.real();
    }
    out[f] = {re, im};
  }
  std::copy(center.begin() + df_bins, center.end(), out.begin() + df_bins);
}

template <typename T>
BasicSpectrogram<T> deep_filter(const BasicSpectrogram<T>& spec,
                                const DfCoeffs<T>& coeffs,
                                const DspConfig& cfg) {
  if (static_cast<int>(coeffs.order()) != cfg.df_order) {
    throw DomainError("deep filter order " + std::to_string(coeffs.order()) +
                      " does not match configured order " +
                      std::to_string(cfg.df_order));
  }
  if (coeffs.frames() != spec.rows() || coeffs.df_bins() > spec.cols()) {
    throw DomainError("deep filter coefficients do not match the spectrogram");
  }
  const int order = cfg.df_order;
  const long frames = static_cast<long>(spec.rows());
  BasicSpectrogram<T> out(spec.rows(), spec.cols());
  std::vector<std::span<const std::complex<T>>> inputs(order);
  for (long k = 0; k < frames; ++k) {
    for (int i = 0; i < order; ++i) {
      const long src = k + df_source_offset(i, order, cfg.lookahead_frames);
      inputs[i] = (src >= 0 && src < frames)
                      ? spec.row(static_cast<std::size_t>(src))
                      : std::span<const std::complex<T>>{};
    }
    deep_filter_frame<T>(inputs, coeffs.frame(k), spec.row(k), out.row(k));
  }
  return out;
}

#define PSE_INSTANTIATE_DSP(T)                                                \
  template void erb_feature_frame<T>(std::span<const std::complex<T>>,        \
                                     const ErbFilterbank&, NormState<T>&,     \
                                     std::span<T>);                           \
  template ErbFeature<T> erb_features<T>(const BasicSpectrogram<T>&,          \
                                         const ErbFilterbank&, NormState<T>&); \
  template void complex_feature_frame<T>(std::span<const std::complex<T>>,    \
                                         int, NormState<T>&,                  \
                                         std::span<std::complex<T>>);         \
  template ComplexFeature<T> complex_features<T>(                             \
      const BasicSpectrogram<T>&, const DspConfig&, NormState<T>&);           \
  template void apply_erb_gains_frame<T>(std::span<const std::complex<T>>,    \
                                         std::span<const T>,                  \
                                         const ErbFilterbank&,                \
                                         std::span<std::complex<T>>);         \
  template BasicSpectrogram<T> apply_erb_gains<T>(                            \
      const BasicSpectrogram<T>&, const Matrix<T>&, const ErbFilterbank&);    \
  template void deep_filter_frame<T>(                                         \
      std::span<const std::span<const std::complex<T>>>,                      \
      std::span<const std::complex<T>>, std::span<const std::complex<T>>,     \
      std::span<std::complex<T>>);                                            \
  template BasicSpectrogram<T> deep_filter<T>(                                \
      const BasicSpectrogram<T>&, const DfCoeffs<T>&, const DspConfig&);

PSE_INSTANTIATE_DSP(float)
PSE_INSTANTIATE_DSP(double)

#undef PSE_INSTANTIATE_DSP

}  // namespace pse

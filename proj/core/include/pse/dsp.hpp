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

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "pse/audio.hpp"
#include "pse/fft.hpp"

namespace pse {

inline constexpr double kEps = 1e-10;

// Analysis/synthesis parameters shared by every stage of the enhancer.
struct DspConfig {
  int sample_rate = 48000;
  double win_ms = 20.0;
  double overlap = 0.5;
  int fft_size = 0;  // 0 selects the window length
  int lookahead_frames = 2;
  int erb_bands = 32;
  double f_df = 5000.0;
  int df_order = 5;
  double norm_tau_s = 1.0;

  int win_length() const;
  int hop() const;
  int fft_length() const;
  int bins() const { return fft_length() / 2 + 1; }
  // Bins whose center frequency lies strictly below f_df.
  int df_bins() const;
  double frames_per_second() const;
  // Per-frame decay of the feature normalizers, exp(-hop / tau).
  double norm_alpha() const;

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

bool operator==(const DspConfig& a, const DspConfig& b);

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Complex time-frequency matrix indexed [frame][bin].
template <typename T>
using BasicSpectrogram = Matrix<std::complex<T>>;
using ComplexSpectrogram = BasicSpectrogram<double>;

// Periodic Hann window of length n.
std::vector<double> hann_window(int n);

// STFT with frame k covering samples [(k+1)*hop - win, (k+1)*hop); samples
// outside the signal read as zero. frames = ceil(len / hop).
template <typename T>
BasicSpectrogram<T> stft(const AudioBuffer& audio, const DspConfig& cfg);

// Weighted overlap-add inverse of stft. Output length is frames * hop; all
// samples except the final hop block are reconstructed exactly.
template <typename T>
AudioBuffer istft(const BasicSpectrogram<T>& spec, const DspConfig& cfg);

// Frame-by-frame analysis: each push of `hop` samples yields one frame that
// matches the corresponding row of stft().
template <typename T>
class StreamingStft {
 public:
  explicit StreamingStft(const DspConfig& cfg);
  void reset();
  void push(std::span<const T> hop_samples, std::span<std::complex<T>> frame);

 private:
  int win_;
  int hop_;
  int nfft_;
  std::vector<T> window_;
  std::vector<T> history_;
  std::vector<T> scratch_;
  RealFft<T> fft_;
};

// Frame-by-frame synthesis: after frame k, emits the hop block that no later
// frame contributes to. With win = 2 * hop that is samples [(k-1)*hop, k*hop).
template <typename T>
class StreamingIstft {
 public:
  explicit StreamingIstft(const DspConfig& cfg);
  void reset();
  void push(std::span<const std::complex<T>> frame, std::span<T> hop_out);

 private:
  int win_;
  int hop_;
  int nfft_;
  std::vector<T> window_;
  std::vector<T> inv_norm_;
  std::vector<T> accum_;
  std::vector<T> scratch_;
  RealFft<T> fft_;
};

// Contiguous rectangular bands over the STFT bins.
struct ErbFilterbank {
  std::vector<int> edges;  // size bands + 1; edges.front() == 0

  int bands() const { return static_cast<int>(edges.size()) - 1; }
  int bins() const { return edges.empty() ? 0 : edges.back(); }
  int width(int band) const { return edges[band + 1] - edges[band]; }
};

// ERB-rate of a frequency in Hz.
double erb_rate(double hz);
double erb_rate_inverse(double erb);

ErbFilterbank build_erb_filterbank(const DspConfig& cfg);

// Exponential normalizer state, one value per band or bin. A disabled state
// passes features through unnormalized.
template <typename T>
struct NormState {
  std::vector<T> values;
  T alpha = T(0);
  bool enabled = true;

  NormState() = default;
  NormState(std::size_t n, double decay, bool on = true)
      : values(n, T(0)), alpha(static_cast<T>(decay)), enabled(on) {}
  void reset() { std::fill(values.begin(), values.end(), T(0)); }
};

template <typename T>
struct ErbFeature {
  Matrix<T> values;  // [frames][bands]
  bool normalized = true;
};

template <typename T>
struct ComplexFeature {
  BasicSpectrogram<T> values;  // [frames][df_bins]
  int df_bins() const { return static_cast<int>(values.cols()); }
};

// Per-band log10(mean power + eps), minus the running mean when enabled.
template <typename T>
void erb_feature_frame(std::span<const std::complex<T>> frame,
                       const ErbFilterbank& fb, NormState<T>& state,
                       std::span<T> out);

template <typename T>
ErbFeature<T> erb_features(const BasicSpectrogram<T>& spec,
                           const ErbFilterbank& fb, NormState<T>& state);

// Low bins divided by the running RMS of their magnitude.
template <typename T>
void complex_feature_frame(std::span<const std::complex<T>> frame,
                           int df_bins, NormState<T>& state,
                           std::span<std::complex<T>> out);

template <typename T>
ComplexFeature<T> complex_features(const BasicSpectrogram<T>& spec,
                                   const DspConfig& cfg, NormState<T>& state);

template <typename T>
void apply_erb_gains_frame(std::span<const std::complex<T>> frame,
                           std::span<const T> gains, const ErbFilterbank& fb,
                           std::span<std::complex<T>> out);

// Gains must lie in [0, 1]; DomainError otherwise.
template <typename T>
BasicSpectrogram<T> apply_erb_gains(const BasicSpectrogram<T>& spec,
                                    const Matrix<T>& gains,
                                    const ErbFilterbank& fb);

// Complex filter taps laid out [frame][tap][bin].
template <typename T>
class DfCoeffs {
 public:
  DfCoeffs() = default;
  DfCoeffs(std::size_t frames, std::size_t order, std::size_t df_bins)
      : frames_(frames),
        order_(order),
        bins_(df_bins),
        taps_(frames * order * df_bins) {}

  std::size_t frames() const { return frames_; }
  std::size_t order() const { return order_; }
  std::size_t df_bins() const { return bins_; }
  std::complex<T>& operator()(std::size_t k, std::size_t i, std::size_t f) {
    return taps_[(k * order_ + i) * bins_ + f];
  }
  const std::complex<T>& operator()(std::size_t k, std::size_t i,
                                    std::size_t f) const {
    return taps_[(k * order_ + i) * bins_ + f];
  }
  std::span<const std::complex<T>> frame(std::size_t k) const {
    return {taps_.data() + k * order_ * bins_, order_ * bins_};
  }
  std::span<std::complex<T>> frame(std::size_t k) {
    return {taps_.data() + k * order_ * bins_, order_ * bins_};
  }
  std::vector<std::complex<T>>& data() { return taps_; }
  const std::vector<std::complex<T>>& data() const { return taps_; }

 private:
  std::size_t frames_ = 0;
  std::size_t order_ = 0;
  std::size_t bins_ = 0;
  std::vector<std::complex<T>> taps_;
};

// Tap i of output frame k reads input frame k - (N-1) + i + lookahead.
inline int df_source_offset(int tap, int order, int lookahead) {
  return tap - (order - 1) + lookahead;
}

// One output frame. `inputs[i]` is the input frame addressed by tap i (an
// empty span reads as zero); `center` supplies the bins at and above f_df.
template <typename T>
void deep_filter_frame(std::span<const std::span<const std::complex<T>>> inputs,
                       std::span<const std::complex<T>> taps,
                       std::span<const std::complex<T>> center,
                       std::span<std::complex<T>> out);

template <typename T>
BasicSpectrogram<T> deep_filter(const BasicSpectrogram<T>& spec,
                                const DfCoeffs<T>& coeffs,
                                const DspConfig& cfg);

}  // namespace pse

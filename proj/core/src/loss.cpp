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

#include "pse/loss.hpp"

#include <cmath>
#include <complex>
#include <string>

#include "pse/error.hpp"
#include "pse/fft.hpp"

namespace pse {

namespace {

using cd = std::complex<double>;

// Below this magnitude |x|^c has no usable derivative; the bin contributes
// its loss value but no gradient.
constexpr double kGradFloor = 1e-12;

void check_dims(const ComplexSpectrogram& a, const ComplexSpectrogram& b,
                const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DomainError(std::string(what) + ": spectrogram dimensions differ");
  }
  if (a.rows() == 0 || a.cols() == 0) {
    throw DomainError(std::string(what) + ": empty spectrogram");
  }
}

void check_audio(const AudioBuffer& a, const AudioBuffer& b) {
  if (a.samples.size() != b.samples.size()) {
    throw DomainError("multires_loss: signal lengths differ");
  }
  if (a.sample_rate != b.sample_rate) {
    throw DomainError("multires_loss: sample rates differ");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_spec >= 0.0) || !(lambda_mr >= 0.0) || !(lambda_os >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

double spectral_loss(const ComplexSpectrogram& est,
                     const ComplexSpectrogram& clean,
                     ComplexSpectrogram* grad) {
  check_dims(est, clean, "spectral_loss");
  const double c = kCompression;
  const std::size_t n = est.data().size();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad != nullptr) *grad = ComplexSpectrogram(est.rows(), est.cols());
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const cd e = est.data()[i];
    const cd s = clean.data()[i];
    const double a = std::abs(e);
    const double b = std::abs(s);
    const double p = std::pow(a, c);
    const double q = std::pow(b, c);
    const cd u = a > 0.0 ? e * (p / a) : cd(0.0);
    const cd v = b > 0.0 ? s * (q / b) : cd(0.0);
    const cd d = u - v;
    acc += (p - q) * (p - q) + std::norm(d);
    if (grad != nullptr && a > kGradFloor) {
      const double am1 = p / a;          // a^(c-1)
      const double am2 = am1 / a;        // a^(c-2)
      const double am3 = am2 / a;        // a^(c-3)
      const cd g_mag = 2.0 * (p - q) * c * am2 * e;
      const cd g_cplx = 2.0 * (0.5 * (c - 1.0) * am3 * e * e * std::conj(d) +
                               0.5 * (c + 1.0) * am1 * d);
      grad->data()[i] = (g_mag + g_cplx) * inv_n;
    }
  }
  return acc * inv_n;
}

double oversuppression_loss(const ComplexSpectrogram& est,
                            const ComplexSpectrogram& clean,
                            ComplexSpectrogram* grad) {
  check_dims(est, clean, "oversuppression_loss");
  const double c = kCompression;
  const std::size_t n = est.data().size();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad != nullptr) *grad = ComplexSpectrogram(est.rows(), est.cols());
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const cd e = est.data()[i];
    const double a = std::abs(e);
    const double p = std::pow(a, c);
    const double q = std::pow(std::abs(clean.data()[i]), c);
    const double under = std::max(q - p, 0.0);
    acc += under * under;
    if (grad != nullptr && under > 0.0 && a > kGradFloor) {
      grad->data()[i] = -2.0 * under * c * (p / (a * a)) * e * inv_n;
    }
  }
  return acc * inv_n;
}

DspConfig multires_config(int sample_rate, double win_ms) {
  DspConfig cfg;
  cfg.sample_rate = sample_rate;
  cfg.win_ms = win_ms;
  cfg.overlap = 0.5;
  cfg.fft_size = 0;
  cfg.f_df = sample_rate / 2.0;
  cfg.erb_bands = 2;
  cfg.validate();
  return cfg;
}

std::vector<double> stft_adjoint(const ComplexSpectrogram& grad,
                                 const DspConfig& cfg, std::size_t length) {
  const int win = cfg.win_length();
  const int hop = cfg.hop();
  const int nfft = cfg.fft_length();
  const auto window = hann_window(win);
  RealFft<double> fft(nfft);
  std::vector<cd> h(cfg.bins());
  std::vector<double> buf(nfft);
  std::vector<double> gx(length, 0.0);
  for (std::size_t k = 0; k < grad.rows(); ++k) {
    auto g = grad.row(k);
    h[0] = g[0];
    h[nfft / 2] = g[nfft / 2];
    for (int f = 1; f < nfft / 2; ++f) h[f] = 0.5 * g[f];
    fft.inverse(h, buf);
    const long start = static_cast<long>((k + 1) * hop) - win;
    for (int p = 0; p < win; ++p) {
      const long n = start + p;
      if (n < 0 || n >= static_cast<long>(length)) continue;
      gx[n] += window[p] * buf[p] * nfft;
    }
  }
  return gx;
}

ComplexSpectrogram istft_adjoint(std::span<const double> gy,
                                 std::size_t frames, const DspConfig& cfg) {
  const int win = cfg.win_length();
  const int hop = cfg.hop();
  const int nfft = cfg.fft_length();
  const auto window = hann_window(win);
  std::vector<double> inv(hop);
  for (int p = 0; p < hop; ++p) {
    double acc = 0.0;
    for (int q = p; q < win; q += hop) acc += window[q] * window[q];
    inv[p] = 1.0 / acc;
  }
  // accum index i holds output sample i - (win - hop).
  std::vector<double> gacc(frames * hop + win, 0.0);
  for (std::size_t n = 0; n < gy.size() && n < frames * hop; ++n) {
    gacc[n + win - hop] = gy[n] * inv[n % hop];
  }
  RealFft<double> fft(nfft);
  std::vector<double> buf(nfft, 0.0);
  ComplexSpectrogram out(frames, cfg.bins());
  for (std::size_t k = 0; k < frames; ++k) {
    for (int p = 0; p < win; ++p) buf[p] = window[p] * gacc[k * hop + p];
    auto row = out.row(k);
    fft.forward(buf, row);
    const double scale = 1.0 / nfft;
    row[0] *= scale;
    row[nfft / 2] *= scale;
    for (int f = 1; f < nfft / 2; ++f) row[f] *= 2.0 * scale;
  }
  return out;
}

double multires_loss(const AudioBuffer& est, const AudioBuffer& clean,
                     std::span<const double> windows_ms,
                     std::vector<double>* grad) {
  check_audio(est, clean);
  if (est.samples.empty()) throw DomainError("multires_loss: empty signals");
  if (grad != nullptr) grad->assign(est.samples.size(), 0.0);
  double total = 0.0;
  for (double ms : windows_ms) {
    const DspConfig cfg = multires_config(est.sample_rate, ms);
    const auto e = stft<double>(est, cfg);
    const auto s = stft<double>(clean, cfg);
    ComplexSpectrogram g;
    total += spectral_loss(e, s, grad != nullptr ? &g : nullptr);
    if (grad != nullptr) {
      const auto gx = stft_adjoint(g, cfg, est.samples.size());
      for (std::size_t n = 0; n < gx.size(); ++n) (*grad)[n] += gx[n];
    }
  }
  return total;
}

double multires_loss(const AudioBuffer& est, const AudioBuffer& clean,
                     std::vector<double>* grad) {
  return multires_loss(est, clean, kMultiresWindowsMs, grad);
}

LossParts combined_loss(const ComplexSpectrogram& est,
                        const ComplexSpectrogram& clean,
                        const AudioBuffer& est_audio,
                        const AudioBuffer& clean_audio, const LossWeights& w) {
  w.validate();
  LossParts out;
  out.spec = spectral_loss(est, clean);
  out.mr = multires_loss(est_audio, clean_audio);
  out.os = oversuppression_loss(est, clean);
  out.total = w.lambda_spec * out.spec + w.lambda_mr * out.mr +
              w.lambda_os * out.os;
  return out;
}

}  // namespace pse

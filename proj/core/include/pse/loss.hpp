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

#include <array>
#include <vector>

#include "pse/audio.hpp"
#include "pse/dsp.hpp"

namespace pse {

inline constexpr double kCompression = 0.6;
inline constexpr std::array<double, 4> kMultiresWindowsMs = {5.0, 10.0, 20.0,
                                                             40.0};

struct LossWeights {
  double lambda_spec = 1e3;
  double lambda_mr = 5e2;
  double lambda_os = 5e2;

  void validate() const;
};

// Gradients below are complex: dL/dRe + i dL/dIm per bin.

// Mean over bins of (|e|^c - |s|^c)^2 + | |e|^c e^{j<e} - |s|^c e^{j<s} |^2.
double spectral_loss(const ComplexSpectrogram& est,
                     const ComplexSpectrogram& clean,
                     ComplexSpectrogram* grad = nullptr);

// Mean over bins of max(|s|^c - |e|^c, 0)^2.
double oversuppression_loss(const ComplexSpectrogram& est,
                            const ComplexSpectrogram& clean,
                            ComplexSpectrogram* grad = nullptr);

// Analysis geometry used for one resolution of the multi-resolution loss.
DspConfig multires_config(int sample_rate, double win_ms);

// Sum over 5, 10, 20, 40 ms windows (50% overlap) of spectral_loss on the
// re-analyzed signals. `grad` receives dL/d(est sample).
double multires_loss(const AudioBuffer& est, const AudioBuffer& clean,
                     std::vector<double>* grad = nullptr);
// Same with a caller-chosen window set.
double multires_loss(const AudioBuffer& est, const AudioBuffer& clean,
                     std::span<const double> windows_ms,
                     std::vector<double>* grad = nullptr);

struct LossParts {
  double spec = 0.0;
  double mr = 0.0;
  double os = 0.0;
  double total = 0.0;
};

LossParts combined_loss(const ComplexSpectrogram& est,
                        const ComplexSpectrogram& clean,
                        const AudioBuffer& est_audio,
                        const AudioBuffer& clean_audio, const LossWeights& w);

// Adjoint of stft: dL/dx from dL/dX for a signal of `length` samples.
std::vector<double> stft_adjoint(const ComplexSpectrogram& grad,
                                 const DspConfig& cfg, std::size_t length);
// Adjoint of istft followed by truncation to gy.size() samples.
ComplexSpectrogram istft_adjoint(std::span<const double> gy,
                                 std::size_t frames, const DspConfig& cfg);

}  // namespace pse

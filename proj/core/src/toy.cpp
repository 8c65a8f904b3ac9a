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

#include "pse/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "pse/error.hpp"
#include "pse/random.hpp"

namespace fs = std::filesystem;

namespace pse {

namespace {

constexpr double kPi = std::numbers::pi;

// Two-pole resonator at `freq` with bandwidth `bw`, unity gain at DC-ish
// levels is not needed since files are peak-normalized afterwards.
struct Resonator {
  double a1 = 0, a2 = 0, g = 0, y1 = 0, y2 = 0;
  void tune(double freq, double bw, int sr) {
    const double r = std::exp(-kPi * bw / sr);
    a1 = 2.0 * r * std::cos(2.0 * kPi * freq / sr);
    a2 = -r * r;
    g = 1.0 - r;
  }
  double step(double x) {
    const double y = g * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

struct Voice {
  double f0;
  double formant_scale;
  double tilt;  // per-harmonic amplitude exponent
};

Voice voice_for(int speaker) {
  static constexpr std::array<Voice, 4> kVoices = {{{115.0, 1.0, 1.0},
                                                    {215.0, 1.3, 0.6},
                                                    {160.0, 1.15, 0.8},
                                                    {95.0, 0.9, 1.2}}};
  return kVoices[static_cast<std::size_t>(speaker) % kVoices.size()];
}

constexpr std::array<std::array<double, 3>, 5> kVowels = {{{730, 1090, 2440},
                                                          {270, 2290, 3010},
                                                          {300, 870, 2240},
                                                          {530, 1840, 2480},
                                                          {570, 840, 2410}}};

void peak_normalize(AudioBuffer& a, double peak) {
  double m = 0.0;
  for (double v : a.samples) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    for (double& v : a.samples) v *= peak / m;
  }
}

}  // namespace

AudioBuffer synth_toy_speech(int speaker, double seconds, int sample_rate,
                             std::mt19937_64& rng) {
  if (!(seconds > 0.0) || sample_rate <= 0) {
    throw DomainError("toy speech needs a positive duration and rate");
  }
  const Voice v = voice_for(speaker);
  const std::size_t n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
  AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.assign(n, 0.0);
  const double nyq = 0.45 * sample_rate;

  std::array<Resonator, 3> res;
  double phase = 0.0;
  std::size_t pos = 0;
  while (pos < n) {
    // Syllable of 120-320 ms, then an optional pause.
    const std::size_t syl = static_cast<std::size_t>(
        (0.12 + 0.2 * unit_uniform(rng)) * sample_rate);
    const auto& vowel = kVowels[uniform_index(rng, kVowels.size())];
    for (std::size_t k = 0; k < 3; ++k) {
      const double f = std::min(vowel[k] * v.formant_scale, 0.9 * nyq);
      res[k].tune(f, 60.0 + 40.0 * k, sample_rate);
    }
    const double f_start = v.f0 * (0.9 + 0.2 * unit_uniform(rng));
    const double f_end = v.f0 * (0.9 + 0.2 * unit_uniform(rng));
    for (std::size_t i = 0; i < syl && pos < n; ++i, ++pos) {
      const double t = static_cast<double>(i) / syl;
      const double f0 = f_start + (f_end - f_start) * t;
      phase += 2.0 * kPi * f0 / sample_rate;
      if (phase > 2.0 * kPi) phase -= 2.0 * kPi;
      double src = 0.0;
      const int harmonics = static_cast<int>(nyq / f0);
      for (int h = 1; h <= harmonics; ++h) {
        src += std::sin(h * phase) / std::pow(h, v.tilt);
      }
      src += 0.05 * standard_normal(rng);
      double y = 0.0;
      for (auto& r : res) y += r.step(src);
      const double env = std::sin(kPi * t);
      out.samples[pos] = env * env * y;
    }
    if (unit_uniform(rng) < 0.35) {
      pos += static_cast<std::size_t>((0.05 + 0.25 * unit_uniform(rng)) * sample_rate);
    }
  }
  peak_normalize(out, 0.5);
  return out;
}

AudioBuffer synth_toy_noise(ToyNoise kind, double seconds, int sample_rate,
                            std::mt19937_64& rng) {
  const std::size_t n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
  AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.resize(n);
  double b0 = 0, b1 = 0, b2 = 0, brown = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = standard_normal(rng);
    double s = w;
    switch (kind) {
      case ToyNoise::kWhite:
        break;
      case ToyNoise::kPink:
        // Three-pole approximation of a 1/f spectrum.
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        s = b0 + b1 + b2 + w * 0.1848;
        break;
      case ToyNoise::kBrown:
        brown = 0.995 * brown + 0.1 * w;
        s = brown;
        break;
      case ToyNoise::kHum: {
        const double t = static_cast<double>(i) / sample_rate;
        s = 0.2 * w;
        for (int h = 1; h <= 6; ++h) s += std::sin(2.0 * kPi * 50.0 * h * t) / h;
        break;
      }
    }
    out.samples[i] = s;
  }
  peak_normalize(out, 0.5);
  return out;
}

ToyCorpus make_toy_corpus(const fs::path& out_dir, const ToyCorpusOptions& o) {
  if (o.speakers < 2) throw ConfigError("toy corpus needs at least two speakers");
  if (o.files_per_speaker < 1 || o.noise_files < 1) {
    throw ConfigError("toy corpus needs at least one file per role");
  }
  ToyCorpus c;
  c.speech_dir = out_dir / "speech";
  c.noise_dir = out_dir / "noise";
  c.enroll_dir = out_dir / "enroll";
  fs::create_directories(c.noise_dir);
  fs::create_directories(c.enroll_dir);
  std::uint64_t stream = 0;
  char name[64];
  for (int s = 0; s < o.speakers; ++s) {
    const std::string spk = "spk_" + std::to_string(s);
    c.speakers.push_back(spk);
    fs::create_directories(c.speech_dir / spk);
    for (int f = 0; f < o.files_per_speaker; ++f) {
      std::mt19937_64 rng(derive_seed(o.seed, stream++));
      std::snprintf(name, sizeof name, "utt_%02d.wav", f);
      write_wav(c.speech_dir / spk / name,
                synth_toy_speech(s, o.file_seconds, o.sample_rate, rng));
    }
    std::mt19937_64 rng(derive_seed(o.seed, stream++));
    write_wav(c.enroll_dir / (spk + ".wav"),
              synth_toy_speech(s, o.enroll_seconds, o.sample_rate, rng));
  }
  constexpr std::array<ToyNoise, 4> kinds = {ToyNoise::kWhite, ToyNoise::kPink,
                                            ToyNoise::kBrown, ToyNoise::kHum};
  for (int f = 0; f < o.noise_files; ++f) {
    std::mt19937_64 rng(derive_seed(o.seed, stream++));
    std::snprintf(name, sizeof name, "noise_%02d.wav", f);
    write_wav(c.noise_dir / name,
              synth_toy_noise(kinds[f % kinds.size()], o.file_seconds,
                              o.sample_rate, rng));
  }
  return c;
}

}  // namespace pse

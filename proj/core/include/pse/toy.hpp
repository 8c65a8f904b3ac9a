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

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "pse/audio.hpp"

namespace pse {

// Synthetic speech-like signal: a harmonic source with a drifting pitch,
// shaped by per-syllable formant resonators and a syllabic envelope with
// pauses. `speaker` selects the pitch range and formant scaling, so two
// speakers have clearly different spectral envelopes.
AudioBuffer synth_toy_speech(int speaker, double seconds, int sample_rate,
                             std::mt19937_64& rng);

enum class ToyNoise { kWhite, kPink, kBrown, kHum };
AudioBuffer synth_toy_noise(ToyNoise kind, double seconds, int sample_rate,
                            std::mt19937_64& rng);

struct ToyCorpusOptions {
  int sample_rate = 16000;
  int speakers = 2;
  int files_per_speaker = 4;
  double file_seconds = 30.0;
  int noise_files = 4;  // cycles through the noise kinds
  double enroll_seconds = 8.0;
  std::uint64_t seed = 0;
};

struct ToyCorpus {
  std::filesystem::path speech_dir;  // speech/spk_<i>/utt_<j>.wav
  std::filesystem::path noise_dir;   // noise/noise_<j>.wav
  std::filesystem::path enroll_dir;  // enroll/spk_<i>.wav, separate audio
  std::vector<std::string> speakers;
};

ToyCorpus make_toy_corpus(const std::filesystem::path& out_dir,
                          const ToyCorpusOptions& opts);

}  // namespace pse

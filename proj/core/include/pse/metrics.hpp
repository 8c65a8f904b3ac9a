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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/mixer.hpp"
#include "pse/model.hpp"

namespace pse {

inline constexpr double kSiSdrCapDb = 80.0;
inline constexpr int kStoiRate = 10000;

// Windowed-sinc resampling to `rate`. Identity when the rates match.
AudioBuffer resample(const AudioBuffer& in, int rate);

// Classic STOI: 10 kHz, 256-sample frames, 15 third-octave bands from
// 150 Hz, 30-frame segments, -15 dB clipping, 40 dB silent-frame removal
// driven by `clean`. DomainError on length mismatch or when fewer than 30
// frames remain.
double stoi(const AudioBuffer& clean, const AudioBuffer& est);

// Scale-invariant SDR in dB, capped at kSiSdrCapDb. DomainError on length
// mismatch or silent `clean`.
double si_sdr(std::span<const double> clean, std::span<const double> est);
inline double si_sdr(const AudioBuffer& clean, const AudioBuffer& est) {
  return si_sdr(clean.samples, est.samples);
}

struct Summary {
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
};
// Quartiles by linear interpolation between order statistics.
Summary summarize(std::vector<double> values);

struct ClipScore {
  std::string clip;
  MixCategory category = MixCategory::kTargetNoise;
  double stoi = 0, si_sdr_db = 0;          // enhanced
  double stoi_mix = 0, si_sdr_mix_db = 0;  // unprocessed mixture
};

struct SubsetReport {
  std::string subset;  // pn, ps, psn
  std::size_t count = 0;
  Summary stoi, si_sdr, stoi_mix, si_sdr_mix;
};

struct EvalReport {
  std::vector<ClipScore> clips;     // manifest order
  std::vector<SubsetReport> subsets;  // pn, ps, psn; empty subsets kept

  std::string csv() const;
  std::string summary() const;
};

// Enhances every clip (streaming, 32-bit) with its target speaker's
// embedding and scores it against the clean reference. UsageError listing
// every speaker without an embedding when the variant needs one.
EvalReport evaluate(const Model& model, const Manifest& manifest,
                    const EmbeddingMap& embeddings, int jobs = 0);

struct ComplexityReport {
  std::string variant;
  std::size_t params = 0;
  double macs_per_s = 0;
  double rtf = 0;

  static std::string csv_header() { return "variant,params,macs_per_s,rtf"; }
  std::string csv_row() const;
};

// Median over `reps` timed runs of single-threaded streaming enhancement of
// `seconds` of seeded noise, after one untimed warm-up run.
ComplexityReport measure_rtf(const Model& model, double seconds = 30.0,
                             int reps = 5, std::uint64_t seed = 0);

// Toy enrollment embedder: 48-band log-mel frames (level-normalized per
// frame) and their deltas, mean and standard deviation pooled over active
// frames, giving 192 values, L2-normalized. DomainError below 2 s.
SpeakerEmbedding toy_embed(const AudioBuffer& enrollment);

// Raw format: 192 little-endian float32 values (768 bytes). The loader also
// accepts a container holding an "embedding" tensor of shape [192]; loaded
// vectors are validated and L2-normalized.
void save_embedding(const std::filesystem::path& path, const SpeakerEmbedding& e);
SpeakerEmbedding load_embedding(const std::filesystem::path& path);
SpeakerEmbedding parse_embedding(const std::string& bytes);

// Every <speaker>.emb file in `dir`, keyed by file stem.
EmbeddingMap load_embeddings_dir(const std::filesystem::path& dir);

}  // namespace pse

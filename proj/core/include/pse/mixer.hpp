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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pse/audio.hpp"

namespace pse {

enum class MixCategory { kTargetNoise, kTargetInterferer, kTargetInterfererNoise };

inline constexpr std::array<MixCategory, 3> kAllCategories = {
    MixCategory::kTargetNoise, MixCategory::kTargetInterferer,
    MixCategory::kTargetInterfererNoise};

const char* to_string(MixCategory c);
MixCategory parse_category(const std::string& s);  // FormatError
// Evaluation subset tag: pn, ps, psn.
const char* subset_tag(MixCategory c);
bool has_interferer(MixCategory c);
bool has_noise(MixCategory c);

inline constexpr double kSnrMinDb = -5.0;
inline constexpr double kSnrMaxDb = 35.0;
inline constexpr double kSirMinDb = -5.0;
inline constexpr double kSirMaxDb = 25.0;
inline constexpr double kPeakLimit = 0.99;
// Frames quieter than this relative to the loudest frame are silence.
inline constexpr double kActiveThresholdDb = -50.0;
inline constexpr double kActiveFrameSeconds = 0.010;

enum class DrawMode { kGaussian, kUniform };
const char* to_string(DrawMode m);
DrawMode parse_draw_mode(const std::string& s);  // ConfigError

struct CategoryDistribution {
  // Indexed like kAllCategories.
  std::array<double, 3> weights = {0.20, 0.30, 0.50};
  DrawMode mode = DrawMode::kGaussian;

  void validate() const;  // ConfigError
};

// Gaussian mode: normal with the interval midpoint as mean and a quarter of
// the width as sd, redrawn until inside [lo, hi]. Uniform mode: uniform.
double draw_level(std::mt19937_64& rng, double lo, double hi, DrawMode mode);

struct SourceFile {
  std::filesystem::path path;
  std::string speaker;
  std::size_t length = 0;  // samples
};

struct CorpusIndex {
  int sample_rate = 0;
  std::vector<SourceFile> targets;
  std::vector<SourceFile> interferers;
  std::vector<SourceFile> noises;
};

// Scans each role directory recursively for .wav files in sorted order. The
// speaker of a file is its top-level subfolder (the file stem for files at
// the root). Unreadable files, files at a different sample rate than the
// first target, and files shorter than `min_seconds` are skipped with
// a warning. An empty `noise_dir` or `interf_dir` leaves that role empty.
CorpusIndex index_corpus(const std::filesystem::path& target_dir,
                         const std::filesystem::path& interf_dir,
                         const std::filesystem::path& noise_dir,
                         double min_seconds);

struct MixSpec {
  MixCategory category = MixCategory::kTargetNoise;
  std::optional<double> snr_db;  // present iff the clip has noise
  std::optional<double> sir_db;  // present iff the clip has an interferer
  std::size_t target = 0;        // indices into the CorpusIndex roles
  std::optional<std::size_t> interferer;
  std::optional<std::size_t> noise;
  std::size_t target_offset = 0;  // first sample used from each source
  std::size_t interferer_offset = 0;
  std::size_t noise_offset = 0;
  std::uint64_t seed = 0;
};

// Draws category, levels, sources and offsets for a clip of `clip_len`
// samples. The interferer never shares the target's speaker. UsageError when
// a role the category needs has no usable file.
MixSpec draw_mix_spec(std::mt19937_64& rng, const CategoryDistribution& dist,
                      const CorpusIndex& corpus, std::size_t clip_len);

// Mean power over active frames (see kActiveThresholdDb). Zero for silence.
double active_power(std::span<const double> x, int sample_rate);

// 10 log10 of the active-power ratio signal / contaminant.
double measure_level_db(const AudioBuffer& signal, const AudioBuffer& contaminant);

// Gain for `contaminant` so that signal-to-contaminant active power equals
// `level_db`. DomainError when either input is silent.
double scale_for_snr(const AudioBuffer& target, const AudioBuffer& contaminant,
                     double level_db);

struct MixResult {
  AudioBuffer mixture;
  AudioBuffer clean;       // scaled target
  AudioBuffer interferer;  // scaled interferer as mixed (zeros if absent)
  AudioBuffer noise;       // scaled noise as mixed (zeros if absent)
  double peak_scale = 1.0;
};

// Mixes clip_len samples starting at the spec's offsets. SIR sets the
// interferer against the target; SNR sets the noise against target plus
// interferer. Everything is then scaled by one factor so no sample of the
// mixture or clean target exceeds kPeakLimit.
MixResult synthesize_mixture(const MixSpec& spec, const AudioBuffer& target,
                             const AudioBuffer* interferer,
                             const AudioBuffer* noise, std::size_t clip_len);

// Same, reading the sources named by the spec.
MixResult synthesize_mixture(const MixSpec& spec, const CorpusIndex& corpus,
                             std::size_t clip_len);

struct ManifestRow {
  std::string clip;   // relative to the manifest directory
  std::string clean;
  MixCategory category = MixCategory::kTargetNoise;
  std::optional<double> snr_db;
  std::optional<double> sir_db;
  std::string target_speaker;
  std::optional<std::string> interferer_speaker;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::filesystem::path resolve(const std::string& rel) const {
    return base_dir / rel;
  }
};

inline constexpr const char* kManifestName = "manifest.tsv";

// Tab-separated, header line first, "NA" for absent fields.
std::string format_manifest(std::span<const ManifestRow> rows);
std::vector<ManifestRow> parse_manifest(const std::string& text);  // FormatError
Manifest read_manifest(const std::filesystem::path& path);

struct DatasetOptions {
  double hours = 0.1;
  double clip_seconds = 5.0;
  CategoryDistribution dist;
  std::uint64_t seed = 0;
  int jobs = 0;
};

// Clip `index` of a run: its spec comes from an RNG seeded with
// derive_seed(seed, index), so clips are independent of each other.
struct GeneratedClip {
  MixSpec spec;
  MixResult result;
};
GeneratedClip make_clip(const CorpusIndex& corpus, const DatasetOptions& opts,
                        std::size_t index);

inline std::size_t clip_count(const DatasetOptions& o) {
  return static_cast<std::size_t>(std::llround(o.hours * 3600.0 / o.clip_seconds));
}

// Writes out_dir/mix/NNNNN.wav, out_dir/clean/NNNNN.wav and
// out_dir/manifest.tsv. UsageError when no clips would be written or the
// corpus has no usable target file.
Manifest generate_dataset(const CorpusIndex& corpus, const DatasetOptions& opts,
                          const std::filesystem::path& out_dir);

}  // namespace pse

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

#include "pse/mixer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pse/error.hpp"
#include "pse/log.hpp"
#include "pse/parallel.hpp"
#include "pse/random.hpp"

namespace fs = std::filesystem;

namespace pse {

const char* to_string(MixCategory c) {
  switch (c) {
    case MixCategory::kTargetNoise: return "target_noise";
    case MixCategory::kTargetInterferer: return "target_interferer";
    case MixCategory::kTargetInterfererNoise: return "target_interferer_noise";
  }
  return "?";
}

MixCategory parse_category(const std::string& s) {
  for (auto c : kAllCategories) {
    if (s == to_string(c)) return c;
  }
  throw FormatError("unknown mixture category '" + s + "'");
}

const char* subset_tag(MixCategory c) {
  switch (c) {
    case MixCategory::kTargetNoise: return "pn";
    case MixCategory::kTargetInterferer: return "ps";
    case MixCategory::kTargetInterfererNoise: return "psn";
  }
  return "?";
}

bool has_interferer(MixCategory c) { return c != MixCategory::kTargetNoise; }
bool has_noise(MixCategory c) { return c != MixCategory::kTargetInterferer; }

const char* to_string(DrawMode m) {
  return m == DrawMode::kGaussian ? "gaussian" : "uniform";
}

DrawMode parse_draw_mode(const std::string& s) {
  if (s == "gaussian") return DrawMode::kGaussian;
  if (s == "uniform") return DrawMode::kUniform;
  throw ConfigError("draw mode must be gaussian or uniform, got '" + s + "'");
}

void CategoryDistribution::validate() const {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("category weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("category weights must sum to 1");
  }
}

double draw_level(std::mt19937_64& rng, double lo, double hi, DrawMode mode) {
  if (mode == DrawMode::kUniform) return lo + (hi - lo) * unit_uniform(rng);
  const double mean = 0.5 * (lo + hi);
  const double sd = 0.25 * (hi - lo);
  for (;;) {
    const double v = mean + sd * standard_normal(rng);
    if (v >= lo && v <= hi) return v;
  }
}

namespace {

std::string speaker_of(const fs::path& root, const fs::path& file) {
  const fs::path rel = file.lexically_relative(root);
  auto it = rel.begin();
  if (it != rel.end() && std::next(it) != rel.end()) return it->string();
  return file.stem().string();
}

std::vector<fs::path> wav_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (dir.empty()) return out;
  if (!fs::is_directory(dir)) {
    throw UsageError("not a directory: " + dir.string());
  }
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void scan_role(const fs::path& dir, const char* role, double min_seconds,
               int& rate, std::vector<SourceFile>& out) {
  for (const auto& p : wav_files(dir)) {
    AudioBuffer a;
    try {
      a = read_wav(p);
      validate(a);
    } catch (const Error& e) {
      log_warn(std::string("skipping unreadable ") + role + " file: " + e.what());
      continue;
    }
    if (rate == 0) rate = a.sample_rate;
    if (a.sample_rate != rate) {
      log_warn("skipping " + p.string() + ": sample rate " +
               std::to_string(a.sample_rate) + " differs from " +
               std::to_string(rate));
      continue;
    }
    if (a.seconds() < min_seconds) {
      log_warn("skipping " + p.string() + ": shorter than the clip length");
      continue;
    }
    out.push_back({p, speaker_of(dir, p), a.samples.size()});
  }
}

}  // namespace

CorpusIndex index_corpus(const fs::path& target_dir, const fs::path& interf_dir,
                         const fs::path& noise_dir, double min_seconds) {
  CorpusIndex idx;
  scan_role(target_dir, "target", min_seconds, idx.sample_rate, idx.targets);
  scan_role(interf_dir, "interferer", min_seconds, idx.sample_rate,
            idx.interferers);
  scan_role(noise_dir, "noise", min_seconds, idx.sample_rate, idx.noises);
  return idx;
}

MixSpec draw_mix_spec(std::mt19937_64& rng, const CategoryDistribution& dist,
                      const CorpusIndex& corpus, std::size_t clip_len) {
  dist.validate();
  if (corpus.targets.empty()) throw UsageError("no usable target files");
  MixSpec spec;
  // Fixed draw order: category, SNR, SIR, sources, offsets.
  const double u = unit_uniform(rng);
  double acc = 0.0;
  spec.category = kAllCategories.back();
  for (std::size_t i = 0; i < kAllCategories.size(); ++i) {
    acc += dist.weights[i];
    if (u < acc) {
      spec.category = kAllCategories[i];
      break;
    }
  }
  const double snr = draw_level(rng, kSnrMinDb, kSnrMaxDb, dist.mode);
  const double sir = draw_level(rng, kSirMinDb, kSirMaxDb, dist.mode);
  spec.target = uniform_index(rng, corpus.targets.size());
  const SourceFile& target = corpus.targets[spec.target];
  const auto offset = [&](const SourceFile& f) -> std::size_t {
    if (f.length < clip_len) {
      throw UsageError("source shorter than the clip: " + f.path.string());
    }
    return uniform_index(rng, f.length - clip_len + 1);
  };
  spec.target_offset = offset(target);
  if (has_interferer(spec.category)) {
    if (corpus.interferers.empty()) throw UsageError("no usable interferer files");
    std::vector<std::size_t> other;
    for (std::size_t i = 0; i < corpus.interferers.size(); ++i) {
      if (corpus.interferers[i].speaker != target.speaker) other.push_back(i);
    }
    if (other.empty()) {
      throw UsageError("no interferer from a speaker other than '" +
                       target.speaker + "'");
    }
    spec.interferer = other[uniform_index(rng, other.size())];
    spec.interferer_offset = offset(corpus.interferers[*spec.interferer]);
    spec.sir_db = sir;
  }
  if (has_noise(spec.category)) {
    if (corpus.noises.empty()) throw UsageError("no usable noise files");
    spec.noise = uniform_index(rng, corpus.noises.size());
    spec.noise_offset = offset(corpus.noises[*spec.noise]);
    spec.snr_db = snr;
  }
  return spec;
}

double active_power(std::span<const double> x, int sample_rate) {
  const std::size_t frame = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(kActiveFrameSeconds * sample_rate)));
  std::vector<double> energy;
  for (std::size_t s = 0; s < x.size(); s += frame) {
    const std::size_t e = std::min(x.size(), s + frame);
    double acc = 0.0;
    for (std::size_t n = s; n < e; ++n) acc += x[n] * x[n];
    energy.push_back(acc / static_cast<double>(e - s));
  }
  const double peak = energy.empty() ? 0.0
                                     : *std::max_element(energy.begin(), energy.end());
  if (!(peak > 0.0)) return 0.0;
  const double floor = peak * std::pow(10.0, kActiveThresholdDb / 10.0);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < energy.size(); ++i) {
    if (energy[i] < floor) continue;
    const std::size_t s = i * frame;
    const std::size_t e = std::min(x.size(), s + frame);
    sum += energy[i] * static_cast<double>(e - s);
    count += e - s;
  }
  return sum / static_cast<double>(count);
}

double measure_level_db(const AudioBuffer& signal, const AudioBuffer& contaminant) {
  const double ps = active_power(signal.samples, signal.sample_rate);
  const double pc = active_power(contaminant.samples, contaminant.sample_rate);
  if (!(ps > 0.0) || !(pc > 0.0)) {
    throw DomainError("level of a silent signal is undefined");
  }
  return 10.0 * std::log10(ps / pc);
}

double scale_for_snr(const AudioBuffer& target, const AudioBuffer& contaminant,
                     double level_db) {
  const double pt = active_power(target.samples, target.sample_rate);
  const double pc = active_power(contaminant.samples, contaminant.sample_rate);
  if (!(pt > 1e-20)) throw DomainError("target is silent");
  if (!(pc > 1e-20)) throw DomainError("contaminant is silent");
  return std::sqrt(pt / (pc * std::pow(10.0, level_db / 10.0)));
}

namespace {

AudioBuffer segment(const AudioBuffer& src, std::size_t offset, std::size_t len) {
  if (offset + len > src.samples.size()) {
    throw DomainError("source too short for the requested clip");
  }
  AudioBuffer out;
  out.sample_rate = src.sample_rate;
  out.samples.assign(src.samples.begin() + offset,
                     src.samples.begin() + offset + len);
  return out;
}

}  // namespace

MixResult synthesize_mixture(const MixSpec& spec, const AudioBuffer& target,
                             const AudioBuffer* interferer,
                             const AudioBuffer* noise, std::size_t clip_len) {
  if (clip_len == 0) throw DomainError("clip length must be positive");
  const int sr = target.sample_rate;
  MixResult r;
  r.clean = segment(target, spec.target_offset, clip_len);
  r.interferer.sample_rate = r.noise.sample_rate = sr;
  r.interferer.samples.assign(clip_len, 0.0);
  r.noise.samples.assign(clip_len, 0.0);
  if (active_power(r.clean.samples, sr) <= 1e-20) {
    throw DomainError("target segment is silent");
  }
  AudioBuffer signal = r.clean;
  if (has_interferer(spec.category)) {
    if (interferer == nullptr || !spec.sir_db) {
      throw UsageError("category needs an interferer");
    }
    const AudioBuffer seg = segment(*interferer, spec.interferer_offset, clip_len);
    const double g = scale_for_snr(r.clean, seg, *spec.sir_db);
    for (std::size_t n = 0; n < clip_len; ++n) {
      r.interferer.samples[n] = g * seg.samples[n];
      signal.samples[n] += r.interferer.samples[n];
    }
  }
  if (has_noise(spec.category)) {
    if (noise == nullptr || !spec.snr_db) throw UsageError("category needs noise");
    const AudioBuffer seg = segment(*noise, spec.noise_offset, clip_len);
    const double g = scale_for_snr(signal, seg, *spec.snr_db);
    for (std::size_t n = 0; n < clip_len; ++n) r.noise.samples[n] = g * seg.samples[n];
  }
  r.mixture.sample_rate = sr;
  r.mixture.samples.resize(clip_len);
  double peak = 0.0;
  for (std::size_t n = 0; n < clip_len; ++n) {
    r.mixture.samples[n] = signal.samples[n] + r.noise.samples[n];
    peak = std::max({peak, std::abs(r.mixture.samples[n]),
                     std::abs(r.clean.samples[n])});
  }
  if (peak > kPeakLimit) {
    r.peak_scale = kPeakLimit / peak;
    for (auto* buf : {&r.mixture, &r.clean, &r.interferer, &r.noise}) {
      for (double& v : buf->samples) v *= r.peak_scale;
    }
  }
  return r;
}

MixResult synthesize_mixture(const MixSpec& spec, const CorpusIndex& corpus,
                             std::size_t clip_len) {
  const AudioBuffer target = read_wav(corpus.targets.at(spec.target).path);
  std::optional<AudioBuffer> interf, noise;
  if (spec.interferer) interf = read_wav(corpus.interferers.at(*spec.interferer).path);
  if (spec.noise) noise = read_wav(corpus.noises.at(*spec.noise).path);
  return synthesize_mixture(spec, target, interf ? &*interf : nullptr,
                            noise ? &*noise : nullptr, clip_len);
}

namespace {

constexpr const char* kHeader =
    "clip\tclean\tcategory\tsnr_db\tsir_db\ttarget_speaker\t"
    "interferer_speaker\tseed";

std::string fmt_level(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::optional<double> parse_level(const std::string& s, std::size_t line) {
  if (s == "NA") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("manifest line " + std::to_string(line) +
                    ": invalid level '" + s + "'");
}

}  // namespace

std::string format_manifest(std::span<const ManifestRow> rows) {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows) {
    out += r.clip + '\t' + r.clean + '\t' + to_string(r.category) + '\t' +
           fmt_level(r.snr_db) + '\t' + fmt_level(r.sir_db) + '\t' +
           r.target_speaker + '\t' + r.interferer_speaker.value_or("NA") +
           '\t' + std::to_string(r.seed) + '\n';
  }
  return out;
}

std::vector<ManifestRow> parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw FormatError("manifest: missing or unexpected header line");
  }
  std::vector<ManifestRow> rows;
  for (std::size_t no = 2; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 8) {
      throw FormatError("manifest line " + std::to_string(no) + ": expected 8 fields, got " +
                        std::to_string(f.size()));
    }
    ManifestRow r;
    r.clip = f[0];
    r.clean = f[1];
    try {
      r.category = parse_category(f[2]);
    } catch (const FormatError& e) {
      throw FormatError("manifest line " + std::to_string(no) + ": " + e.what());
    }
    r.snr_db = parse_level(f[3], no);
    r.sir_db = parse_level(f[4], no);
    r.target_speaker = f[5];
    if (f[6] != "NA") r.interferer_speaker = f[6];
    try {
      std::size_t used = 0;
      r.seed = std::stoull(f[7], &used);
      if (used != f[7].size()) throw std::invalid_argument("seed");
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(no) + ": invalid seed");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open manifest: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    m.rows = parse_manifest(ss.str());
  } catch (const FormatError& e) {
    throw e.prefixed(path.string());
  }
  return m;
}

GeneratedClip make_clip(const CorpusIndex& corpus, const DatasetOptions& opts,
                        std::size_t index) {
  const std::size_t clip_len = static_cast<std::size_t>(
      std::lround(opts.clip_seconds * corpus.sample_rate));
  GeneratedClip out;
  const std::uint64_t seed = derive_seed(opts.seed, index);
  std::mt19937_64 rng(seed);
  out.spec = draw_mix_spec(rng, opts.dist, corpus, clip_len);
  out.spec.seed = seed;
  out.result = synthesize_mixture(out.spec, corpus, clip_len);
  return out;
}

Manifest generate_dataset(const CorpusIndex& corpus, const DatasetOptions& opts,
                          const fs::path& out_dir) {
  opts.dist.validate();
  if (!(opts.clip_seconds > 0.0)) throw ConfigError("clip length must be positive");
  if (corpus.targets.empty()) throw UsageError("zero usable target files");
  const std::size_t n = clip_count(opts);
  if (n == 0) throw UsageError("requested duration yields zero clips");

  // Every spec is drawn before anything is written, so corpus problems
  // surface without touching the output directory.
  const std::size_t clip_len = static_cast<std::size_t>(
      std::lround(opts.clip_seconds * corpus.sample_rate));
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(opts.seed, i));
    draw_mix_spec(rng, opts.dist, corpus, clip_len);
  }

  std::vector<fs::path> created;
  for (const char* sub : {"mix", "clean"}) {
    if (!fs::exists(out_dir / sub)) created.push_back(out_dir / sub);
  }
  fs::create_directories(out_dir / "mix");
  fs::create_directories(out_dir / "clean");
  std::vector<ManifestRow> rows(n);
  std::vector<char> written(n, 0);
  try {
    parallel_for(n, resolve_jobs(opts.jobs), [&](std::size_t i) {
      const GeneratedClip c = make_clip(corpus, opts, i);
      char name[32];
      std::snprintf(name, sizeof name, "%05zu.wav", i);
      ManifestRow& r = rows[i];
      r.clip = std::string("mix/") + name;
      r.clean = std::string("clean/") + name;
      r.category = c.spec.category;
      r.snr_db = c.spec.snr_db;
      r.sir_db = c.spec.sir_db;
      r.target_speaker = corpus.targets[c.spec.target].speaker;
      if (c.spec.interferer) {
        r.interferer_speaker = corpus.interferers[*c.spec.interferer].speaker;
      }
      r.seed = c.spec.seed;
      written[i] = 1;
      write_wav(out_dir / r.clip, c.result.mixture);
      write_wav(out_dir / r.clean, c.result.clean);
    });
  } catch (...) {
    std::error_code ec;
    for (std::size_t i = 0; i < n; ++i) {
      if (!written[i]) continue;
      fs::remove(out_dir / rows[i].clip, ec);
      fs::remove(out_dir / rows[i].clean, ec);
    }
    for (const auto& d : created) fs::remove(d, ec);  // only if empty
    throw;
  }
  write_file_atomic(out_dir / kManifestName, format_manifest(rows));
  Manifest m;
  m.base_dir = out_dir;
  m.rows = std::move(rows);
  return m;
}

}  // namespace pse

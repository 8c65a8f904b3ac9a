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

#include "pse/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pse/error.hpp"
#include "pse/fft.hpp"
#include "pse/parallel.hpp"
#include "pse/random.hpp"
#include "pse/tensor.hpp"

namespace fs = std::filesystem;

namespace pse {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMachEps = 2.220446049250313e-16;

}  // namespace

AudioBuffer resample(const AudioBuffer& in, int rate) {
  if (rate <= 0 || in.sample_rate <= 0) throw DomainError("invalid sample rate");
  if (in.sample_rate == rate) return in;
  const double ratio = static_cast<double>(rate) / in.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to input Nyquist
  const int zeros = 16;
  const double half = zeros / cutoff;  // kernel half-width in input samples
  const std::size_t n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(in.samples.size()) * ratio));
  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.resize(n_out);
  const long n_in = static_cast<long>(in.samples.size());
  for (std::size_t m = 0; m < n_out; ++m) {
    const double t = static_cast<double>(m) / ratio;
    const long lo = std::max(0L, static_cast<long>(std::ceil(t - half)));
    const long hi = std::min(n_in - 1, static_cast<long>(std::floor(t + half)));
    double acc = 0.0;
    for (long n = lo; n <= hi; ++n) {
      const double d = t - static_cast<double>(n);
      const double x = cutoff * d;
      const double sinc = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
      const double w = 0.5 + 0.5 * std::cos(kPi * d / half);
      acc += in.samples[n] * cutoff * sinc * w;
    }
    out.samples[m] = acc;
  }
  return out;
}

namespace {

constexpr int kStoiFrame = 256;
constexpr int kStoiFft = 512;
constexpr int kStoiBands = 15;
constexpr double kStoiMinFreq = 150.0;
constexpr int kStoiSegment = 30;
constexpr double kStoiBeta = -15.0;
constexpr double kStoiDynRange = 40.0;

// Hann of length n + 2 without its zero end points.
std::vector<double> stoi_window() {
  std::vector<double> w(kStoiFrame);
  for (int i = 0; i < kStoiFrame; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * (i + 1) / (kStoiFrame + 1));
  }
  return w;
}

// Drops frames of `x` more than 40 dB below its loudest frame, applying the
// same mask to `y`, and overlap-adds the kept windowed frames.
void remove_silent(std::vector<double>& x, std::vector<double>& y) {
  const auto w = stoi_window();
  const int hop = kStoiFrame / 2;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + kStoiFrame < x.size(); s += hop) starts.push_back(s);
  std::vector<double> energy(starts.size());
  for (std::size_t j = 0; j < starts.size(); ++j) {
    double acc = 0.0;
    for (int i = 0; i < kStoiFrame; ++i) {
      const double v = w[i] * x[starts[j] + i];
      acc += v * v;
    }
    energy[j] = 20.0 * std::log10(std::sqrt(acc) + kMachEps);
  }
  const double top = energy.empty() ? 0.0 : *std::max_element(energy.begin(), energy.end());
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < starts.size(); ++j) {
    if (energy[j] > top - kStoiDynRange) keep.push_back(j);
  }
  const std::size_t len = keep.empty() ? 0 : (keep.size() - 1) * hop + kStoiFrame;
  std::vector<double> xs(len, 0.0), ys(len, 0.0);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::size_t src = starts[keep[k]];
    for (int i = 0; i < kStoiFrame; ++i) {
      xs[k * hop + i] += w[i] * x[src + i];
      ys[k * hop + i] += w[i] * y[src + i];
    }
  }
  x.swap(xs);
  y.swap(ys);
}

// Third-octave band magnitudes, [band][frame].
std::vector<std::vector<double>> third_octave(const std::vector<double>& x) {
  const auto w = stoi_window();
  const int hop = kStoiFrame / 2;
  const int bins = kStoiFft / 2 + 1;
  // Band edges as FFT bin indices nearest to the edge frequencies.
  std::vector<int> lo(kStoiBands), hi(kStoiBands);
  for (int b = 0; b < kStoiBands; ++b) {
    const double fl = kStoiMinFreq * std::pow(2.0, (2.0 * b - 1.0) / 6.0);
    const double fh = kStoiMinFreq * std::pow(2.0, (2.0 * b + 1.0) / 6.0);
    const auto nearest = [&](double f) {
      int best = 0;
      double err = 1e300;
      for (int k = 0; k < bins; ++k) {
        const double e = std::abs(static_cast<double>(k) * kStoiRate / kStoiFft - f);
        if (e < err) {
          err = e;
          best = k;
        }
      }
      return best;
    };
    lo[b] = nearest(fl);
    hi[b] = nearest(fh);
  }
  RealFft<double> fft(kStoiFft);
  std::vector<double> buf(kStoiFft, 0.0);
  std::vector<std::complex<double>> spec(bins);
  std::vector<std::vector<double>> out(kStoiBands);
  for (std::size_t s = 0; s + kStoiFrame < x.size(); s += hop) {
    for (int i = 0; i < kStoiFrame; ++i) buf[i] = w[i] * x[s + i];
    fft.forward(buf, spec);
    for (int b = 0; b < kStoiBands; ++b) {
      double acc = 0.0;
      for (int k = lo[b]; k < hi[b]; ++k) acc += std::norm(spec[k]);
      out[b].push_back(std::sqrt(acc));
    }
  }
  return out;
}

}  // namespace

double stoi(const AudioBuffer& clean, const AudioBuffer& est) {
  if (clean.samples.size() != est.samples.size()) {
    throw DomainError("stoi: signal lengths differ");
  }
  if (clean.sample_rate != est.sample_rate) {
    throw DomainError("stoi: sample rates differ");
  }
  std::vector<double> x = resample(clean, kStoiRate).samples;
  std::vector<double> y = resample(est, kStoiRate).samples;
  remove_silent(x, y);
  const auto xb = third_octave(x);
  const auto yb = third_octave(y);
  const std::size_t frames = xb[0].size();
  if (frames < static_cast<std::size_t>(kStoiSegment)) {
    throw DomainError("stoi: signal too short after silence removal");
  }
  const double clip = std::pow(10.0, -kStoiBeta / 20.0);
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> xs(kStoiSegment), ys(kStoiSegment);
  for (std::size_t m = kStoiSegment; m <= frames; ++m) {
    for (int b = 0; b < kStoiBands; ++b) {
      double nx = 0.0, ny = 0.0;
      for (int j = 0; j < kStoiSegment; ++j) {
        xs[j] = xb[b][m - kStoiSegment + j];
        ys[j] = yb[b][m - kStoiSegment + j];
        nx += xs[j] * xs[j];
        ny += ys[j] * ys[j];
      }
      const double alpha = std::sqrt(nx) / (std::sqrt(ny) + kMachEps);
      for (int j = 0; j < kStoiSegment; ++j) {
        ys[j] = std::min(ys[j] * alpha, xs[j] * (1.0 + clip));
      }
      double mx = 0.0, my = 0.0;
      for (int j = 0; j < kStoiSegment; ++j) {
        mx += xs[j];
        my += ys[j];
      }
      mx /= kStoiSegment;
      my /= kStoiSegment;
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (int j = 0; j < kStoiSegment; ++j) {
        const double a = xs[j] - mx;
        const double c = ys[j] - my;
        sxy += a * c;
        sxx += a * a;
        syy += c * c;
      }
      total += sxy / ((std::sqrt(sxx) + kMachEps) * (std::sqrt(syy) + kMachEps));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double si_sdr(std::span<const double> s, std::span<const double> e) {
  if (s.size() != e.size()) throw DomainError("si_sdr: signal lengths differ");
  double se = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    se += s[i] * e[i];
    ss += s[i] * s[i];
  }
  if (!(ss > 0.0)) throw DomainError("si_sdr: clean reference is silent");
  const double a = se / ss;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = a * s[i];
    num += t * t;
    den += (e[i] - t) * (e[i] - t);
  }
  if (den <= 0.0) return kSiSdrCapDb;
  if (num <= 0.0) return -kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kSiSdrCapDb, kSiSdrCapDb);
}

Summary summarize(std::vector<double> v) {
  Summary s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  const auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const std::size_t i = static_cast<std::size_t>(std::floor(pos));
    const std::size_t j = std::min(v.size() - 1, i + 1);
    return v[i] + (pos - static_cast<double>(i)) * (v[j] - v[i]);
  };
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.median = q(0.5);
  s.q1 = q(0.25);
  s.q3 = q(0.75);
  s.min = v.front();
  s.max = v.back();
  return s;
}

std::string EvalReport::csv() const {
  std::string out = "clip,category,subset,stoi,si_sdr_db,stoi_mix,si_sdr_mix_db\n";
  char buf[256];
  for (const auto& c : clips) {
    std::snprintf(buf, sizeof buf, ",%s,%s,%.6f,%.4f,%.6f,%.4f\n",
                  to_string(c.category), subset_tag(c.category), c.stoi,
                  c.si_sdr_db, c.stoi_mix, c.si_sdr_mix_db);
    out += c.clip + buf;
  }
  return out;
}

std::string EvalReport::summary() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-6s %-13s %6s %9s %9s %9s %9s %9s %9s\n",
                "subset", "metric", "n", "mean", "median", "q1", "q3", "min",
                "max");
  out += buf;
  for (const auto& s : subsets) {
    const std::pair<const char*, const Summary*> rows[] = {
        {"stoi", &s.stoi},
        {"stoi_mix", &s.stoi_mix},
        {"si_sdr_db", &s.si_sdr},
        {"si_sdr_mix_db", &s.si_sdr_mix}};
    for (const auto& [name, m] : rows) {
      std::snprintf(buf, sizeof buf,
                    "%-6s %-13s %6zu %9.3f %9.3f %9.3f %9.3f %9.3f %9.3f\n",
                    s.subset.c_str(), name, s.count, m->mean, m->median, m->q1,
                    m->q3, m->min, m->max);
      out += buf;
    }
  }
  return out;
}

EvalReport evaluate(const Model& model, const Manifest& manifest,
                    const EmbeddingMap& embeddings, int jobs) {
  const bool personal = uses_embedding(model.config().variant);
  if (personal) {
    std::vector<std::string> missing;
    for (const auto& r : manifest.rows) {
      if (!embeddings.count(r.target_speaker) &&
          std::find(missing.begin(), missing.end(), r.target_speaker) == missing.end()) {
        missing.push_back(r.target_speaker);
      }
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw UsageError("no embedding for speaker(s): " + list);
    }
  }
  const Enhancer<float> enhancer(model);
  EvalReport report;
  report.clips.resize(manifest.rows.size());
  parallel_for(manifest.rows.size(), resolve_jobs(jobs), [&](std::size_t i) {
    const ManifestRow& r = manifest.rows[i];
    const AudioBuffer mix = read_wav(manifest.resolve(r.clip));
    const AudioBuffer clean = read_wav(manifest.resolve(r.clean));
    const SpeakerEmbedding* emb = personal ? &embeddings.at(r.target_speaker) : nullptr;
    const AudioBuffer est = enhancer.enhance_streaming(mix, emb);
    ClipScore& c = report.clips[i];
    c.clip = r.clip;
    c.category = r.category;
    c.stoi = stoi(clean, est);
    c.si_sdr_db = si_sdr(clean, est);
    c.stoi_mix = stoi(clean, mix);
    c.si_sdr_mix_db = si_sdr(clean, mix);
  });
  for (auto cat : kAllCategories) {
    SubsetReport s;
    s.subset = subset_tag(cat);
    std::vector<double> a, b, c, d;
    for (const auto& clip : report.clips) {
      if (clip.category != cat) continue;
      a.push_back(clip.stoi);
      b.push_back(clip.si_sdr_db);
      c.push_back(clip.stoi_mix);
      d.push_back(clip.si_sdr_mix_db);
    }
    s.count = a.size();
    s.stoi = summarize(a);
    s.si_sdr = summarize(b);
    s.stoi_mix = summarize(c);
    s.si_sdr_mix = summarize(d);
    report.subsets.push_back(s);
  }
  return report;
}

std::string ComplexityReport::csv_row() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%zu,%.0f,%.6f", variant.c_str(), params,
                macs_per_s, rtf);
  return buf;
}

namespace {

SpeakerEmbedding bench_embedding(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SpeakerEmbedding e;
  e.values.resize(kEmbeddingDim);
  for (double& v : e.values) v = standard_normal(rng);
  return e.normalized();
}

}  // namespace

ComplexityReport measure_rtf(const Model& model, double seconds, int reps,
                             std::uint64_t seed) {
  if (!(seconds > 0.0) || reps < 1) {
    throw ConfigError("rtf measurement needs positive duration and repetitions");
  }
  const int sr = model.config().dsp.sample_rate;
  AudioBuffer audio;
  audio.sample_rate = sr;
  audio.samples.resize(static_cast<std::size_t>(std::lround(seconds * sr)));
  std::mt19937_64 rng(seed);
  for (double& v : audio.samples) v = 0.1 * standard_normal(rng);
  const SpeakerEmbedding emb = bench_embedding(seed);
  const SpeakerEmbedding* e = uses_embedding(model.config().variant) ? &emb : nullptr;
  const Enhancer<float> enhancer(model);

  AudioBuffer warm = audio;
  warm.samples.resize(std::min<std::size_t>(audio.samples.size(), sr));
  enhancer.enhance_streaming(warm, e);

  std::vector<double> ratios;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const AudioBuffer out = enhancer.enhance_streaming(audio, e);
    const auto t1 = std::chrono::steady_clock::now();
    if (out.samples.size() != audio.samples.size()) {
      throw Error("streaming output length mismatch");
    }
    ratios.push_back(std::chrono::duration<double>(t1 - t0).count() / seconds);
  }
  ComplexityReport rep;
  rep.variant = to_string(model.config().variant);
  rep.params = model.param_count();
  rep.macs_per_s = model.macs_per_second();
  rep.rtf = summarize(ratios).median;
  return rep;
}

namespace {

constexpr int kMelBands = 48;
constexpr double kEmbedFrameS = 0.025;
constexpr double kEmbedHopS = 0.010;
constexpr double kEmbedActiveDb = 40.0;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

SpeakerEmbedding toy_embed(const AudioBuffer& a) {
  validate(a);
  if (a.seconds() < 2.0) throw DomainError("enrollment must be at least 2 s");
  const int sr = a.sample_rate;
  const int frame = static_cast<int>(std::lround(kEmbedFrameS * sr));
  const int hop = static_cast<int>(std::lround(kEmbedHopS * sr));
  int nfft = 1;
  while (nfft < frame) nfft *= 2;
  const int bins = nfft / 2 + 1;

  // Triangular mel filters from 20 Hz to Nyquist.
  std::vector<double> edges(kMelBands + 2);
  const double m0 = hz_to_mel(20.0), m1 = hz_to_mel(sr / 2.0);
  for (int i = 0; i < kMelBands + 2; ++i) {
    edges[i] = mel_to_hz(m0 + (m1 - m0) * i / (kMelBands + 1));
  }
  std::vector<std::vector<double>> fb(kMelBands, std::vector<double>(bins, 0.0));
  for (int b = 0; b < kMelBands; ++b) {
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sr / nfft;
      const double up = (f - edges[b]) / (edges[b + 1] - edges[b]);
      const double down = (edges[b + 2] - f) / (edges[b + 2] - edges[b + 1]);
      fb[b][k] = std::max(0.0, std::min(up, down));
    }
  }
  std::vector<double> win(frame);
  for (int i = 0; i < frame; ++i) win[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / frame);

  RealFft<double> fft(nfft);
  std::vector<double> buf(nfft, 0.0);
  std::vector<std::complex<double>> spec(bins);
  std::vector<std::array<double, kMelBands>> feats;
  std::vector<double> energy;
  for (std::size_t s = 0; s + frame <= a.samples.size(); s += hop) {
    double e = 0.0;
    for (int i = 0; i < frame; ++i) {
      buf[i] = win[i] * a.samples[s + i];
      e += buf[i] * buf[i];
    }
    fft.forward(buf, spec);
    std::array<double, kMelBands> f{};
    double mean = 0.0;
    for (int b = 0; b < kMelBands; ++b) {
      double acc = 0.0;
      for (int k = 0; k < bins; ++k) acc += fb[b][k] * std::norm(spec[k]);
      f[b] = std::log(acc + 1e-10);
      mean += f[b];
    }
    mean /= kMelBands;
    for (double& v : f) v -= mean;  // remove the frame level
    feats.push_back(f);
    energy.push_back(10.0 * std::log10(e + 1e-20));
  }
  const double top = *std::max_element(energy.begin(), energy.end());
  std::vector<std::size_t> active;
  for (std::size_t t = 0; t < feats.size(); ++t) {
    if (energy[t] > top - kEmbedActiveDb) active.push_back(t);
  }
  // Static and delta features over active frames, neighbours clamped.
  std::vector<double> sum(2 * kMelBands, 0.0), sq(2 * kMelBands, 0.0);
  for (std::size_t t : active) {
    const std::size_t prev = t == 0 ? 0 : t - 1;
    const std::size_t next = std::min(feats.size() - 1, t + 1);
    for (int b = 0; b < kMelBands; ++b) {
      const double s = feats[t][b];
      const double d = 0.5 * (feats[next][b] - feats[prev][b]);
      sum[b] += s;
      sq[b] += s * s;
      sum[kMelBands + b] += d;
      sq[kMelBands + b] += d * d;
    }
  }
  const double n = static_cast<double>(active.size());
  SpeakerEmbedding emb;
  emb.values.resize(kEmbeddingDim);
  for (int i = 0; i < 2 * kMelBands; ++i) {
    const double mean = sum[i] / n;
    emb.values[i] = mean;
    emb.values[2 * kMelBands + i] = std::sqrt(std::max(0.0, sq[i] / n - mean * mean));
  }
  return emb.normalized();
}

void save_embedding(const fs::path& path, const SpeakerEmbedding& e) {
  e.validate();
  std::string bytes(kEmbeddingDim * 4, '\0');
  for (int i = 0; i < kEmbeddingDim; ++i) {
    const float f = static_cast<float>(e.values[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int k = 0; k < 4; ++k) bytes[4 * i + k] = static_cast<char>((u >> (8 * k)) & 0xFF);
  }
  write_file_atomic(path, bytes);
}

SpeakerEmbedding parse_embedding(const std::string& bytes) {
  SpeakerEmbedding e;
  if (bytes.size() == static_cast<std::size_t>(kEmbeddingDim) * 4) {
    e.values.resize(kEmbeddingDim);
    for (int i = 0; i < kEmbeddingDim; ++i) {
      std::uint32_t u = 0;
      for (int k = 0; k < 4; ++k) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k);
      }
      float f;
      std::memcpy(&f, &u, 4);
      e.values[i] = f;
    }
  } else {
    const ParamStore store = parse_container(bytes);
    if (!store.contains("embedding")) {
      throw FormatError("embedding container has no 'embedding' tensor");
    }
    const Tensor& t = store.at("embedding");
    if (t.shape() != Tensor::Shape{static_cast<std::size_t>(kEmbeddingDim)}) {
      throw FormatError("embedding tensor must have shape [192], got " +
                        shape_string(t.shape()));
    }
    e.values = t.vec();
  }
  try {
    e.validate();
  } catch (const DomainError& err) {
    throw FormatError(std::string("invalid embedding: ") + err.what());
  }
  if (!(e.norm() > 0.0)) throw FormatError("invalid embedding: zero vector");
  return e.normalized();
}

SpeakerEmbedding load_embedding(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open embedding: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_embedding(ss.str());
  } catch (const FormatError& e) {
    throw e.prefixed(path.string());
  }
}

EmbeddingMap load_embeddings_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".emb") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  EmbeddingMap out;
  for (const auto& f : files) out[f.stem().string()] = load_embedding(f);
  return out;
}

}  // namespace pse

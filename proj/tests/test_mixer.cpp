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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "pse/error.hpp"
#include "pse/metrics.hpp"
#include "pse/mixer.hpp"
#include "pse/random.hpp"
#include "pse/toy.hpp"
#include "test_util.hpp"

namespace pse {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CorpusIndex fake_corpus(std::size_t len) {
  CorpusIndex c;
  c.sample_rate = 16000;
  for (int s = 0; s < 3; ++s) {
    for (int f = 0; f < 2; ++f) {
      SourceFile src{"x.wav", "spk" + std::to_string(s), len};
      c.targets.push_back(src);
      c.interferers.push_back(src);
    }
  }
  c.noises.push_back({"n.wav", "n", len});
  return c;
}

AudioBuffer sine(double f, std::size_t n, int sr, double amp = 0.5) {
  AudioBuffer a;
  a.sample_rate = sr;
  a.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.samples[i] = amp * std::sin(2 * M_PI * f * i / sr);
  return a;
}

TEST(Category, NamesAndTags) {
  for (auto c : kAllCategories) EXPECT_EQ(parse_category(to_string(c)), c);
  EXPECT_STREQ(subset_tag(MixCategory::kTargetNoise), "pn");
  EXPECT_STREQ(subset_tag(MixCategory::kTargetInterferer), "ps");
  EXPECT_STREQ(subset_tag(MixCategory::kTargetInterfererNoise), "psn");
  EXPECT_THROW(parse_category("noise_only"), FormatError);
  EXPECT_THROW(parse_draw_mode("laplace"), ConfigError);
}

TEST(Distribution, Validation) {
  CategoryDistribution d;
  EXPECT_NO_THROW(d.validate());
  d.weights = {0.5, 0.5, 0.5};
  EXPECT_THROW(d.validate(), ConfigError);
  d.weights = {-0.1, 0.6, 0.5};
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(DrawMixSpec, CategoryFrequencies) {
  const CorpusIndex c = fake_corpus(100000);
  std::mt19937_64 rng(42);
  std::array<int, 3> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const MixSpec s = draw_mix_spec(rng, {}, c, 16000);
    ++counts[static_cast<int>(s.category)];
    EXPECT_EQ(s.snr_db.has_value(), has_noise(s.category));
    EXPECT_EQ(s.sir_db.has_value(), has_interferer(s.category));
  }
  // Binomial sd at n = 10000 is under 0.5 points; the bound is 2 points.
  EXPECT_NEAR(counts[0] / double(n), 0.20, 0.02);
  EXPECT_NEAR(counts[1] / double(n), 0.30, 0.02);
  EXPECT_NEAR(counts[2] / double(n), 0.50, 0.02);
}

TEST(DrawLevel, GaussianIsTruncatedAroundMidpoint) {
  std::mt19937_64 rng(7);
  double sum = 0.0, sum_sir = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double snr = draw_level(rng, kSnrMinDb, kSnrMaxDb, DrawMode::kGaussian);
    const double sir = draw_level(rng, kSirMinDb, kSirMaxDb, DrawMode::kGaussian);
    ASSERT_GE(snr, -5.0);
    ASSERT_LE(snr, 35.0);
    ASSERT_GE(sir, -5.0);
    ASSERT_LE(sir, 25.0);
    sum += snr;
    sum_sir += sir;
  }
  // Symmetric truncation keeps the mean at the midpoint.
  EXPECT_NEAR(sum / n, 15.0, 1.0);
  EXPECT_NEAR(sum_sir / n, 10.0, 1.0);
}

TEST(DrawLevel, GaussianSpreadMatchesTruncatedNormal) {
  // Truncation at +-2 sd: variance = sd^2 (1 - 2 * 2 phi(2) / (2 Phi(2) - 1)).
  const double phi2 = std::exp(-2.0) / std::sqrt(2 * M_PI);
  const double mass = std::erf(2.0 / std::sqrt(2.0));
  const double expect_sd = 10.0 * std::sqrt(1.0 - 4.0 * phi2 / mass);
  std::mt19937_64 rng(9);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = draw_level(rng, -5, 35, DrawMode::kGaussian);
    s += v;
    s2 += v * v;
  }
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  EXPECT_NEAR(sd, expect_sd, 0.2);
}

TEST(DrawLevel, UniformCoversInterval) {
  std::mt19937_64 rng(3);
  double lo = 1e9, hi = -1e9, sum = 0;
  for (int i = 0; i < 10000; ++i) {
    const double v = draw_level(rng, -5, 35, DrawMode::kUniform);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  EXPECT_GE(lo, -5.0);
  EXPECT_LT(lo, -4.9);
  EXPECT_LE(hi, 35.0);
  EXPECT_GT(hi, 34.9);
  EXPECT_NEAR(sum / 10000, 15.0, 0.5);
}

TEST(DrawMixSpec, SameSeedSameSequence) {
  const CorpusIndex c = fake_corpus(50000);
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 200; ++i) {
    const MixSpec x = draw_mix_spec(a, {}, c, 16000);
    const MixSpec y = draw_mix_spec(b, {}, c, 16000);
    EXPECT_EQ(x.category, y.category);
    EXPECT_EQ(x.snr_db, y.snr_db);
    EXPECT_EQ(x.sir_db, y.sir_db);
    EXPECT_EQ(x.target, y.target);
    EXPECT_EQ(x.interferer, y.interferer);
    EXPECT_EQ(x.target_offset, y.target_offset);
  }
}

TEST(DrawMixSpec, NeverPairsSameSpeaker) {
  const CorpusIndex c = fake_corpus(50000);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const MixSpec s = draw_mix_spec(rng, {}, c, 16000);
    if (s.interferer) {
      EXPECT_NE(c.targets[s.target].speaker, c.interferers[*s.interferer].speaker);
    }
    EXPECT_LE(s.target_offset + 16000, c.targets[s.target].length);
  }
}

TEST(DrawMixSpec, EmptyRolesAreUsageErrors) {
  CorpusIndex c = fake_corpus(50000);
  std::mt19937_64 rng(1);
  CategoryDistribution only_noise;
  only_noise.weights = {1.0, 0.0, 0.0};
  c.noises.clear();
  EXPECT_THROW(draw_mix_spec(rng, only_noise, c, 100), UsageError);
  c = fake_corpus(50000);
  CategoryDistribution only_interf;
  only_interf.weights = {0.0, 1.0, 0.0};
  for (auto& s : c.interferers) s.speaker = "spk0";
  for (auto& s : c.targets) s.speaker = "spk0";
  EXPECT_THROW(draw_mix_spec(rng, only_interf, c, 100), UsageError);
  c.targets.clear();
  EXPECT_THROW(draw_mix_spec(rng, {}, c, 100), UsageError);
}

// Independent active power: 10 ms blocks, keep blocks within 50 dB of the
// loudest, average power over kept samples.
TEST(ActivePower, MatchesOracleAndIgnoresSilence) {
  auto a = test::noise(16000, 4, 16000, 0.2);
  for (std::size_t i = 4000; i < 9000; ++i) a.samples[i] *= 1e-4;  // -80 dB gap
  EXPECT_NEAR(active_power(a.samples, 16000),
              oracle::active_power(a.samples, 16000), 1e-15);
  auto b = a;
  b.samples.resize(4000);
  EXPECT_NEAR(active_power(a.samples, 16000), active_power(b.samples, 16000),
              0.06 * active_power(b.samples, 16000));
  EXPECT_EQ(active_power(std::vector<double>(100, 0.0), 16000), 0.0);
}

TEST(ScaleForSnr, Examples) {
  const auto t = test::noise(16000, 1, 16000, 0.1);
  EXPECT_NEAR(scale_for_snr(t, t, 10.0), 0.31623, 1e-5);
  EXPECT_NEAR(scale_for_snr(t, t, 0.0), 1.0, 1e-12);
  const auto c = test::noise(16000, 2, 16000, 0.37);
  for (double level : {-5.0, 0.0, 12.5, 35.0}) {
    const double g = scale_for_snr(t, c, level);
    AudioBuffer scaled = c;
    for (double& v : scaled.samples) v *= g;
    const double measured = 10 * std::log10(oracle::active_power(t.samples, 16000) /
                                            oracle::active_power(scaled.samples, 16000));
    EXPECT_NEAR(measured, level, 0.1);
  }
  AudioBuffer silent;
  silent.sample_rate = 16000;
  silent.samples.assign(16000, 0.0);
  EXPECT_THROW(scale_for_snr(t, silent, 0.0), DomainError);
  EXPECT_THROW(scale_for_snr(silent, t, 0.0), DomainError);
}

MixSpec spec_of(MixCategory c, double snr, double sir) {
  MixSpec s;
  s.category = c;
  if (has_noise(c)) {
    s.snr_db = snr;
    s.noise = 0;
  }
  if (has_interferer(c)) {
    s.sir_db = sir;
    s.interferer = 0;
  }
  return s;
}

TEST(Synthesize, HighSnrIsNearlyClean) {
  const auto t = sine(440, 32000, 16000);
  const auto n = test::noise(32000, 3, 16000, 0.3);
  const auto r = synthesize_mixture(spec_of(MixCategory::kTargetNoise, 35, 0), t,
                                    nullptr, &n, 32000);
  EXPECT_GE(oracle::si_sdr(r.clean.samples, r.mixture.samples), 30.0);
}

TEST(Synthesize, MeasuredLevelsMatchSpec) {
  std::mt19937_64 rng(4);
  const auto t = test::noise(32000, 5, 16000, 0.2);
  const auto i = sine(700, 32000, 16000, 0.9);
  const auto n = test::noise(32000, 6, 16000, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    const double snr = draw_level(rng, -5, 35, DrawMode::kUniform);
    const double sir = draw_level(rng, -5, 25, DrawMode::kUniform);
    const auto r = synthesize_mixture(
        spec_of(MixCategory::kTargetInterfererNoise, snr, sir), t, &i, &n, 32000);
    AudioBuffer signal = r.clean;
    for (std::size_t k = 0; k < signal.samples.size(); ++k) {
      signal.samples[k] += r.interferer.samples[k];
    }
    EXPECT_NEAR(10 * std::log10(oracle::active_power(r.clean.samples, 16000) /
                                oracle::active_power(r.interferer.samples, 16000)),
                sir, 0.1);
    EXPECT_NEAR(10 * std::log10(oracle::active_power(signal.samples, 16000) /
                                oracle::active_power(r.noise.samples, 16000)),
                snr, 0.1);
    // Mixture is exactly the sum of its parts.
    for (std::size_t k = 0; k < 32000; k += 997) {
      EXPECT_NEAR(r.mixture.samples[k], signal.samples[k] + r.noise.samples[k], 1e-15);
    }
  }
}

TEST(Synthesize, PeakLimitedWithSharedScale) {
  const auto t = sine(300, 16000, 16000, 0.95);
  const auto i = sine(500, 16000, 16000, 0.95);
  const auto r = synthesize_mixture(spec_of(MixCategory::kTargetInterferer, 0, -5),
                                    t, &i, nullptr, 16000);
  double peak = 0;
  for (double v : r.mixture.samples) peak = std::max(peak, std::abs(v));
  EXPECT_LE(peak, 0.99 + 1e-12);
  EXPECT_LT(r.peak_scale, 1.0);
  // The clean output is the target scaled by the same factor.
  for (std::size_t k = 0; k < 16000; k += 101) {
    EXPECT_NEAR(r.clean.samples[k], r.peak_scale * t.samples[k], 1e-15);
  }
  EXPECT_NEAR(10 * std::log10(oracle::active_power(r.clean.samples, 16000) /
                              oracle::active_power(r.interferer.samples, 16000)),
              -5.0, 0.1);
}

TEST(Synthesize, SilentTargetIsDomainError) {
  AudioBuffer t;
  t.sample_rate = 16000;
  t.samples.assign(16000, 0.0);
  const auto n = test::noise(16000, 1, 16000);
  EXPECT_THROW(synthesize_mixture(spec_of(MixCategory::kTargetNoise, 5, 0), t,
                                  nullptr, &n, 16000),
               DomainError);
}

TEST(Manifest, FormatParseRoundTrip) {
  std::vector<ManifestRow> rows(2);
  rows[0] = {"mix/00000.wav", "clean/00000.wav", MixCategory::kTargetNoise,
             12.3456, std::nullopt, "spk_0", std::nullopt, 99};
  rows[1] = {"mix/00001.wav", "clean/00001.wav", MixCategory::kTargetInterferer,
             std::nullopt, -3.25, "spk_1", "spk_0", 18446744073709551615ull};
  const std::string text = format_manifest(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "clip\tclean\tcategory\tsnr_db\tsir_db\ttarget_speaker\t"
            "interferer_speaker\tseed");
  EXPECT_NE(text.find("\tNA\t"), std::string::npos);
  const auto back = parse_manifest(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].snr_db, 12.3456);
  EXPECT_FALSE(back[0].sir_db);
  EXPECT_EQ(back[1].interferer_speaker, "spk_0");
  EXPECT_EQ(back[1].seed, 18446744073709551615ull);
  EXPECT_EQ(format_manifest(back), text);
}

TEST(Manifest, RejectsMalformed) {
  EXPECT_THROW(parse_manifest("bogus header\n"), FormatError);
  const std::string h =
      "clip\tclean\tcategory\tsnr_db\tsir_db\ttarget_speaker\tinterferer_speaker\tseed\n";
  EXPECT_THROW(parse_manifest(h + "a\tb\ttarget_noise\t1\tNA\ts\tNA\n"), FormatError);
  EXPECT_THROW(parse_manifest(h + "a\tb\tother\t1\tNA\ts\tNA\t1\n"), FormatError);
  EXPECT_THROW(parse_manifest(h + "a\tb\ttarget_noise\tx\tNA\ts\tNA\t1\n"), FormatError);
  EXPECT_THROW(parse_manifest(h + "a\tb\ttarget_noise\t1\tNA\ts\tNA\t-1x\n"), FormatError);
}

TEST(ClipCount, HoursOverClipLength) {
  DatasetOptions o;
  o.hours = 0.1;
  o.clip_seconds = 5.0;
  EXPECT_EQ(clip_count(o), 72u);
}

class DatasetTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir();
    ToyCorpusOptions o;
    o.file_seconds = 6.0;
    o.files_per_speaker = 2;
    o.noise_files = 2;
    o.enroll_seconds = 3.0;
    o.seed = 1;
    corpus_ = new ToyCorpus(make_toy_corpus(dir_->path() / "corpus", o));
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete dir_;
  }
  CorpusIndex index(double clip) const {
    return index_corpus(corpus_->speech_dir, corpus_->speech_dir,
                        corpus_->noise_dir, clip);
  }
  static test::TempDir* dir_;
  static ToyCorpus* corpus_;
};
test::TempDir* DatasetTest::dir_ = nullptr;
ToyCorpus* DatasetTest::corpus_ = nullptr;

TEST_F(DatasetTest, IndexesSpeakersFromFolders) {
  const CorpusIndex c = index(2.0);
  EXPECT_EQ(c.sample_rate, 16000);
  ASSERT_EQ(c.targets.size(), 4u);
  EXPECT_EQ(c.targets[0].speaker, "spk_0");
  EXPECT_EQ(c.targets[3].speaker, "spk_1");
  EXPECT_EQ(c.noises.size(), 2u);
  // Files shorter than the clip length are skipped.
  EXPECT_TRUE(index(7.0).targets.empty());
}

TEST_F(DatasetTest, UnreadableFilesAreSkipped) {
  const fs::path extra = dir_->path() / "extra";
  fs::create_directories(extra / "spk_9");
  fs::copy_file(corpus_->speech_dir / "spk_0" / "utt_00.wav",
                extra / "spk_9" / "good.wav");
  std::ofstream(extra / "spk_9" / "bad.wav") << "not a wav file";
  const CorpusIndex c = index_corpus(extra, "", "", 1.0);
  ASSERT_EQ(c.targets.size(), 1u);
  EXPECT_EQ(c.targets[0].path.filename(), "good.wav");
  EXPECT_THROW(generate_dataset(index_corpus(corpus_->noise_dir / "none", "", "", 1.0),
                                {}, dir_->path() / "x"),
               UsageError);
}

TEST_F(DatasetTest, GeneratesConsistentDeterministicClips) {
  const CorpusIndex c = index(2.0);
  DatasetOptions o;
  o.hours = 40.0 / 3600.0;
  o.clip_seconds = 2.0;
  o.seed = 7;
  o.jobs = 1;
  const fs::path a = dir_->path() / "set_a";
  const fs::path b = dir_->path() / "set_b";
  const Manifest m = generate_dataset(c, o, a);
  o.jobs = 3;
  generate_dataset(c, o, b);
  ASSERT_EQ(m.rows.size(), 20u);
  const std::string text = slurp(a / kManifestName);
  EXPECT_EQ(text, slurp(b / kManifestName));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 21);
  const Manifest back = read_manifest(a / kManifestName);
  ASSERT_EQ(back.rows.size(), 20u);
  for (const auto& r : back.rows) {
    ASSERT_TRUE(fs::exists(back.resolve(r.clip)));
    ASSERT_TRUE(fs::exists(back.resolve(r.clean)));
    EXPECT_EQ(slurp(a / r.clip), slurp(b / r.clip));
    if (r.interferer_speaker) {
      EXPECT_NE(*r.interferer_speaker, r.target_speaker);
    }
    const AudioBuffer mix = read_wav(back.resolve(r.clip));
    const AudioBuffer clean = read_wav(back.resolve(r.clean));
    EXPECT_EQ(mix.samples.size(), 32000u);
    double peak = 0;
    for (double v : mix.samples) peak = std::max(peak, std::abs(v));
    EXPECT_LE(peak, 0.99 + 1e-6);
    // Two-source clips: the contaminant is mixture minus clean.
    if (r.category != MixCategory::kTargetInterfererNoise) {
      std::vector<double> rest(mix.samples.size());
      for (std::size_t k = 0; k < rest.size(); ++k) rest[k] = mix.samples[k] - clean.samples[k];
      const double level = 10 * std::log10(oracle::active_power(clean.samples, 16000) /
                                           oracle::active_power(rest, 16000));
      EXPECT_NEAR(level, r.snr_db ? *r.snr_db : *r.sir_db, 0.1) << r.clip;
    }
  }
  // A clip depends only on (seed, index).
  const GeneratedClip g = make_clip(c, o, 13);
  EXPECT_EQ(g.spec.seed, back.rows[13].seed);
  EXPECT_EQ(g.spec.category, back.rows[13].category);
}

}  // namespace
}  // namespace pse

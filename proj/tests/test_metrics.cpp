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
#include <complex>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "pse/error.hpp"
#include "pse/metrics.hpp"
#include "pse/random.hpp"
#include "pse/toy.hpp"
#include "test_util.hpp"

namespace pse {
namespace {

namespace fs = std::filesystem;

AudioBuffer toy_speech(int speaker, double seconds, int sr, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return synth_toy_speech(speaker, seconds, sr, rng);
}

TEST(Stoi, IdentityIsOne) {
  const auto x = toy_speech(0, 3.0, 16000, 1);
  EXPECT_NEAR(stoi(x, x), 1.0, 1e-6);
}

TEST(Stoi, ScaleInvariant) {
  const auto x = toy_speech(1, 3.0, 16000, 2);
  auto half = x;
  for (double& v : half.samples) v *= 0.5;
  EXPECT_NEAR(stoi(x, half), stoi(x, x), 1e-12);
  auto noisy = x;
  const auto n = test::noise(x.samples.size(), 3, 16000, 0.05);
  for (std::size_t i = 0; i < x.samples.size(); ++i) noisy.samples[i] += n.samples[i];
  auto noisy_half = noisy;
  for (double& v : noisy_half.samples) v *= 0.5;
  EXPECT_NEAR(stoi(x, noisy), stoi(x, noisy_half), 1e-9);
}

// Reference value from pystoi 0.4.1 on the same float64 pair.
TEST(Stoi, SpeechAgainstNoiseMatchesReference) {
  std::mt19937_64 r(0);
  const auto x = synth_toy_speech(0, 4.0, 10000, r);
  auto n = x;
  std::mt19937_64 q(99);
  for (double& v : n.samples) v = 0.1 * standard_normal(q);
  EXPECT_NEAR(stoi(x, n), 0.284860684354, 1e-9);
}

TEST(Stoi, DegradesWithNoise) {
  const auto x = toy_speech(0, 3.0, 16000, 6);
  const auto n = test::noise(x.samples.size(), 7, 16000, 1.0);
  double prev = 1.1;
  for (double g : {0.01, 0.05, 0.2}) {
    auto y = x;
    for (std::size_t i = 0; i < y.samples.size(); ++i) y.samples[i] += g * n.samples[i];
    const double s = stoi(x, y);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(Stoi, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(21);
  for (int pair = 0; pair < 20; ++pair) {
    const auto x = toy_speech(pair % 2, 1.2, 10000, 100 + pair);
    auto y = x;
    const double g = 0.02 + 0.3 * unit_uniform(rng);
    const auto n = test::noise(x.samples.size(), 200 + pair, 10000, g);
    for (std::size_t i = 0; i < y.samples.size(); ++i) y.samples[i] += n.samples[i];
    EXPECT_NEAR(stoi(x, y), oracle::stoi(x.samples, y.samples), 1e-6) << pair;
  }
}

TEST(Stoi, Errors) {
  const auto x = toy_speech(0, 3.0, 16000, 8);
  auto y = x;
  y.samples.pop_back();
  EXPECT_THROW(stoi(x, y), DomainError);
  const auto shortx = toy_speech(0, 0.2, 16000, 8);
  EXPECT_THROW(stoi(shortx, shortx), DomainError);
}

TEST(Resample, PassbandSineSurvives) {
  AudioBuffer a;
  a.sample_rate = 16000;
  for (int i = 0; i < 16000; ++i) a.samples.push_back(std::sin(2 * M_PI * 1000.0 * i / 16000));
  const auto r = resample(a, 10000);
  ASSERT_EQ(r.samples.size(), 10000u);
  double worst = 0;
  for (int m = 200; m < 9800; ++m) {
    worst = std::max(worst, std::abs(r.samples[m] - std::sin(2 * M_PI * 1000.0 * m / 10000)));
  }
  EXPECT_LT(worst, 5e-3);
}

TEST(Resample, AboveNewNyquistIsRemoved) {
  AudioBuffer a;
  a.sample_rate = 16000;
  for (int i = 0; i < 16000; ++i) a.samples.push_back(std::sin(2 * M_PI * 7000.0 * i / 16000));
  const auto r = resample(a, 10000);
  double p = 0;
  for (int m = 200; m < 9800; ++m) p += r.samples[m] * r.samples[m];
  p /= 9600;
  EXPECT_LT(10 * std::log10(p / 0.5), -40.0);
  EXPECT_EQ(resample(a, 16000).samples, a.samples);
}

TEST(SiSdr, CapAndScaleInvariance) {
  const auto x = test::noise(4000, 1, 16000);
  EXPECT_EQ(si_sdr(x, x), 80.0);
  auto cx = x;
  for (double& v : cx.samples) v *= -3.7;
  EXPECT_EQ(si_sdr(x, cx), si_sdr(x, x));
  const auto e = test::noise(4000, 2, 16000);
  auto ce = e;
  for (double& v : ce.samples) v *= 2.5;
  EXPECT_NEAR(si_sdr(x, e), si_sdr(x, ce), 1e-9);
}

TEST(SiSdr, OrthogonalEqualPowerIsZeroDb) {
  const auto x = test::noise(4000, 3, 16000);
  auto n = test::noise(4000, 4, 16000);
  // Gram-Schmidt n against x, then match the norm.
  double xn = 0, xx = 0, nn = 0;
  for (std::size_t i = 0; i < 4000; ++i) {
    xn += x.samples[i] * n.samples[i];
    xx += x.samples[i] * x.samples[i];
  }
  for (std::size_t i = 0; i < 4000; ++i) n.samples[i] -= xn / xx * x.samples[i];
  for (double v : n.samples) nn += v * v;
  auto e = x;
  for (std::size_t i = 0; i < 4000; ++i) e.samples[i] += n.samples[i] * std::sqrt(xx / nn);
  EXPECT_NEAR(si_sdr(x, e), 0.0, 1e-9);
}

TEST(SiSdr, MatchesOracle) {
  for (int k = 0; k < 20; ++k) {
    const auto x = test::noise(3000, 10 + k, 16000);
    auto e = test::noise(3000, 50 + k, 16000, 0.01 * (k + 1));
    for (std::size_t i = 0; i < 3000; ++i) e.samples[i] += x.samples[i];
    EXPECT_NEAR(si_sdr(x, e), oracle::si_sdr(x.samples, e.samples), 1e-9);
  }
}

TEST(SiSdr, Errors) {
  const auto x = test::noise(100, 1, 16000);
  const auto y = test::noise(101, 1, 16000);
  EXPECT_THROW(si_sdr(x, y), DomainError);
  AudioBuffer z;
  z.sample_rate = 16000;
  z.samples.assign(100, 0.0);
  EXPECT_THROW(si_sdr(z, x), DomainError);
}

TEST(Summarize, QuartilesInterpolate) {
  const Summary s = summarize({4, 1, 3, 2, 5});
  EXPECT_DOUBLE_EQ(s.mean, 3);
  EXPECT_DOUBLE_EQ(s.median, 3);
  EXPECT_DOUBLE_EQ(s.q1, 2);
  EXPECT_DOUBLE_EQ(s.q3, 4);
  EXPECT_DOUBLE_EQ(s.min, 1);
  EXPECT_DOUBLE_EQ(s.max, 5);
  const Summary t = summarize({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(t.median, 2.5);
  EXPECT_DOUBLE_EQ(t.q1, 1.75);
}

double cosine(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
  double d = 0;
  for (int i = 0; i < kEmbeddingDim; ++i) d += a.values[i] * b.values[i];
  return d;
}

TEST(ToyEmbed, ContractAndSpeakerSeparation) {
  const auto a1 = toy_speech(0, 4.0, 16000, 31);
  const auto a2 = toy_speech(0, 4.0, 16000, 32);
  const auto b1 = toy_speech(1, 4.0, 16000, 33);
  const auto e1 = toy_embed(a1);
  ASSERT_EQ(e1.values.size(), 192u);
  EXPECT_NEAR(e1.norm(), 1.0, 1e-12);
  EXPECT_EQ(toy_embed(a1).values, e1.values);
  const double same = cosine(e1, toy_embed(a2));
  const double diff = cosine(e1, toy_embed(b1));
  EXPECT_GT(same, diff);
  EXPECT_THROW(toy_embed(toy_speech(0, 1.5, 16000, 1)), DomainError);
}

TEST(EmbeddingFile, RawRoundTripAndValidation) {
  test::TempDir dir;
  const auto e = toy_embed(toy_speech(1, 3.0, 16000, 5));
  save_embedding(dir.path() / "a.emb", e);
  EXPECT_EQ(fs::file_size(dir.path() / "a.emb"), 768u);
  const auto back = load_embedding(dir.path() / "a.emb");
  for (int i = 0; i < kEmbeddingDim; ++i) EXPECT_NEAR(back.values[i], e.values[i], 1e-7);
  EXPECT_NEAR(back.norm(), 1.0, 1e-12);

  std::string raw(768, '\0');
  test::put_f32(raw, 0.0f);
  EXPECT_THROW(parse_embedding(raw), FormatError);  // 772 bytes, not a container
  EXPECT_THROW(parse_embedding(std::string(768, '\0')), FormatError);  // zero vector
  std::string nan;
  for (int i = 0; i < 192; ++i) test::put_f32(nan, i == 7 ? std::nanf("") : 1.0f);
  EXPECT_THROW(parse_embedding(nan), FormatError);
  std::string scaled;
  for (int i = 0; i < 192; ++i) test::put_f32(scaled, 3.0f);
  EXPECT_NEAR(parse_embedding(scaled).norm(), 1.0, 1e-12);
}

TEST(EmbeddingFile, ContainerForm) {
  ParamStore s;
  std::vector<double> v(192, 0.0);
  v[3] = 2.0;
  s.set("embedding", Tensor({192}, v));
  const auto e = parse_embedding(serialize_container(s));
  EXPECT_DOUBLE_EQ(e.values[3], 1.0);
  ParamStore bad;
  bad.set("embedding", Tensor({96, 2}, std::vector<double>(192, 1.0)));
  EXPECT_THROW(parse_embedding(serialize_container(bad)), FormatError);
  ParamStore none;
  none.set("other", Tensor({192}, v));
  EXPECT_THROW(parse_embedding(serialize_container(none)), FormatError);
}

ModelConfig eval_config(VariantKind v) {
  ModelConfig cfg;
  cfg.dsp.sample_rate = 16000;
  cfg.dsp.erb_bands = 16;
  cfg.variant = v;
  cfg.conv_channels = 8;
  cfg.erb_gru_hidden = 16;
  cfg.df_gru_hidden = 16;
  return cfg;
}

class EvalTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir();
    ToyCorpusOptions o;
    o.file_seconds = 5.0;
    o.files_per_speaker = 1;
    o.noise_files = 2;
    o.enroll_seconds = 3.0;
    const ToyCorpus c = make_toy_corpus(dir_->path() / "corpus", o);
    const CorpusIndex idx = index_corpus(c.speech_dir, c.speech_dir, c.noise_dir, 3.0);
    DatasetOptions d;
    d.hours = 18.0 / 3600.0;
    d.clip_seconds = 3.0;
    d.seed = 3;
    manifest_ = new Manifest(generate_dataset(idx, d, dir_->path() / "set"));
    for (const auto& s : c.speakers) {
      (*emb_)[s] = toy_embed(read_wav(c.enroll_dir / (s + ".wav")));
    }
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static test::TempDir* dir_;
  static Manifest* manifest_;
  static EmbeddingMap* emb_;
};
test::TempDir* EvalTest::dir_ = nullptr;
Manifest* EvalTest::manifest_ = nullptr;
EmbeddingMap* EvalTest::emb_ = new EmbeddingMap();

TEST_F(EvalTest, IdentityModelScoresLikeMixture) {
  const Model m = make_identity_model(eval_config(VariantKind::kBaseline));
  const EvalReport r = evaluate(m, *manifest_, {}, 1);
  ASSERT_EQ(r.clips.size(), manifest_->rows.size());
  std::size_t total = 0;
  for (const auto& s : r.subsets) total += s.count;
  EXPECT_EQ(total, manifest_->rows.size());
  for (const auto& c : r.clips) {
    EXPECT_NEAR(c.stoi, c.stoi_mix, 1e-4) << c.clip;
    EXPECT_NEAR(c.si_sdr_db, c.si_sdr_mix_db, 0.01) << c.clip;
  }
}

TEST_F(EvalTest, DeterministicAcrossJobs) {
  const Model m = build_model(eval_config(VariantKind::kUnified));
  const EvalReport a = evaluate(m, *manifest_, *emb_, 1);
  const EvalReport b = evaluate(m, *manifest_, *emb_, 3);
  EXPECT_EQ(a.csv(), b.csv());
  EXPECT_EQ(a.summary(), b.summary());
  EXPECT_EQ(a.csv().substr(0, a.csv().find('\n')),
            "clip,category,subset,stoi,si_sdr_db,stoi_mix,si_sdr_mix_db");
  EXPECT_NE(a.summary().find("psn"), std::string::npos);
}

TEST_F(EvalTest, MissingEmbeddingNamesSpeaker) {
  const Model m = build_model(eval_config(VariantKind::kDualBoth));
  EmbeddingMap partial = *emb_;
  partial.erase("spk_1");
  try {
    evaluate(m, *manifest_, partial, 1);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("spk_1"), std::string::npos);
  }
}

TEST(MeasureRtf, ReportsCounters) {
  const Model m = build_model(eval_config(VariantKind::kUnified));
  const ComplexityReport r = measure_rtf(m, 1.0, 1);
  EXPECT_EQ(r.variant, "unified");
  EXPECT_EQ(r.params, m.param_count());
  EXPECT_DOUBLE_EQ(r.macs_per_s, m.macs_per_second());
  EXPECT_GT(r.rtf, 0.0);
  EXPECT_EQ(ComplexityReport::csv_header(), "variant,params,macs_per_s,rtf");
  const std::string row = r.csv_row();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 3);
  EXPECT_THROW(measure_rtf(m, 0.0, 1), ConfigError);
}

}  // namespace
}  // namespace pse

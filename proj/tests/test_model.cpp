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
#include <random>

#include "pse/error.hpp"
#include "pse/model.hpp"
#include "test_util.hpp"

namespace pse {
namespace {

constexpr VariantKind kAll[] = {VariantKind::kBaseline, VariantKind::kUnified,
                                VariantKind::kDualBoth, VariantKind::kDualErb,
                                VariantKind::kDualDf};

SpeakerEmbedding random_embedding(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  SpeakerEmbedding e;
  e.values.resize(kEmbeddingDim);
  for (auto& v : e.values) v = g(rng);
  return e.normalized();
}

// Reduced widths at 16 kHz keep unit tests fast.
ModelConfig small_config(VariantKind v, std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.dsp.sample_rate = 16000;
  cfg.dsp.erb_bands = 16;
  cfg.variant = v;
  cfg.conv_channels = 8;
  cfg.erb_gru_hidden = 24;
  cfg.df_gru_hidden = 24;
  cfg.seed = seed;
  return cfg;
}

const SpeakerEmbedding* emb_for(VariantKind v, const SpeakerEmbedding& e) {
  return uses_embedding(v) ? &e : nullptr;
}

TEST(Variant, NamesRoundTrip) {
  for (auto v : kAll) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("triple"), ConfigError);
}

TEST(Embedding, Validation) {
  SpeakerEmbedding e;
  e.values.assign(191, 0.1);
  EXPECT_THROW(e.validate(), DomainError);
  e.values.assign(192, 0.1);
  e.values[5] = std::nan("");
  EXPECT_THROW(e.validate(), DomainError);
  EXPECT_NEAR(random_embedding(3).norm(), 1.0, 1e-12);
}

TEST(ModelConfig, EmbeddingDimEnforced) {
  ModelConfig cfg;
  cfg.embedding_dim = 128;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.variant = VariantKind::kBaseline;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(BuildModel, DefaultParamCountsAndOrdering) {
  std::map<VariantKind, std::int64_t> params;
  std::map<VariantKind, std::int64_t> macs;
  for (auto v : kAll) {
    ModelConfig cfg;
    cfg.variant = v;
    const auto layers = describe_model(cfg).layers();
    params[v] = count_params(layers);
    macs[v] = count_macs(layers, cfg.dsp);
  }
  // The embedding widens only the junction GRU input.
  EXPECT_EQ(params[VariantKind::kUnified] - params[VariantKind::kBaseline],
            192 * 3 * 256);
  EXPECT_LE(params[VariantKind::kBaseline], params[VariantKind::kUnified]);
  for (auto v : {VariantKind::kDualBoth, VariantKind::kDualErb,
                 VariantKind::kDualDf}) {
    EXPECT_LT(params[VariantKind::kUnified], params[v]);
    EXPECT_LT(macs[VariantKind::kUnified], macs[v]);
  }
  const double a = params[VariantKind::kDualErb];
  const double b = params[VariantKind::kDualDf];
  EXPECT_LT(std::abs(a - b) / std::min(a, b), 0.02);
  EXPECT_LE(params[VariantKind::kDualErb], params[VariantKind::kDualBoth]);
  EXPECT_NEAR(params[VariantKind::kUnified] / 2.31e6, 1.0, 0.25);
}

TEST(BuildModel, SeededInitIsByteIdentical) {
  const auto a = Model::build(small_config(VariantKind::kUnified, 5));
  const auto b = Model::build(small_config(VariantKind::kUnified, 5));
  const auto c = Model::build(small_config(VariantKind::kUnified, 6));
  EXPECT_EQ(serialize_container(a.to_store()), serialize_container(b.to_store()));
  EXPECT_NE(serialize_container(a.to_store()), serialize_container(c.to_store()));
}

TEST(BuildModel, CountsMatchStore) {
  for (auto v : kAll) {
    const auto m = Model::build(small_config(v));
    EXPECT_EQ(m.param_count(), m.params().scalar_count()) << to_string(v);
  }
}

TEST(ModelIo, SaveLoadRoundTrip) {
  test::TempDir dir;
  const auto m = Model::build(small_config(VariantKind::kDualDf, 9));
  save_model(m, dir.path() / "m.pdf2");
  const auto back = load_model(dir.path() / "m.pdf2");
  EXPECT_EQ(back.config().variant, VariantKind::kDualDf);
  EXPECT_EQ(back.config().dsp.sample_rate, 16000);
  EXPECT_TRUE(bit_equal(back.params(), m.params()));
  for (const char* key : {"variant", "sample_rate", "erb_bands", "f_df",
                          "df_order", "schema_version"}) {
    EXPECT_TRUE(back.to_store().has_meta(key)) << key;
  }
}

TEST(ModelIo, SchemaMismatchRejected) {
  auto store = Model::build(small_config(VariantKind::kUnified)).to_store();
  store.set_meta("schema_version", "2");
  EXPECT_THROW(model_from_store(store), FormatError);
  store.set_meta("schema_version", "1");
  EXPECT_NO_THROW(model_from_store(store));
  auto missing = store;
  missing.tensors().erase("enc.gru.w_hh");
  EXPECT_THROW(model_from_store(missing), FormatError);
  auto wrong = store;
  wrong.set("enc.gru.b_hh", Tensor({3}));
  EXPECT_THROW(model_from_store(wrong), FormatError);
}

TEST(EnhanceFrame, ZeroInZeroOut) {
  const auto m = Model::build(small_config(VariantKind::kUnified));
  Enhancer<float> enh(m);
  auto st = enh.new_state();
  const auto e = random_embedding(1);
  const int bins = m.config().dsp.bins();
  std::vector<std::complex<float>> in(bins), out(bins);
  for (int t = 0; t < 10; ++t) {
    enh.enhance_frame(st, in, &e, out);
    for (const auto& v : out) ASSERT_EQ(std::abs(v), 0.0f);
  }
}

TEST(EnhanceFrame, EmbeddingPresenceEnforced) {
  const auto e = random_embedding(2);
  const auto uni = Model::build(small_config(VariantKind::kUnified));
  const auto base = Model::build(small_config(VariantKind::kBaseline));
  const AudioBuffer a = test::noise(1600, 3, 16000);
  EXPECT_THROW(Enhancer<float>(uni).enhance_offline(a, nullptr), UsageError);
  EXPECT_THROW(Enhancer<float>(base).enhance_offline(a, &e), UsageError);
}

TEST(EnhanceFrame, StateDepthFollowsLookahead) {
  const auto m = Model::build(small_config(VariantKind::kBaseline));
  Enhancer<float> enh(m);
  EXPECT_EQ(enh.history_depth(), 5 - 1 + 2);
  auto st = enh.new_state();
  EXPECT_EQ(st.df_history.size(), 6u);
  for (const auto& f : st.df_history) {
    for (const auto& v : f) EXPECT_EQ(std::abs(v), 0.0f);
  }
}

TEST(EnhanceFrame, ResetRestoresInitialBehaviour) {
  const auto m = Model::build(small_config(VariantKind::kBaseline));
  Enhancer<float> enh(m);
  const auto spec = stft<float>(test::noise(3200, 4, 16000), m.config().dsp);
  auto run = [&](ModelState<float>& st) {
    std::vector<std::complex<float>> out(spec.cols()), all;
    for (std::size_t k = 0; k < spec.rows(); ++k) {
      enh.enhance_frame(st, spec.row(k), nullptr, out);
      all.insert(all.end(), out.begin(), out.end());
    }
    return all;
  };
  auto st = enh.new_state();
  const auto first = run(st);
  st.reset();
  EXPECT_EQ(run(st), first);
}

TEST(Enhance, StreamingMatchesOfflineAllVariants) {
  const auto e = random_embedding(5);
  for (auto v : kAll) {
    const auto m = Model::build(small_config(v, 11));
    Enhancer<float> enh(m);
    for (int trial = 0; trial < 3; ++trial) {
      const AudioBuffer a = test::noise(16000 * 3, 100 + trial, 16000, 0.2);
      const auto off = enh.enhance_offline(a, emb_for(v, e));
      const auto str = enh.enhance_streaming(a, emb_for(v, e));
      ASSERT_EQ(off.samples.size(), a.samples.size());
      ASSERT_EQ(str.samples.size(), a.samples.size());
      double err = 0.0;
      for (std::size_t n = 0; n < a.samples.size(); ++n) {
        err = std::max(err, std::abs(off.samples[n] - str.samples[n]));
      }
      EXPECT_LT(err, 1e-5) << to_string(v);
    }
  }
}

TEST(Enhance, DataflowInvariance) {
  const auto e1 = random_embedding(6);
  const auto e2 = random_embedding(7);
  const auto spec = stft<float>(test::noise(8000, 8, 16000, 0.2),
                                small_config(VariantKind::kUnified).dsp);
  auto outputs = [&](VariantKind v) {
    const auto m = Model::build(small_config(v, 12));
    Enhancer<float> enh(m);
    return std::pair{enh.forward_offline(spec, &e1),
                     enh.forward_offline(spec, &e2)};
  };
  auto same = [](const auto& a, const auto& b) { return a == b; };

  auto [erb1, erb2] = outputs(VariantKind::kDualErb);
  EXPECT_TRUE(same(erb1.taps.data(), erb2.taps.data()));
  EXPECT_FALSE(same(erb1.gains.data(), erb2.gains.data()));

  auto [df1, df2] = outputs(VariantKind::kDualDf);
  EXPECT_TRUE(same(df1.gains.data(), df2.gains.data()));
  EXPECT_FALSE(same(df1.taps.data(), df2.taps.data()));

  for (auto v : {VariantKind::kUnified, VariantKind::kDualBoth}) {
    auto [a, b] = outputs(v);
    EXPECT_FALSE(same(a.gains.data(), b.gains.data())) << to_string(v);
    EXPECT_FALSE(same(a.taps.data(), b.taps.data())) << to_string(v);
  }
}

TEST(Enhance, UnifiedOutputsDependOnEmbedding) {
  const auto m = Model::build(small_config(VariantKind::kUnified, 13));
  const AudioBuffer a = test::noise(8000, 9, 16000, 0.2);
  const auto e1 = random_embedding(10);
  const auto e2 = random_embedding(11);
  const auto y1 = enhance_offline(m, a, &e1);
  const auto y2 = enhance_offline(m, a, &e2);
  double l2 = 0.0;
  for (std::size_t n = 0; n < y1.samples.size(); ++n) {
    l2 += std::pow(y1.samples[n] - y2.samples[n], 2);
  }
  EXPECT_GT(l2, 0.0);
}

TEST(Enhance, HighBandAndGainRange) {
  const auto e = random_embedding(12);
  for (auto v : kAll) {
    const auto m = Model::build(small_config(v, 14));
    const auto spec = stft<float>(test::noise(6400, 13, 16000, 0.5), m.config().dsp);
    const auto out = Enhancer<float>(m).forward_offline(spec, emb_for(v, e));
    for (float g : out.gains.data()) {
      ASSERT_GE(g, 0.0f);
      ASSERT_LE(g, 1.0f);
    }
    const int dfb = m.config().dsp.df_bins();
    for (std::size_t k = 0; k < spec.rows(); ++k) {
      for (std::size_t f = dfb; f < spec.cols(); ++f) {
        ASSERT_EQ(out.enhanced(k, f), out.stage1(k, f));
      }
    }
  }
}

TEST(Enhance, IdentityModelPassesThrough) {
  const auto m = make_identity_model(small_config(VariantKind::kUnified));
  const auto e = random_embedding(14);
  const AudioBuffer a = test::noise(16000, 15, 16000, 0.2);
  const auto y = Enhancer<double>(m).enhance_offline(a, &e);
  ASSERT_EQ(y.samples.size(), a.samples.size());
  for (std::size_t n = 0; n < a.samples.size(); ++n) {
    ASSERT_NEAR(y.samples[n], a.samples[n], 1e-9);
  }
}

TEST(Enhance, OutputLengthEqualsInputLength) {
  const auto m = Model::build(small_config(VariantKind::kBaseline));
  for (std::size_t n : {160u, 161u, 999u, 4000u}) {
    const auto y = enhance_offline(m, test::noise(n, n, 16000), nullptr);
    EXPECT_EQ(y.samples.size(), n);
  }
}

}  // namespace
}  // namespace pse

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
#include "pse/trainer.hpp"
#include "test_util.hpp"

namespace pse {
namespace {

ModelConfig tiny_config(VariantKind v) {
  ModelConfig cfg;
  cfg.dsp.sample_rate = 16000;
  cfg.dsp.erb_bands = 8;
  cfg.dsp.f_df = 1500.0;
  cfg.variant = v;
  cfg.conv_channels = 4;
  cfg.erb_gru_hidden = 8;
  cfg.df_gru_hidden = 8;
  cfg.seed = 3;
  return cfg;
}

SpeakerEmbedding unit_embedding(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  SpeakerEmbedding e;
  e.values.resize(kEmbeddingDim);
  for (auto& v : e.values) v = g(rng);
  return e.normalized();
}

TrainExample tone_in_noise(std::uint64_t seed, std::size_t n = 1600) {
  TrainExample ex;
  ex.clean.sample_rate = ex.mixture.sample_rate = 16000;
  const auto nz = test::noise(n, seed, 16000, 0.05);
  ex.clean.samples.resize(n);
  ex.mixture.samples.resize(n);
  const double f0 = 300.0 + 50.0 * (seed % 7);
  for (std::size_t i = 0; i < n; ++i) {
    ex.clean.samples[i] = 0.3 * std::sin(2 * M_PI * f0 * i / 16000.0);
    ex.mixture.samples[i] = ex.clean.samples[i] + nz.samples[i];
  }
  return ex;
}

TEST(BatchSchedule, DoublesAndCaps) {
  EXPECT_EQ(batch_size_for_epoch(1), 8);
  EXPECT_EQ(batch_size_for_epoch(2), 16);
  EXPECT_EQ(batch_size_for_epoch(3), 32);
  EXPECT_EQ(batch_size_for_epoch(4), 64);
  EXPECT_EQ(batch_size_for_epoch(5), 128);
  EXPECT_EQ(batch_size_for_epoch(6), 128);
  EXPECT_EQ(batch_size_for_epoch(60), 128);
}

TEST(EarlyStopping, ConstantLossStopsAfterPatiencePlusOne) {
  EarlyStopping es(15);
  int stopped_at = 0;
  for (int e = 1; e <= 100; ++e) {
    if (es.update(e, 1.0)) {
      stopped_at = e;
      break;
    }
  }
  EXPECT_EQ(stopped_at, 16);
  EXPECT_EQ(es.best_epoch(), 1);
}

TEST(EarlyStopping, ImprovementResetsCounter) {
  EarlyStopping es(2);
  EXPECT_FALSE(es.update(1, 5.0));
  EXPECT_FALSE(es.update(2, 6.0));
  EXPECT_FALSE(es.update(3, 4.0));
  EXPECT_TRUE(es.improved());
  EXPECT_FALSE(es.update(4, 4.0));  // equal is not an improvement
  EXPECT_TRUE(es.update(5, 4.5));
  EXPECT_EQ(es.best_epoch(), 3);
  EXPECT_DOUBLE_EQ(es.best(), 4.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig tc;
  EXPECT_NO_THROW(tc.validate());
  tc.batch_start = 12;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.lr = 0.0;
  EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  TrainConfig tc;
  tc.lr = 0.01;
  tc.weight_decay = 0.0;
  ParamStore p;
  p.set("w", Tensor({3}, {1.0, -2.0, 0.5}));
  ParamStore g;
  g.set("w", Tensor({3}, {4.0, -0.1, 0.0}));
  Adam adam(tc, p);
  adam.step(p, g);
  // Bias-corrected first step is lr * sign(g) for non-zero g.
  EXPECT_NEAR(p.at("w")[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p.at("w")[1], -2.0 + 0.01, 1e-6);
  EXPECT_DOUBLE_EQ(p.at("w")[2], 0.5);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, WeightDecayAddsToGradient) {
  TrainConfig tc;
  tc.lr = 0.1;
  tc.weight_decay = 0.5;
  ParamStore p, g;
  p.set("w", Tensor({1}, {2.0}));
  g.set("w", Tensor({1}, {0.0}));
  Adam adam(tc, p);
  adam.step(p, g);
  EXPECT_NEAR(p.at("w")[0], 1.9, 1e-6);
}

class ExampleLossGrad : public ::testing::TestWithParam<VariantKind> {};

TEST_P(ExampleLossGrad, MatchesFiniteDifference) {
  const ModelConfig cfg = tiny_config(GetParam());
  const Model model = build_model(cfg);
  TrainExample ex = tone_in_noise(5, 960);
  if (uses_embedding(cfg.variant)) ex.embedding = unit_embedding(4);
  const LossWeights w;
  ParamStore grads;
  const auto parts = example_loss(model.topology(), model.params(), ex, w, &grads);
  ASSERT_TRUE(std::isfinite(parts.total));
  const auto check = test::grad_check(
      model.params(), grads,
      [&](const ParamStore& p) {
        return example_loss(model.topology(), p, ex, w).total;
      },
      24, 17, 1e-5, 1e-4);
  EXPECT_LT(check.max_rel, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Variants, ExampleLossGrad,
                         ::testing::Values(VariantKind::kBaseline,
                                           VariantKind::kUnified,
                                           VariantKind::kDualBoth));

TEST(ExampleLoss, EachTermHasCorrectGradient) {
  const Model model = build_model(tiny_config(VariantKind::kBaseline));
  const TrainExample ex = tone_in_noise(8, 960);
  for (int term = 0; term < 3; ++term) {
    LossWeights w{term == 0 ? 1.0 : 0.0, term == 1 ? 1.0 : 0.0,
                  term == 2 ? 1.0 : 0.0};
    ParamStore grads;
    example_loss(model.topology(), model.params(), ex, w, &grads);
    const auto check = test::grad_check(
        model.params(), grads,
        [&](const ParamStore& p) {
          return example_loss(model.topology(), p, ex, w).total;
        },
        16, 100 + term, 1e-6, 1e-7);
    EXPECT_LT(check.max_rel, 1e-3) << "term " << term;
  }
}

TEST(ExampleLoss, IdentityModelOnCleanInputIsNearZero) {
  const Model model = make_identity_model(tiny_config(VariantKind::kBaseline));
  TrainExample ex = tone_in_noise(2);
  ex.mixture = ex.clean;
  const auto parts = example_loss(model.topology(), model.params(), ex, {});
  EXPECT_LT(parts.spec, 1e-12);
  EXPECT_LT(parts.mr, 1e-12);
  EXPECT_LT(parts.os, 1e-12);
}

TEST(ExampleLoss, ForwardMatchesOfflineInference) {
  for (auto v : {VariantKind::kBaseline, VariantKind::kDualDf}) {
    const Model model = build_model(tiny_config(v));
    TrainExample ex = tone_in_noise(3);
    if (uses_embedding(v)) ex.embedding = unit_embedding(2);
    const SpeakerEmbedding* emb = ex.embedding ? &*ex.embedding : nullptr;
    const AudioBuffer est = Enhancer<double>(model).enhance_offline(ex.mixture, emb);
    const auto parts = example_loss(model.topology(), model.params(), ex,
                                    LossWeights{0.0, 1.0, 0.0});
    EXPECT_NEAR(parts.mr, multires_loss(est, ex.clean), 1e-10 * parts.mr);
  }
}

TEST(ExampleLoss, RejectsBadInput) {
  const Model model = build_model(tiny_config(VariantKind::kBaseline));
  TrainExample ex = tone_in_noise(1);
  ex.clean.samples.pop_back();
  EXPECT_THROW(example_loss(model.topology(), model.params(), ex, {}),
               DomainError);
  ex = tone_in_noise(1);
  ex.mixture.sample_rate = ex.clean.sample_rate = 8000;
  EXPECT_THROW(example_loss(model.topology(), model.params(), ex, {}),
               ConfigError);
  ex = tone_in_noise(1);
  const Model unified = build_model(tiny_config(VariantKind::kUnified));
  EXPECT_THROW(example_loss(unified.topology(), unified.params(), ex, {}),
               UsageError);
}

std::vector<TrainExample> toy_set(std::uint64_t base, int n) {
  std::vector<TrainExample> out;
  for (int i = 0; i < n; ++i) out.push_back(tone_in_noise(base + i, 1280));
  return out;
}

TEST(ToyTrain, LossDecreasesAndIsDeterministic) {
  const Model model = build_model(tiny_config(VariantKind::kBaseline));
  const auto train = toy_set(10, 12);
  const auto val = toy_set(50, 4);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.max_epochs = 4;
  tc.seed = 9;
  const auto a = toy_train(model, train, val, tc);
  ASSERT_EQ(a.history.size(), 4u);
  EXPECT_EQ(a.history[0].batch_size, 8);
  EXPECT_EQ(a.history[1].batch_size, 16);
  EXPECT_LT(a.best_val_loss, dataset_loss(model.topology(), model.params(),
                                          val, tc.weights));
  EXPECT_LT(a.history.back().train_loss, a.initial_train_loss);

  tc.jobs = 3;
  const auto b = toy_train(model, train, val, tc);
  ASSERT_EQ(b.history.size(), a.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
  }
  EXPECT_TRUE(bit_equal(a.best_params, b.best_params));
}

TEST(ToyTrain, ConstantValidationStopsEarly) {
  // Zero learning rate is rejected, so freeze with a vanishing one instead and
  // check the stopping rule through the callback record count.
  const Model model = build_model(tiny_config(VariantKind::kBaseline));
  const auto train = toy_set(10, 2);
  TrainConfig tc;
  tc.lr = 1e-300;
  tc.weight_decay = 0.0;
  tc.patience = 3;
  tc.max_epochs = 50;
  int calls = 0;
  const auto r = toy_train(model, train, train, tc,
                           [&](const EpochRecord&, bool, const ParamStore&) {
                             ++calls;
                           });
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(calls, 4);
  EXPECT_EQ(r.best_epoch, 1);
}

TEST(ToyTrain, EmptyDatasetIsUsageError) {
  const Model model = build_model(tiny_config(VariantKind::kBaseline));
  const std::vector<TrainExample> none;
  const auto some = toy_set(1, 1);
  EXPECT_THROW(toy_train(model, none, some, {}), UsageError);
  EXPECT_THROW(toy_train(model, some, none, {}), UsageError);
}

TEST(ToyTrain, NanInputRaisesTrainingError) {
  const Model model = build_model(tiny_config(VariantKind::kBaseline));
  auto train = toy_set(1, 1);
  train[0].mixture.samples[100] = std::nan("");
  TrainConfig tc;
  tc.max_epochs = 1;
  try {
    toy_train(model, train, toy_set(5, 1), tc);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 1);
  }
}

TEST(Checkpoint, CarriesEpochAndValLoss) {
  test::TempDir dir;
  const Model model = build_model(tiny_config(VariantKind::kBaseline));
  const auto path = dir.path() / "best.pse";
  save_checkpoint(model, model.params(), 7, 0.125, path);
  const ParamStore store = load_container(path);
  EXPECT_EQ(store.meta("epoch"), "7");
  EXPECT_DOUBLE_EQ(std::stod(store.meta("val_loss")), 0.125);
  EXPECT_NO_THROW(load_model(path));
}

TEST(History, CsvFormat) {
  const std::vector<EpochRecord> h = {{1, 2.5, 3.0, 8}, {2, 2.0, 2.75, 16}};
  EXPECT_EQ(history_csv(h),
            "epoch,train_loss,val_loss,batch_size\n1,2.5,3,8\n2,2,2.75,16\n");
}

}  // namespace
}  // namespace pse

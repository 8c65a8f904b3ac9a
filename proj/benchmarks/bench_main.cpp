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

#include <benchmark/benchmark.h>

#include <complex>
#include <random>
#include <vector>

#include "pse/dsp.hpp"
#include "pse/loss.hpp"
#include "pse/metrics.hpp"
#include "pse/model.hpp"
#include "pse/random.hpp"
#include "pse/trainer.hpp"

namespace {

using namespace pse;

AudioBuffer noise(double seconds, int sr, std::uint64_t seed) {
  AudioBuffer a;
  a.sample_rate = sr;
  a.samples.resize(static_cast<std::size_t>(seconds * sr));
  std::mt19937_64 rng(seed);
  for (double& v : a.samples) v = 0.1 * standard_normal(rng);
  return a;
}

SpeakerEmbedding embedding(std::uint64_t seed) {
  SpeakerEmbedding e;
  std::mt19937_64 rng(seed);
  e.values.resize(kEmbeddingDim);
  for (double& v : e.values) v = standard_normal(rng);
  return e.normalized();
}

const VariantKind kVariants[] = {VariantKind::kBaseline, VariantKind::kUnified,
                                 VariantKind::kDualBoth, VariantKind::kDualErb,
                                 VariantKind::kDualDf};

void BM_StftRoundTrip(benchmark::State& state) {
  DspConfig cfg;
  const AudioBuffer a = noise(1.0, cfg.sample_rate, 1);
  for (auto _ : state) {
    const auto spec = stft<float>(a, cfg);
    benchmark::DoNotOptimize(istft(spec, cfg));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(a.samples.size()));
}
BENCHMARK(BM_StftRoundTrip)->Unit(benchmark::kMillisecond);

// One hop of streaming inference at the default 48 kHz config.
void BM_EnhanceFrame(benchmark::State& state) {
  ModelConfig cfg;
  cfg.variant = kVariants[state.range(0)];
  const Model model = build_model(cfg);
  const Enhancer<float> enh(model);
  auto st = enh.new_state();
  const SpeakerEmbedding e = embedding(2);
  const SpeakerEmbedding* ep = uses_embedding(cfg.variant) ? &e : nullptr;
  const int bins = cfg.dsp.bins();
  std::vector<std::complex<float>> in(bins), out(bins);
  std::mt19937_64 rng(3);
  for (auto& c : in) c = {float(standard_normal(rng)), float(standard_normal(rng))};
  for (auto _ : state) {
    enh.enhance_frame(st, in, ep, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetLabel(to_string(cfg.variant));
  // Wall time over audio time.
  state.counters["rtf"] =
      benchmark::Counter(static_cast<double>(state.iterations()) / cfg.dsp.frames_per_second(),
                         benchmark::Counter::kIsRate | benchmark::Counter::kInvert);
}
BENCHMARK(BM_EnhanceFrame)->DenseRange(0, 4)->Unit(benchmark::kMicrosecond);

void BM_ExampleLossGradient(benchmark::State& state) {
  ModelConfig cfg;
  cfg.dsp.sample_rate = 16000;
  cfg.dsp.erb_bands = 16;
  cfg.conv_channels = 16;
  cfg.erb_gru_hidden = 64;
  cfg.df_gru_hidden = 64;
  const Model model = build_model(cfg);
  TrainExample ex;
  ex.clean = noise(1.0, 16000, 4);
  ex.mixture = ex.clean;
  const AudioBuffer n = noise(1.0, 16000, 5);
  for (std::size_t i = 0; i < n.samples.size(); ++i) ex.mixture.samples[i] += n.samples[i];
  ex.embedding = embedding(6);
  ParamStore grads;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        example_loss(model.topology(), model.params(), ex, LossWeights{}, &grads));
  }
}
BENCHMARK(BM_ExampleLossGradient)->Unit(benchmark::kMillisecond);

void BM_Stoi(benchmark::State& state) {
  const AudioBuffer x = noise(5.0, 16000, 7);
  AudioBuffer y = x;
  const AudioBuffer n = noise(5.0, 16000, 8);
  for (std::size_t i = 0; i < n.samples.size(); ++i) y.samples[i] += n.samples[i];
  for (auto _ : state) benchmark::DoNotOptimize(stoi(x, y));
}
BENCHMARK(BM_Stoi)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

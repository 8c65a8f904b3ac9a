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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/loss.hpp"
#include "pse/mixer.hpp"
#include "pse/model.hpp"
#include "pse/tensor.hpp"

namespace pse {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;  // L2 term added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_start = 8;
  int batch_max = 128;
  int patience = 15;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  // Random training crops of this many seconds; 0 uses whole clips.
  double crop_seconds = 0.0;
  LossWeights weights;
  int jobs = 1;

  void validate() const;
};

struct TrainExample {
  AudioBuffer mixture;
  AudioBuffer clean;
  std::optional<SpeakerEmbedding> embedding;
};

// Reads every manifest clip with its clean reference. When `embeddings` is
// given each example gets its target speaker's embedding; UsageError lists
// the speakers without one.
std::vector<TrainExample> load_examples(const Manifest& manifest,
                                        const EmbeddingMap* embeddings,
                                        int jobs = 1);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  int batch_size = 0;
};

struct TrainResult {
  ParamStore best_params;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  // Whole-clip training-set loss before the first and after the last step.
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  std::vector<EpochRecord> history;
  bool early_stopped = false;
};

// start * 2^(epoch-1) capped at `cap`, for 1-based epochs.
int batch_size_for_epoch(int epoch, int start = 8, int cap = 128);

// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  // Returns true when training should stop after this epoch.
  bool update(int epoch, double val_loss);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_ = 0.0;
  int stale_ = 0;
  bool improved_ = false;
};

// Combined loss of one example under `params`, with the gradient of every
// parameter when `grads` is given.
LossParts example_loss(const Topology& topo, const ParamStore& params,
                       const TrainExample& ex, const LossWeights& w,
                       ParamStore* grads = nullptr);

// Mean loss over a dataset without updates.
double dataset_loss(const Topology& topo, const ParamStore& params,
                    std::span<const TrainExample> data, const LossWeights& w,
                    int jobs = 1);

class Adam {
 public:
  Adam(const TrainConfig& cfg, const ParamStore& params);
  void step(ParamStore& params, const ParamStore& grads);
  std::int64_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  ParamStore m_;
  ParamStore v_;
  std::int64_t t_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&, bool improved,
                                         const ParamStore& params)>;

// Adam on the combined loss with per-epoch batch doubling and early stopping
// on validation loss. Deterministic for a given seed regardless of `jobs`.
TrainResult toy_train(const Model& model, std::span<const TrainExample> train,
                      std::span<const TrainExample> val, const TrainConfig& tc,
                      const EpochCallback& on_epoch = {});

std::string history_csv(std::span<const EpochRecord> history);

// Checkpoint container with "epoch" and "val_loss" metadata.
void save_checkpoint(const Model& model, const ParamStore& params, int epoch,
                     double val_loss, const std::filesystem::path& path);

}  // namespace pse

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

#include <complex>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/autograd.hpp"
#include "pse/dsp.hpp"
#include "pse/layers.hpp"
#include "pse/tensor.hpp"

namespace pse {

inline constexpr int kEmbeddingDim = 192;
inline constexpr int kModelSchemaVersion = 1;

// Where the speaker embedding enters the network.
enum class VariantKind { kBaseline, kUnified, kDualBoth, kDualErb, kDualDf };

const char* to_string(VariantKind v);
// Accepts baseline, unified, dual_both, dual_erb, dual_df.
VariantKind parse_variant(const std::string& name);
bool is_dual(VariantKind v);
bool uses_embedding(VariantKind v);
bool erb_branch_sees_embedding(VariantKind v);
bool df_branch_sees_embedding(VariantKind v);

struct SpeakerEmbedding {
  std::vector<double> values;

  // Throws DomainError unless there are exactly 192 finite values.
  void validate() const;
  double norm() const;
  SpeakerEmbedding normalized() const;
};

// Embeddings keyed by speaker name.
using EmbeddingMap = std::map<std::string, SpeakerEmbedding>;

struct ModelConfig {
  DspConfig dsp;
  VariantKind variant = VariantKind::kUnified;
  int conv_channels = 64;
  int erb_gru_hidden = 256;
  int df_gru_hidden = 256;
  int embedding_dim = kEmbeddingDim;
  std::uint64_t seed = 0;

  void validate() const;
};

// Layer layout of one variant. Every conv is followed by a ReLU.
//   baseline/unified: erb convs | df convs -> concat -> junction (+ReLU)
//                     [-> concat embedding] -> enc GRU -> shared latent
//   dual_*:           erb convs -> erb proj (+ReLU) [-> concat emb] -> erb GRU
//                     df convs  -> df proj (+ReLU)  [-> concat emb] -> df GRU
//   erb decoder:      fc0 ReLU, fc1 ReLU, out sigmoid -> erb_bands gains
//   df decoder:       GRU, fc0 ReLU, out -> order * df_bins complex taps
struct Topology {
  ModelConfig cfg;
  std::vector<LayerSpec> erb_convs;
  std::vector<LayerSpec> df_convs;
  std::optional<LayerSpec> junction;
  std::optional<LayerSpec> enc_gru;
  std::optional<LayerSpec> erb_proj;
  std::optional<LayerSpec> erb_gru;
  std::optional<LayerSpec> df_proj;
  std::optional<LayerSpec> df_gru;
  LayerSpec erb_fc0, erb_fc1, erb_out;
  LayerSpec df_dec_gru, df_fc0, df_out;

  // Every layer including pointwise and concat entries, in evaluation order.
  std::vector<LayerSpec> layers() const;
  int df_bins() const { return cfg.dsp.df_bins(); }
  // Tap index that reads the current frame, or -1 when none does.
  int identity_tap() const;
};

Topology describe_model(const ModelConfig& cfg);

// Immutable network description plus parameters.
class Model {
 public:
  // Seeded initialization.
  static Model build(const ModelConfig& cfg);
  // Adopts existing parameters; throws FormatError on missing tensors or
  // shape mismatches.
  static Model from_params(const ModelConfig& cfg, ParamStore params);

  const ModelConfig& config() const { return topo_.cfg; }
  const Topology& topology() const { return topo_; }
  const ParamStore& params() const { return params_; }
  const ErbFilterbank& filterbank() const { return fb_; }
  std::vector<LayerSpec> layers() const { return topo_.layers(); }

  std::int64_t param_count() const;
  std::int64_t macs_per_second() const;

  // Parameters with the model metadata attached.
  ParamStore to_store() const;

 private:
  Model(Topology topo, ParamStore params);

  Topology topo_;
  ParamStore params_;
  ErbFilterbank fb_;
};

// build_model in the sense of (layer graph, params).
inline Model build_model(const ModelConfig& cfg) { return Model::build(cfg); }

void save_model(const Model& model, const std::filesystem::path& path);
// Rejects missing or mismatched schema_version metadata.
Model load_model(const std::filesystem::path& path);
Model model_from_store(const ParamStore& store);
ModelConfig config_from_metadata(const ParamStore& store);
void write_metadata(const ModelConfig& cfg, ParamStore& store);

// Weights with every gain saturated to 1 and the identity tap set, so the
// enhancer passes its input through.
Model make_identity_model(const ModelConfig& cfg);

// Per-stream mutable state. Owned by exactly one stream.
template <typename T>
struct ModelState {
  NormState<T> erb_norm;
  NormState<T> df_norm;
  std::map<std::string, std::vector<std::vector<T>>> conv_history;
  std::map<std::string, std::vector<T>> gru_hidden;
  // Stage-1 output frames, oldest first.
  std::vector<std::vector<std::complex<T>>> df_history;
  // Taps of the most recent lookahead+1 frames, oldest first.
  std::vector<std::vector<std::complex<T>>> tap_history;
  std::int64_t frames_seen = 0;

  void reset();
};

template <typename T>
struct OfflineOutputs {
  Matrix<T> gains;                  // [frames][erb_bands]
  DfCoeffs<T> taps;                 // [frames][order][df_bins]
  BasicSpectrogram<T> stage1;
  BasicSpectrogram<T> enhanced;
};

// Inference engine with weights converted to T. Immutable and shareable
// across threads; each stream brings its own ModelState.
template <typename T>
class Enhancer {
 public:
  explicit Enhancer(const Model& model);

  const Model& model() const { return *model_; }
  ModelState<T> new_state() const;
  // Ring depth of the stage-1 history: N - 1 + lookahead (at least N).
  int history_depth() const;

  // Consumes input frame t and writes output frame t - lookahead (zeros
  // while t < lookahead). `emb` must be given iff the variant is
  // personalized.
  void enhance_frame(ModelState<T>& state,
                     std::span<const std::complex<T>> frame,
                     const SpeakerEmbedding* emb,
                     std::span<std::complex<T>> out) const;

  OfflineOutputs<T> forward_offline(const BasicSpectrogram<T>& spec,
                                    const SpeakerEmbedding* emb) const;

  // stft -> features -> network -> gains -> deep filter -> istft. The input
  // is padded by one hop so every input sample is fully reconstructed; the
  // output has the input's length.
  AudioBuffer enhance_offline(const AudioBuffer& audio,
                              const SpeakerEmbedding* emb) const;
  // Same result computed hop by hop through enhance_frame with delay
  // compensation.
  AudioBuffer enhance_streaming(const AudioBuffer& audio,
                                const SpeakerEmbedding* emb) const;

 private:
  void check_embedding(const SpeakerEmbedding* emb) const;

  std::shared_ptr<const Model> model_;
  std::map<std::string, std::vector<T>> weights_;
};

extern template class Enhancer<float>;
extern template class Enhancer<double>;

// Convenience wrappers on the 32-bit inference path.
AudioBuffer enhance_offline(const Model& model, const AudioBuffer& audio,
                            const SpeakerEmbedding* emb);

// Differentiable forward over a whole sequence on a tape. `erb` is
// [frames, erb_bands] and `df` is [frames, 2*df_bins] (interleaved re/im).
// Returns node ids of the gains [frames, erb_bands] and the taps
// [frames, order*df_bins*2] including the identity offset.
struct TapeOutputs {
  Tape::Id gains;
  Tape::Id taps;
};
TapeOutputs forward_tape(Tape& tape, const Topology& topo,
                         const std::map<std::string, Tape::Id>& params,
                         const Tensor& erb, const Tensor& df,
                         const SpeakerEmbedding* emb);

}  // namespace pse

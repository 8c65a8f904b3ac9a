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

#include "pse/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "pse/error.hpp"
#include "pse/parallel.hpp"
#include "pse/random.hpp"

namespace pse {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  const auto pow2 = [](int v) { return v > 0 && (v & (v - 1)) == 0; };
  if (!pow2(batch_start) || !pow2(batch_max) || batch_start < 8 ||
      batch_max > 128 || batch_start > batch_max) {
    throw ConfigError("batch sizes must be powers of two within [8, 128]");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(crop_seconds >= 0.0)) throw ConfigError("crop_seconds must be >= 0");
  weights.validate();
}

int batch_size_for_epoch(int epoch, int start, int cap) {
  long bs = start;
  for (int e = 1; e < epoch && bs < cap; ++e) bs *= 2;
  return static_cast<int>(std::min<long>(bs, cap));
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double val_loss) {
  improved_ = best_epoch_ == 0 || val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

namespace {

Tensor matrix_tensor(std::size_t rows, std::size_t cols,
                     std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

void check_example(const DspConfig& d, const TrainExample& ex) {
  if (ex.mixture.sample_rate != d.sample_rate ||
      ex.clean.sample_rate != d.sample_rate) {
    throw ConfigError("training audio sample rate does not match the model");
  }
  if (ex.mixture.samples.size() != ex.clean.samples.size()) {
    throw DomainError("mixture and clean target lengths differ");
  }
  if (ex.mixture.samples.size() < static_cast<std::size_t>(d.hop())) {
    throw DomainError("training clip shorter than one hop");
  }
}

}  // namespace

LossParts example_loss(const Topology& topo, const ParamStore& params,
                       const TrainExample& ex, const LossWeights& w,
                       ParamStore* grads) {
  const DspConfig& d = topo.cfg.dsp;
  check_example(d, ex);
  const ErbFilterbank fb = build_erb_filterbank(d);
  // Same padding as offline inference so every output sample sees a full
  // overlap-add.
  const std::size_t pad = d.win_length() - d.hop();
  AudioBuffer mix = ex.mixture;
  AudioBuffer ref = ex.clean;
  mix.samples.resize(mix.samples.size() + pad, 0.0);
  ref.samples.resize(ref.samples.size() + pad, 0.0);
  const ComplexSpectrogram x = stft<double>(mix, d);
  const ComplexSpectrogram s = stft<double>(ref, d);
  const std::size_t frames = x.rows();
  const int bands = d.erb_bands;
  const int dfb = d.df_bins();
  const int order = d.df_order;

  NormState<double> erb_norm(bands, d.norm_alpha());
  NormState<double> df_norm(dfb, d.norm_alpha());
  const auto erb = erb_features<double>(x, fb, erb_norm);
  const auto cf = complex_features<double>(x, d, df_norm);
  std::vector<double> df_flat(frames * 2 * dfb);
  for (std::size_t i = 0; i < cf.values.data().size(); ++i) {
    df_flat[2 * i] = cf.values.data()[i].real();
    df_flat[2 * i + 1] = cf.values.data()[i].imag();
  }

  Tape tape;
  const auto ids = bind_params(tape, params);
  const SpeakerEmbedding* emb = ex.embedding ? &*ex.embedding : nullptr;
  const TapeOutputs out = forward_tape(
      tape, topo, ids, matrix_tensor(frames, bands, erb.values.data()),
      matrix_tensor(frames, 2 * dfb, std::move(df_flat)), emb);

  Matrix<double> gains(frames, bands);
  gains.data() = tape.value(out.gains).vec();
  DfCoeffs<double> taps(frames, order, dfb);
  const auto& tv = tape.value(out.taps).vec();
  for (std::size_t i = 0; i < taps.data().size(); ++i) {
    taps.data()[i] = {tv[2 * i], tv[2 * i + 1]};
  }
  const ComplexSpectrogram y1 = apply_erb_gains<double>(x, gains, fb);
  const ComplexSpectrogram est = deep_filter<double>(y1, taps, d);
  AudioBuffer est_audio = istft<double>(est, d);
  est_audio.samples.resize(ex.clean.samples.size());

  const bool want = grads != nullptr;
  ComplexSpectrogram g_spec, g_os;
  std::vector<double> g_mr;
  LossParts parts;
  parts.spec = spectral_loss(est, s, want ? &g_spec : nullptr);
  parts.mr = multires_loss(est_audio, ex.clean, want ? &g_mr : nullptr);
  parts.os = oversuppression_loss(est, s, want ? &g_os : nullptr);
  parts.total = w.lambda_spec * parts.spec + w.lambda_mr * parts.mr +
                w.lambda_os * parts.os;
  if (!want) return parts;

  // dL/d(est) as a complex gradient.
  ComplexSpectrogram g_est = istft_adjoint(g_mr, frames, d);
  for (std::size_t i = 0; i < g_est.data().size(); ++i) {
    g_est.data()[i] = w.lambda_mr * g_est.data()[i] +
                      w.lambda_spec * g_spec.data()[i] +
                      w.lambda_os * g_os.data()[i];
  }

  // Through the deep filter.
  ComplexSpectrogram g_y1(frames, d.bins());
  Tensor g_taps({frames, static_cast<std::size_t>(order * dfb * 2)});
  for (std::size_t k = 0; k < frames; ++k) {
    for (int f = dfb; f < d.bins(); ++f) g_y1(k, f) += g_est(k, f);
    for (int i = 0; i < order; ++i) {
      const long src = static_cast<long>(k) +
                       df_source_offset(i, order, d.lookahead_frames);
      if (src < 0 || src >= static_cast<long>(frames)) continue;
      for (int f = 0; f < dfb; ++f) {
        const std::complex<double> g = g_est(k, f);
        const std::complex<double> gt = g * std::conj(y1(src, f));
        g_taps[k * order * dfb * 2 + 2 * (i * dfb + f)] = gt.real();
        g_taps[k * order * dfb * 2 + 2 * (i * dfb + f) + 1] = gt.imag();
        g_y1(src, f) += g * std::conj(taps(k, i, f));
      }
    }
  }
  // Through the real band gains.
  Tensor g_gains({frames, static_cast<std::size_t>(bands)});
  for (std::size_t k = 0; k < frames; ++k) {
    for (int b = 0; b < bands; ++b) {
      double acc = 0.0;
      for (int f = fb.edges[b]; f < fb.edges[b + 1]; ++f) {
        acc += g_y1(k, f).real() * x(k, f).real() +
               g_y1(k, f).imag() * x(k, f).imag();
      }
      g_gains[k * bands + b] = acc;
    }
  }
  const std::pair<Tape::Id, Tensor> seeds[] = {{out.gains, std::move(g_gains)},
                                               {out.taps, std::move(g_taps)}};
  tape.backward(seeds);
  *grads = tape.gradients();
  return parts;
}

double dataset_loss(const Topology& topo, const ParamStore& params,
                    std::span<const TrainExample> data, const LossWeights& w,
                    int jobs) {
  if (data.empty()) throw UsageError("empty dataset");
  std::vector<double> losses(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    losses[i] = example_loss(topo, params, data[i], w).total;
  });
  double acc = 0.0;
  for (double l : losses) acc += l;
  return acc / static_cast<double>(data.size());
}

Adam::Adam(const TrainConfig& cfg, const ParamStore& params) : cfg_(cfg) {
  for (const auto& [name, t] : params.tensors()) {
    m_.set(name, Tensor(t.shape()));
    v_.set(name, Tensor(t.shape()));
  }
}

void Adam::step(ParamStore& params, const ParamStore& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params.tensors()) {
    const Tensor& g = grads.at(name);
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i] + cfg_.weight_decay * p[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
    }
  }
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  }
  return idx;
}

TrainExample crop(const TrainExample& ex, std::size_t len, std::uint64_t seed) {
  if (len == 0 || ex.mixture.samples.size() <= len) return ex;
  std::mt19937_64 rng(seed);
  const std::size_t span = ex.mixture.samples.size() - len;
  const std::size_t at = uniform_index(rng, span + 1);
  TrainExample out;
  out.embedding = ex.embedding;
  out.mixture.sample_rate = ex.mixture.sample_rate;
  out.clean.sample_rate = ex.clean.sample_rate;
  out.mixture.samples.assign(ex.mixture.samples.begin() + at,
                             ex.mixture.samples.begin() + at + len);
  out.clean.samples.assign(ex.clean.samples.begin() + at,
                           ex.clean.samples.begin() + at + len);
  return out;
}

void add_into(ParamStore& acc, const ParamStore& g) {
  for (auto& [name, t] : acc.tensors()) {
    const Tensor& s = g.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] += s[i];
  }
}


}  // namespace

TrainResult toy_train(const Model& model, std::span<const TrainExample> train,
                      std::span<const TrainExample> val, const TrainConfig& tc,
                      const EpochCallback& on_epoch) {
  tc.validate();
  if (train.empty()) throw UsageError("empty training set");
  if (val.empty()) throw UsageError("empty validation set");
  const Topology& topo = model.topology();
  const int jobs = resolve_jobs(tc.jobs);
  const std::size_t crop_len = static_cast<std::size_t>(
      std::lround(tc.crop_seconds * model.config().dsp.sample_rate));

  ParamStore params = model.params();
  Adam adam(tc, params);
  TrainResult result;
  result.best_params = params;
  result.initial_train_loss = dataset_loss(topo, params, train, tc.weights, jobs);
  EarlyStopping stopper(tc.patience);

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const int bs = batch_size_for_epoch(epoch, tc.batch_start, tc.batch_max);
    const auto order = permutation(train.size(), derive_seed(tc.seed, epoch));
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
      const std::size_t b1 = std::min(order.size(), b0 + bs);
      ParamStore acc;
      for (const auto& [name, t] : params.tensors()) acc.set(name, Tensor(t.shape()));
      double batch_loss = 0.0;
      for (std::size_t c0 = b0; c0 < b1; c0 += jobs) {
        const std::size_t c1 = std::min(b1, c0 + jobs);
        std::vector<ParamStore> g(c1 - c0);
        std::vector<double> l(c1 - c0);
        parallel_for(c1 - c0, jobs, [&](std::size_t j) {
          const std::size_t idx = order[c0 + j];
          const TrainExample ex =
              crop(train[idx], crop_len,
                   derive_seed(derive_seed(tc.seed, epoch), idx));
          l[j] = example_loss(topo, params, ex, tc.weights, &g[j]).total;
        });
        for (std::size_t j = 0; j < g.size(); ++j) {
          add_into(acc, g[j]);
          batch_loss += l[j];
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("non-finite training loss", adam.steps() + 1);
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (auto& [name, t] : acc.tensors()) {
        for (double& v : t.vec()) {
          v *= inv;
          if (!std::isfinite(v)) {
            throw TrainingError("non-finite gradient for '" + name + "'",
                                adam.steps() + 1);
          }
        }
      }
      adam.step(params, acc);
      epoch_loss += batch_loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.batch_size = bs;
    rec.train_loss = epoch_loss / static_cast<double>(train.size());
    rec.val_loss = dataset_loss(topo, params, val, tc.weights, jobs);
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingError("non-finite validation loss", adam.steps());
    }
    const bool stop = stopper.update(epoch, rec.val_loss);
    if (stopper.improved()) {
      result.best_params = params;
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec, stopper.improved(), params);
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  result.final_train_loss = dataset_loss(topo, params, train, tc.weights, jobs);
  return result;
}

std::vector<TrainExample> load_examples(const Manifest& manifest,
                                        const EmbeddingMap* embeddings,
                                        int jobs) {
  if (embeddings) {
    std::set<std::string> missing;
    for (const auto& r : manifest.rows) {
      if (!embeddings->count(r.target_speaker)) missing.insert(r.target_speaker);
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw UsageError("no embedding for speaker(s): " + list);
    }
  }
  std::vector<TrainExample> out(manifest.rows.size());
  parallel_for(out.size(), resolve_jobs(jobs), [&](std::size_t i) {
    const ManifestRow& r = manifest.rows[i];
    out[i].mixture = read_wav(manifest.resolve(r.clip));
    out[i].clean = read_wav(manifest.resolve(r.clean));
    if (embeddings) out[i].embedding = embeddings->at(r.target_speaker);
  });
  return out;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,train_loss,val_loss,batch_size\n";
  char line[128];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%d\n", r.epoch,
                  r.train_loss, r.val_loss, r.batch_size);
    out += line;
  }
  return out;
}

void save_checkpoint(const Model& model, const ParamStore& params, int epoch,
                     double val_loss, const std::filesystem::path& path) {
  ParamStore store = Model::from_params(model.config(), params).to_store();
  store.set_meta("epoch", std::to_string(epoch));
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", val_loss);
  store.set_meta("val_loss", buf);
  save_container(store, path);
}

}  // namespace pse

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

#include "pse/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pse/error.hpp"

namespace pse {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kGroupedLinear: return "grouped-linear";
    case LayerKind::kGru: return "gru-cell";
    case LayerKind::kPointwise: return "pointwise";
    case LayerKind::kConcat: return "concat";
  }
  return "unknown";
}

const char* to_string(Activation act) {
  switch (act) {
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv2d(std::string name, int cin, int cout, int kt,
                            int kf, int stride_f, int in_freq) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.name = std::move(name);
  s.in_channels = cin;
  s.out_channels = cout;
  s.kernel_time = kt;
  s.kernel_freq = kf;
  s.stride_freq = stride_f;
  s.in_freq = in_freq;
  return s;
}

LayerSpec LayerSpec::grouped_linear(std::string name, int in, int out,
                                    int groups, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::kGroupedLinear;
  s.name = std::move(name);
  s.in_features = in;
  s.out_features = out;
  s.groups = groups;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::gru(std::string name, int in, int hidden) {
  LayerSpec s;
  s.kind = LayerKind::kGru;
  s.name = std::move(name);
  s.in_features = in;
  s.hidden = hidden;
  return s;
}

LayerSpec LayerSpec::pointwise(std::string name, Activation act, int size) {
  LayerSpec s;
  s.kind = LayerKind::kPointwise;
  s.name = std::move(name);
  s.activation = act;
  s.in_features = size;
  return s;
}

LayerSpec LayerSpec::concat(std::string name, std::vector<int> parts) {
  LayerSpec s;
  s.kind = LayerKind::kConcat;
  s.name = std::move(name);
  s.parts = std::move(parts);
  return s;
}

int LayerSpec::out_freq() const {
  return (in_freq + 2 * pad_freq() - kernel_freq) / stride_freq + 1;
}

int LayerSpec::input_size() const {
  switch (kind) {
    case LayerKind::kConv2d: return in_freq * in_channels;
    case LayerKind::kConcat:
      return std::accumulate(parts.begin(), parts.end(), 0);
    default: return in_features;
  }
}

int LayerSpec::output_size() const {
  switch (kind) {
    case LayerKind::kConv2d: return out_freq() * out_channels;
    case LayerKind::kGroupedLinear: return out_features;
    case LayerKind::kGru: return hidden;
    case LayerKind::kPointwise: return in_features;
    case LayerKind::kConcat: return input_size();
  }
  return 0;
}

void LayerSpec::validate() const {
  auto fail = [&](const std::string& why) {
    throw ConfigError("layer '" + name + "' (" + to_string(kind) + "): " + why);
  };
  switch (kind) {
    case LayerKind::kConv2d:
      if (in_channels < 1 || out_channels < 1 || kernel_time < 1 ||
          kernel_freq < 1 || stride_freq < 1 || in_freq < 1) {
        fail("dimensions must be positive");
      }
      if (out_freq() < 1) fail("kernel wider than the padded input");
      break;
    case LayerKind::kGroupedLinear:
      if (in_features < 1 || out_features < 1 || groups < 1) {
        fail("dimensions must be positive");
      }
      if (in_features % groups || out_features % groups) {
        fail("features must divide evenly into groups");
      }
      break;
    case LayerKind::kGru:
      if (in_features < 1 || hidden < 1) fail("dimensions must be positive");
      break;
    case LayerKind::kPointwise:
      if (in_features < 1) fail("size must be positive");
      break;
    case LayerKind::kConcat:
      if (parts.empty()) fail("needs at least one part");
      for (int p : parts) {
        if (p < 1) fail("part sizes must be positive");
      }
      break;
  }
}

std::vector<std::pair<std::string, Tensor::Shape>> LayerSpec::param_shapes()
    const {
  using S = Tensor::Shape;
  auto u = [](int v) { return static_cast<std::size_t>(v); };
  switch (kind) {
    case LayerKind::kConv2d:
      return {{name + ".weight",
               S{u(kernel_time * kernel_freq * in_channels), u(out_channels)}},
              {name + ".bias", S{u(out_channels)}}};
    case LayerKind::kGroupedLinear: {
      std::vector<std::pair<std::string, S>> out{
          {name + ".weight",
           S{u(groups), u(in_features / groups), u(out_features / groups)}}};
      if (bias) out.push_back({name + ".bias", S{u(out_features)}});
      return out;
    }
    case LayerKind::kGru:
      return {{name + ".w_ih", S{u(in_features), u(3 * hidden)}},
              {name + ".w_hh", S{u(hidden), u(3 * hidden)}},
              {name + ".b_ih", S{u(3 * hidden)}},
              {name + ".b_hh", S{u(3 * hidden)}}};
    default:
      return {};
  }
}

int LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::kConv2d: return in_channels * kernel_time * kernel_freq;
    case LayerKind::kGroupedLinear: return in_features / groups;
    case LayerKind::kGru: return hidden;
    default: return 1;
  }
}

std::int64_t count_params(std::span<const LayerSpec> layers) {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    for (const auto& [name, shape] : l.param_shapes()) {
      n += static_cast<std::int64_t>(Tensor::count(shape));
    }
  }
  return n;
}

std::int64_t count_macs_per_frame(std::span<const LayerSpec> layers) {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::kConv2d:
        n += std::int64_t{l.out_channels} * l.in_channels * l.kernel_time *
             l.kernel_freq * l.out_freq();
        break;
      case LayerKind::kGroupedLinear:
        n += std::int64_t{l.in_features} * l.out_features / l.groups;
        break;
      case LayerKind::kGru:
        n += 3 * (std::int64_t{l.in_features} * l.hidden +
                  std::int64_t{l.hidden} * l.hidden);
        break;
      default:
        break;
    }
  }
  return n;
}

std::int64_t count_macs(std::span<const LayerSpec> layers,
                        const DspConfig& cfg) {
  return std::llround(static_cast<double>(count_macs_per_frame(layers)) *
                      cfg.frames_per_second());
}

void init_params(std::span<const LayerSpec> layers, std::uint64_t seed,
                 ParamStore& store) {
  std::mt19937_64 rng(seed);
  for (const auto& l : layers) {
    l.validate();
    const double bound = std::sqrt(1.0 / l.fan_in());
    for (const auto& [name, shape] : l.param_shapes()) {
      Tensor t(shape);
      for (double& v : t.vec()) v = (2.0 * unit_uniform(rng) - 1.0) * bound;
      store.set(name, std::move(t));
    }
  }
}

template <typename T>
void linear_step(const LayerSpec& spec, std::span<const T> weight,
                 std::span<const T> bias, std::span<const T> x,
                 std::span<T> y) {
  const int ig = spec.in_features / spec.groups;
  const int og = spec.out_features / spec.groups;
  if (bias.empty()) {
    std::fill(y.begin(), y.begin() + spec.out_features, T(0));
  } else {
    std::copy(bias.begin(), bias.begin() + spec.out_features, y.begin());
  }
  for (int g = 0; g < spec.groups; ++g) {
    T* __restrict yg = y.data() + g * og;
    for (int i = 0; i < ig; ++i) {
      const T xi = x[g * ig + i];
      const T* __restrict w = weight.data() + (std::size_t(g) * ig + i) * og;
      for (int o = 0; o < og; ++o) yg[o] += xi * w[o];
    }
  }
}

template <typename T>
void conv2d_step(const LayerSpec& spec, std::span<const T> weight,
                 std::span<const T> bias,
                 std::span<const std::span<const T>> frames, std::span<T> y) {
  const int cin = spec.in_channels;
  const int cout = spec.out_channels;
  const int kf = spec.kernel_freq;
  const int fout = spec.out_freq();
  const int pad = spec.pad_freq();
  for (int fo = 0; fo < fout; ++fo) {
    T* __restrict yo = y.data() + std::size_t(fo) * cout;
    std::copy(bias.begin(), bias.begin() + cout, yo);
    for (int dt = 0; dt < spec.kernel_time; ++dt) {
      if (frames[dt].empty()) continue;
      for (int df = 0; df < kf; ++df) {
        const int fi = fo * spec.stride_freq - pad + df;
        if (fi < 0 || fi >= spec.in_freq) continue;
        const T* xin = frames[dt].data() + std::size_t(fi) * cin;
        const T* wbase = weight.data() + std::size_t(dt * kf + df) * cin * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const T xv = xin[ci];
          const T* __restrict w = wbase + std::size_t(ci) * cout;
          for (int co = 0; co < cout; ++co) yo[co] += xv * w[co];
        }
      }
    }
  }
}

namespace {

template <typename T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

}  // namespace

template <typename T>
void gru_step(const LayerSpec& spec, std::span<const T> w_ih,
              std::span<const T> w_hh, std::span<const T> b_ih,
              std::span<const T> b_hh, std::span<const T> x,
              std::span<const T> h_prev, std::span<T> h_out,
              std::span<T> scratch, GruCache<T>* cache) {
  const int in = spec.in_features;
  const int h = spec.hidden;
  const int h3 = 3 * h;
  T* __restrict gx = scratch.data();
  T* __restrict gh = scratch.data() + h3;
  std::copy(b_ih.begin(), b_ih.begin() + h3, gx);
  std::copy(b_hh.begin(), b_hh.begin() + h3, gh);
  for (int i = 0; i < in; ++i) {
    const T xi = x[i];
    const T* __restrict w = w_ih.data() + std::size_t(i) * h3;
    for (int k = 0; k < h3; ++k) gx[k] += xi * w[k];
  }
  for (int j = 0; j < h; ++j) {
    const T hj = h_prev[j];
    const T* __restrict w = w_hh.data() + std::size_t(j) * h3;
    for (int k = 0; k < h3; ++k) gh[k] += hj * w[k];
  }
  if (cache) {
    cache->gates.resize(h3);
    cache->hn.resize(h);
  }
  for (int j = 0; j < h; ++j) {
    const T r = sigmoid(gx[j] + gh[j]);
    const T z = sigmoid(gx[h + j] + gh[h + j]);
    const T n = std::tanh(gx[2 * h + j] + r * gh[2 * h + j]);
    const T prev = h_prev[j];
    h_out[j] = (T(1) - z) * n + z * prev;
    if (cache) {
      cache->gates[j] = r;
      cache->gates[h + j] = z;
      cache->gates[2 * h + j] = n;
      cache->hn[j] = gh[2 * h + j];
    }
  }
}

template <typename T>
void activate(Activation act, std::span<T> values) {
  switch (act) {
    case Activation::kSigmoid:
      for (T& v : values) v = sigmoid(v);
      break;
    case Activation::kTanh:
      for (T& v : values) v = std::tanh(v);
      break;
    case Activation::kRelu:
      for (T& v : values) v = v > T(0) ? v : T(0);
      break;
  }
}

#define PSE_INSTANTIATE_LAYERS(T)                                             \
  template void linear_step<T>(const LayerSpec&, std::span<const T>,          \
                               std::span<const T>, std::span<const T>,        \
                               std::span<T>);                                 \
  template void conv2d_step<T>(const LayerSpec&, std::span<const T>,          \
                               std::span<const T>,                            \
                               std::span<const std::span<const T>>,           \
                               std::span<T>);                                 \
  template void gru_step<T>(const LayerSpec&, std::span<const T>,             \
                            std::span<const T>, std::span<const T>,           \
                            std::span<const T>, std::span<const T>,           \
                            std::span<const T>, std::span<T>, std::span<T>,   \
                            GruCache<T>*);                                    \
  template void activate<T>(Activation, std::span<T>);

PSE_INSTANTIATE_LAYERS(float)
PSE_INSTANTIATE_LAYERS(double)

#undef PSE_INSTANTIATE_LAYERS

void linear_backward(const LayerSpec& spec, std::span<const double> weight,
                     std::span<const double> x, std::span<const double> gy,
                     std::size_t frames, std::span<double> gw,
                     std::span<double> gb, std::span<double> gx) {
  const int in = spec.in_features;
  const int out = spec.out_features;
  const int ig = in / spec.groups;
  const int og = out / spec.groups;
  for (std::size_t t = 0; t < frames; ++t) {
    const double* xt = x.data() + t * in;
    const double* gyt = gy.data() + t * out;
    if (!gb.empty()) {
      for (int o = 0; o < out; ++o) gb[o] += gyt[o];
    }
    for (int g = 0; g < spec.groups; ++g) {
      const double* gyg = gyt + g * og;
      for (int i = 0; i < ig; ++i) {
        const std::size_t row = std::size_t(g) * ig + i;
        const double* w = weight.data() + row * og;
        if (!gw.empty()) {
          const double xi = xt[g * ig + i];
          double* __restrict gwr = gw.data() + row * og;
          for (int o = 0; o < og; ++o) gwr[o] += xi * gyg[o];
        }
        if (!gx.empty()) {
          double acc = 0.0;
          for (int o = 0; o < og; ++o) acc += w[o] * gyg[o];
          gx[t * in + g * ig + i] += acc;
        }
      }
    }
  }
}

void conv2d_backward(const LayerSpec& spec, std::span<const double> weight,
                     std::span<const double> x, std::span<const double> gy,
                     std::size_t frames, std::span<double> gw,
                     std::span<double> gb, std::span<double> gx) {
  const int cin = spec.in_channels;
  const int cout = spec.out_channels;
  const int kf = spec.kernel_freq;
  const int kt = spec.kernel_time;
  const int fout = spec.out_freq();
  const int pad = spec.pad_freq();
  const std::size_t in_size = std::size_t(spec.in_freq) * cin;
  const std::size_t out_size = std::size_t(fout) * cout;
  for (std::size_t t = 0; t < frames; ++t) {
    for (int fo = 0; fo < fout; ++fo) {
      const double* g = gy.data() + t * out_size + std::size_t(fo) * cout;
      if (!gb.empty()) {
        for (int co = 0; co < cout; ++co) gb[co] += g[co];
      }
      for (int dt = 0; dt < kt; ++dt) {
        const long src = static_cast<long>(t) - (kt - 1) + dt;
        if (src < 0) continue;
        for (int df = 0; df < kf; ++df) {
          const int fi = fo * spec.stride_freq - pad + df;
          if (fi < 0 || fi >= spec.in_freq) continue;
          const std::size_t xoff = std::size_t(src) * in_size + std::size_t(fi) * cin;
          for (int ci = 0; ci < cin; ++ci) {
            const std::size_t row = std::size_t(dt * kf + df) * cin + ci;
            const double* w = weight.data() + row * cout;
            if (!gw.empty()) {
              const double xv = x[xoff + ci];
              double* __restrict gwr = gw.data() + row * cout;
              for (int co = 0; co < cout; ++co) gwr[co] += xv * g[co];
            }
            if (!gx.empty()) {
              double acc = 0.0;
              for (int co = 0; co < cout; ++co) acc += w[co] * g[co];
              gx[xoff + ci] += acc;
            }
          }
        }
      }
    }
  }
}

void gru_forward_seq(const LayerSpec& spec, std::span<const double> w_ih,
                     std::span<const double> w_hh, std::span<const double> b_ih,
                     std::span<const double> b_hh, std::span<const double> x,
                     std::size_t frames, std::span<double> h_seq,
                     std::vector<GruCache<double>>& caches) {
  const std::size_t in = spec.in_features;
  const std::size_t h = spec.hidden;
  caches.assign(frames, {});
  std::vector<double> zero(h, 0.0);
  std::vector<double> scratch(6 * h);
  for (std::size_t t = 0; t < frames; ++t) {
    std::span<const double> prev =
        t == 0 ? std::span<const double>(zero) : h_seq.subspan((t - 1) * h, h);
    gru_step<double>(spec, w_ih, w_hh, b_ih, b_hh, x.subspan(t * in, in), prev,
                     h_seq.subspan(t * h, h), scratch, &caches[t]);
  }
}

void gru_backward(const LayerSpec& spec, std::span<const double> w_ih,
                  std::span<const double> w_hh, std::span<const double> x,
                  std::span<const double> h_seq,
                  const std::vector<GruCache<double>>& caches,
                  std::span<const double> gh_seq, std::size_t frames,
                  std::span<double> gw_ih, std::span<double> gw_hh,
                  std::span<double> gb_ih, std::span<double> gb_hh,
                  std::span<double> gx) {
  const int in = spec.in_features;
  const int h = spec.hidden;
  const int h3 = 3 * h;
  std::vector<double> dh_next(h, 0.0);
  std::vector<double> dh(h);
  std::vector<double> dgx(h3);
  std::vector<double> dgh(h3);
  for (std::size_t tt = frames; tt-- > 0;) {
    const auto& c = caches[tt];
    const double* hprev = tt == 0 ? nullptr : h_seq.data() + (tt - 1) * h;
    for (int j = 0; j < h; ++j) dh[j] = gh_seq[tt * h + j] + dh_next[j];
    for (int j = 0; j < h; ++j) {
      const double r = c.gates[j];
      const double z = c.gates[h + j];
      const double n = c.gates[2 * h + j];
      const double hp = hprev ? hprev[j] : 0.0;
      const double dn = dh[j] * (1.0 - z);
      const double dz = dh[j] * (hp - n);
      const double dn_pre = dn * (1.0 - n * n);
      const double dr = dn_pre * c.hn[j];
      const double dz_pre = dz * z * (1.0 - z);
      const double dr_pre = dr * r * (1.0 - r);
      dgx[j] = dr_pre;
      dgx[h + j] = dz_pre;
      dgx[2 * h + j] = dn_pre;
      dgh[j] = dr_pre;
      dgh[h + j] = dz_pre;
      dgh[2 * h + j] = dn_pre * r;
      dh_next[j] = dh[j] * z;
    }
    for (int k = 0; k < h3; ++k) {
      gb_ih[k] += dgx[k];
      gb_hh[k] += dgh[k];
    }
    const double* xt = x.data() + tt * in;
    for (int i = 0; i < in; ++i) {
      const double* w = w_ih.data() + std::size_t(i) * h3;
      double* __restrict gw = gw_ih.data() + std::size_t(i) * h3;
      const double xi = xt[i];
      double acc = 0.0;
      for (int k = 0; k < h3; ++k) {
        gw[k] += xi * dgx[k];
        acc += w[k] * dgx[k];
      }
      if (!gx.empty()) gx[tt * in + i] += acc;
    }
    for (int j = 0; j < h; ++j) {
      const double* w = w_hh.data() + std::size_t(j) * h3;
      double acc = 0.0;
      for (int k = 0; k < h3; ++k) acc += w[k] * dgh[k];
      if (hprev) {
        double* __restrict gw = gw_hh.data() + std::size_t(j) * h3;
        for (int k = 0; k < h3; ++k) gw[k] += hprev[j] * dgh[k];
      }
      dh_next[j] += acc;
    }
  }
}

namespace {

std::span<const double> param_data(const ParamStore& params,
                                   const std::string& name) {
  return params.at(name).data();
}

void expect_size(const Tensor& t, std::size_t n, const LayerSpec& spec) {
  if (t.numel() != n) {
    throw DomainError("layer '" + spec.name + "' expects input of size " +
                      std::to_string(n) + ", got " + std::to_string(t.numel()));
  }
}

}  // namespace

std::pair<Tensor, std::optional<Tensor>> layer_forward(
    const LayerSpec& spec, const ParamStore& params,
    std::span<const Tensor> inputs, const std::optional<Tensor>& recurrent_state) {
  spec.validate();
  auto out_shape = Tensor::Shape{static_cast<std::size_t>(spec.output_size())};
  switch (spec.kind) {
    case LayerKind::kConv2d: {
      if (inputs.size() != static_cast<std::size_t>(spec.kernel_time)) {
        throw DomainError("conv2d '" + spec.name + "' expects " +
                          std::to_string(spec.kernel_time) + " time frames");
      }
      std::vector<std::span<const double>> frames;
      for (const auto& in : inputs) {
        expect_size(in, spec.input_size(), spec);
        frames.push_back(in.data());
      }
      Tensor y(out_shape);
      conv2d_step<double>(spec, param_data(params, spec.name + ".weight"),
                          param_data(params, spec.name + ".bias"), frames,
                          y.data());
      return {std::move(y), std::nullopt};
    }
    case LayerKind::kGroupedLinear: {
      if (inputs.size() != 1) throw DomainError("grouped-linear takes one input");
      expect_size(inputs[0], spec.in_features, spec);
      Tensor y(out_shape);
      std::span<const double> bias;
      if (spec.bias) bias = param_data(params, spec.name + ".bias");
      linear_step<double>(spec, param_data(params, spec.name + ".weight"), bias,
                          inputs[0].data(), y.data());
      return {std::move(y), std::nullopt};
    }
    case LayerKind::kGru: {
      if (inputs.size() != 1) throw DomainError("gru-cell takes one input");
      expect_size(inputs[0], spec.in_features, spec);
      Tensor h(out_shape);
      if (recurrent_state) {
        expect_size(*recurrent_state, spec.hidden, spec);
        h = *recurrent_state;
      }
      Tensor next(out_shape);
      std::vector<double> scratch(6 * spec.hidden);
      gru_step<double>(spec, param_data(params, spec.name + ".w_ih"),
                       param_data(params, spec.name + ".w_hh"),
                       param_data(params, spec.name + ".b_ih"),
                       param_data(params, spec.name + ".b_hh"),
                       inputs[0].data(), h.data(), next.data(), scratch);
      return {next, next};
    }
    case LayerKind::kPointwise: {
      if (inputs.size() != 1) throw DomainError("pointwise takes one input");
      expect_size(inputs[0], spec.in_features, spec);
      Tensor y = inputs[0];
      activate<double>(spec.activation, y.data());
      return {std::move(y), std::nullopt};
    }
    case LayerKind::kConcat: {
      if (inputs.size() != spec.parts.size()) {
        throw DomainError("concat '" + spec.name + "' expects " +
                          std::to_string(spec.parts.size()) + " inputs");
      }
      std::vector<double> joined;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        expect_size(inputs[i], spec.parts[i], spec);
        joined.insert(joined.end(), inputs[i].data().begin(),
                      inputs[i].data().end());
      }
      return {Tensor(out_shape, std::move(joined)), std::nullopt};
    }
  }
  throw CapabilityError("unsupported layer kind");
}

}  // namespace pse

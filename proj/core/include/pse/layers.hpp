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
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pse/dsp.hpp"
#include "pse/random.hpp"
#include "pse/tensor.hpp"

namespace pse {

enum class LayerKind { kConv2d, kGroupedLinear, kGru, kPointwise, kConcat };
enum class Activation { kSigmoid, kTanh, kRelu };

const char* to_string(LayerKind kind);
const char* to_string(Activation act);

// Static description of one layer. Activations are channel-last: a conv2d
// frame is [freq][channel], flattened.
//
//   conv2d          weight [kt*kf*cin][cout], bias [cout]; causal in time,
//                   padding (kf-1)/2 on both frequency edges
//   grouped-linear  weight [groups][in/groups][out/groups], bias [out]
//   gru-cell        w_ih [in][3H], w_hh [H][3H], b_ih [3H], b_hh [3H];
//                   gate order r, z, n
struct LayerSpec {
  LayerKind kind = LayerKind::kGroupedLinear;
  std::string name;

  int in_channels = 0;
  int out_channels = 0;
  int kernel_time = 0;
  int kernel_freq = 0;
  int stride_freq = 1;
  int in_freq = 0;

  int in_features = 0;
  int out_features = 0;
  int groups = 1;
  bool bias = true;

  int hidden = 0;

  Activation activation = Activation::kRelu;
  std::vector<int> parts;

  static LayerSpec conv2d(std::string name, int cin, int cout, int kt, int kf,
                          int stride_f, int in_freq);
  static LayerSpec grouped_linear(std::string name, int in, int out,
                                  int groups = 1, bool bias = true);
  static LayerSpec gru(std::string name, int in, int hidden);
  static LayerSpec pointwise(std::string name, Activation act, int size);
  static LayerSpec concat(std::string name, std::vector<int> parts);

  int out_freq() const;
  int input_size() const;
  int output_size() const;
  int pad_freq() const { return (kernel_freq - 1) / 2; }

  // Throws ConfigError for non-positive or indivisible dimensions.
  void validate() const;

  // Names and shapes of the trainable tensors, in a fixed order.
  std::vector<std::pair<std::string, Tensor::Shape>> param_shapes() const;
  int fan_in() const;
};

std::int64_t count_params(std::span<const LayerSpec> layers);
std::int64_t count_macs_per_frame(std::span<const LayerSpec> layers);
// MACs per second of audio: per-frame count times frames per second.
std::int64_t count_macs(std::span<const LayerSpec> layers, const DspConfig& cfg);

// Uniform in +-sqrt(1/fan_in) for every tensor, drawn in layer order.
void init_params(std::span<const LayerSpec> layers, std::uint64_t seed,
                 ParamStore& store);


// --- Frame kernels --------------------------------------------------------

template <typename T>
void linear_step(const LayerSpec& spec, std::span<const T> weight,
                 std::span<const T> bias, std::span<const T> x,
                 std::span<T> y);

// `frames[dt]` is the input frame at time t - (kt-1) + dt; empty spans are
// zero frames.
template <typename T>
void conv2d_step(const LayerSpec& spec, std::span<const T> weight,
                 std::span<const T> bias,
                 std::span<const std::span<const T>> frames, std::span<T> y);

// Gate activations kept for the backward pass, each [3H]: r, z, n and the
// recurrent candidate term (W_hn h + b_hn).
template <typename T>
struct GruCache {
  std::vector<T> gates;
  std::vector<T> hn;
};

template <typename T>
void gru_step(const LayerSpec& spec, std::span<const T> w_ih,
              std::span<const T> w_hh, std::span<const T> b_ih,
              std::span<const T> b_hh, std::span<const T> x,
              std::span<const T> h_prev, std::span<T> h_out,
              std::span<T> scratch, GruCache<T>* cache = nullptr);

template <typename T>
void activate(Activation act, std::span<T> values);

// --- Sequence backward kernels (double precision) -------------------------

// x [T][in], gy [T][out]; accumulates into gw, gb, gx.
void linear_backward(const LayerSpec& spec, std::span<const double> weight,
                     std::span<const double> x, std::span<const double> gy,
                     std::size_t frames, std::span<double> gw,
                     std::span<double> gb, std::span<double> gx);

void conv2d_backward(const LayerSpec& spec, std::span<const double> weight,
                     std::span<const double> x, std::span<const double> gy,
                     std::size_t frames, std::span<double> gw,
                     std::span<double> gb, std::span<double> gx);

// Forward sequence with caches for BPTT; initial state is zero.
void gru_forward_seq(const LayerSpec& spec, std::span<const double> w_ih,
                     std::span<const double> w_hh, std::span<const double> b_ih,
                     std::span<const double> b_hh, std::span<const double> x,
                     std::size_t frames, std::span<double> h_seq,
                     std::vector<GruCache<double>>& caches);

void gru_backward(const LayerSpec& spec, std::span<const double> w_ih,
                  std::span<const double> w_hh, std::span<const double> x,
                  std::span<const double> h_seq,
                  const std::vector<GruCache<double>>& caches,
                  std::span<const double> gh_seq, std::size_t frames,
                  std::span<double> gw_ih, std::span<double> gw_hh,
                  std::span<double> gb_ih, std::span<double> gb_hh,
                  std::span<double> gx);

// Single-step forward of one layer from a parameter store (tensors named
// "<layer>.<param>"). For gru-cell, `recurrent_state` is the previous hidden
// state (zero when absent) and the updated state is returned alongside the
// output. Concat joins all inputs; the other kinds take exactly one.
std::pair<Tensor, std::optional<Tensor>> layer_forward(
    const LayerSpec& spec, const ParamStore& params,
    std::span<const Tensor> inputs,
    const std::optional<Tensor>& recurrent_state = std::nullopt);

}  // namespace pse

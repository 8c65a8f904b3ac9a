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

#include "pse/autograd.hpp"

#include <memory>

#include "pse/error.hpp"

namespace pse {

Tape::Id Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::Id Tape::parameter(const std::string& name, Tensor value) {
  Node n;
  n.op = "parameter";
  n.value = std::move(value);
  n.requires_grad = true;
  n.param = name;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::Id Tape::record(std::string op, Tensor value, std::vector<Id> inputs,
                      BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (Id in : inputs) {
    if (in != kNone && nodes_.at(in).requires_grad) n.requires_grad = true;
  }
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tensor& Tape::grad(Id id) {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(std::span<const std::pair<Id, Tensor>> seeds) {
  for (const auto& [id, seed] : seeds) {
    Tensor& g = grad(id);
    if (g.numel() != seed.numel()) {
      throw DomainError("gradient seed shape does not match node '" +
                        nodes_.at(id).op + "'");
    }
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
  }
  for (Id id = nodes_.size(); id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad || n.op == "parameter") continue;
    if (!n.backward) {
      throw CapabilityError("no gradient rule for op '" + n.op + "'");
    }
    n.backward(*this, id);
  }
}

void Tape::backward(Id scalar_output) {
  if (value(scalar_output).numel() != 1) {
    throw DomainError("backward(id) needs a scalar output");
  }
  std::pair<Id, Tensor> seed{scalar_output, Tensor({1}, 1.0)};
  backward(std::span<const std::pair<Id, Tensor>>(&seed, 1));
}

ParamStore Tape::gradients() const {
  ParamStore out;
  for (const Node& n : nodes_) {
    if (n.param.empty()) continue;
    out.set(n.param, n.has_grad ? n.grad : Tensor(n.value.shape()));
  }
  return out;
}

std::map<std::string, Tape::Id> bind_params(Tape& tape,
                                            const ParamStore& params) {
  std::map<std::string, Tape::Id> ids;
  for (const auto& [name, t] : params.tensors()) {
    Tensor v = t;
    v.set_dtype(DType::kF64);
    ids[name] = tape.parameter(name, std::move(v));
  }
  return ids;
}

namespace ag {
namespace {

std::size_t frames_of(const Tensor& x, std::size_t width, const char* op) {
  if (width == 0 || x.numel() % width != 0) {
    throw DomainError(std::string(op) + ": input width mismatch (" +
                      std::to_string(x.numel()) + " values, width " +
                      std::to_string(width) + ")");
  }
  return x.numel() / width;
}

std::span<double> grad_or_empty(Tape& tape, Tape::Id id) {
  if (!tape.requires_grad(id)) return {};
  return tape.grad(id).data();
}

}  // namespace

Tape::Id grouped_linear(Tape& tape, const LayerSpec& spec, Tape::Id x,
                        Tape::Id weight, Tape::Id bias) {
  const Tensor& xv = tape.value(x);
  const std::size_t frames = frames_of(xv, spec.in_features, "grouped-linear");
  const std::size_t out = spec.out_features;
  Tensor y({frames, out});
  std::span<const double> b;
  if (bias != Tape::kNone) b = tape.value(bias).data();
  for (std::size_t t = 0; t < frames; ++t) {
    linear_step<double>(spec, tape.value(weight).data(), b,
                        xv.data().subspan(t * spec.in_features, spec.in_features),
                        y.data().subspan(t * out, out));
  }
  return tape.record(
      "grouped-linear", std::move(y), {x, weight, bias},
      [spec, frames](Tape& tp, Tape::Id self) {
        const auto& in = tp.inputs(self);
        std::span<double> gw = grad_or_empty(tp, in[1]);
        std::span<double> gb =
            in[2] == Tape::kNone ? std::span<double>{} : grad_or_empty(tp, in[2]);
        std::span<double> gx = grad_or_empty(tp, in[0]);
        linear_backward(spec, tp.value(in[1]).data(), tp.value(in[0]).data(),
                        tp.grad(self).data(), frames, gw, gb, gx);
      });
}

Tape::Id conv2d(Tape& tape, const LayerSpec& spec, Tape::Id x, Tape::Id weight,
                Tape::Id bias) {
  const Tensor& xv = tape.value(x);
  const std::size_t in_size = spec.input_size();
  const std::size_t frames = frames_of(xv, in_size, "conv2d");
  const std::size_t out = spec.output_size();
  Tensor y({frames, out});
  std::vector<std::span<const double>> window(spec.kernel_time);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int dt = 0; dt < spec.kernel_time; ++dt) {
      const long src = static_cast<long>(t) - (spec.kernel_time - 1) + dt;
      window[dt] = src < 0 ? std::span<const double>{}
                           : xv.data().subspan(std::size_t(src) * in_size, in_size);
    }
    conv2d_step<double>(spec, tape.value(weight).data(),
                        tape.value(bias).data(), window,
                        y.data().subspan(t * out, out));
  }
  return tape.record(
      "conv2d", std::move(y), {x, weight, bias},
      [spec, frames](Tape& tp, Tape::Id self) {
        const auto& in = tp.inputs(self);
        conv2d_backward(spec, tp.value(in[1]).data(), tp.value(in[0]).data(),
                        tp.grad(self).data(), frames, grad_or_empty(tp, in[1]),
                        grad_or_empty(tp, in[2]), grad_or_empty(tp, in[0]));
      });
}

Tape::Id gru(Tape& tape, const LayerSpec& spec, Tape::Id x, Tape::Id w_ih,
             Tape::Id w_hh, Tape::Id b_ih, Tape::Id b_hh) {
  const Tensor& xv = tape.value(x);
  const std::size_t frames = frames_of(xv, spec.in_features, "gru-cell");
  Tensor h({frames, static_cast<std::size_t>(spec.hidden)});
  auto caches = std::make_shared<std::vector<GruCache<double>>>();
  gru_forward_seq(spec, tape.value(w_ih).data(), tape.value(w_hh).data(),
                  tape.value(b_ih).data(), tape.value(b_hh).data(), xv.data(),
                  frames, h.data(), *caches);
  return tape.record(
      "gru-cell", std::move(h), {x, w_ih, w_hh, b_ih, b_hh},
      [spec, frames, caches](Tape& tp, Tape::Id self) {
        const auto& in = tp.inputs(self);
        // Parameter gradients are always materialized for a GRU.
        gru_backward(spec, tp.value(in[1]).data(), tp.value(in[2]).data(),
                     tp.value(in[0]).data(), tp.value(self).data(), *caches,
                     tp.grad(self).data(), frames, tp.grad(in[1]).data(),
                     tp.grad(in[2]).data(), tp.grad(in[3]).data(),
                     tp.grad(in[4]).data(), grad_or_empty(tp, in[0]));
      });
}

Tape::Id pointwise(Tape& tape, Activation act, Tape::Id x) {
  Tensor y = tape.value(x);
  activate<double>(act, y.data());
  return tape.record(
      std::string("pointwise-") + to_string(act), std::move(y), {x},
      [act](Tape& tp, Tape::Id self) {
        const Tape::Id in = tp.inputs(self)[0];
        if (!tp.requires_grad(in)) return;
        const auto y = tp.value(self).data();
        const auto gy = tp.grad(self).data();
        auto gx = tp.grad(in).data();
        for (std::size_t i = 0; i < y.size(); ++i) {
          double d = 0.0;
          switch (act) {
            case Activation::kSigmoid: d = y[i] * (1.0 - y[i]); break;
            case Activation::kTanh: d = 1.0 - y[i] * y[i]; break;
            case Activation::kRelu: d = y[i] > 0.0 ? 1.0 : 0.0; break;
          }
          gx[i] += gy[i] * d;
        }
      });
}

Tape::Id concat(Tape& tape, std::span<const Tape::Id> parts) {
  if (parts.empty()) throw DomainError("concat of nothing");
  std::vector<std::size_t> widths;
  const std::size_t frames = tape.value(parts[0]).dim(0);
  std::size_t total = 0;
  for (Tape::Id p : parts) {
    const Tensor& v = tape.value(p);
    if (v.rank() != 2 || v.dim(0) != frames) {
      throw DomainError("concat parts must be [frames, features] with equal "
                        "frame counts");
    }
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor y({frames, total});
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      auto src = tape.value(parts[i]).data().subspan(t * widths[i], widths[i]);
      std::copy(src.begin(), src.end(), y.data().begin() + t * total + off);
      off += widths[i];
    }
  }
  return tape.record(
      "concat", std::move(y), std::vector<Tape::Id>(parts.begin(), parts.end()),
      [widths, frames, total](Tape& tp, Tape::Id self) {
        const auto inputs = tp.inputs(self);
        const auto gy = tp.grad(self).data();
        std::size_t off = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (tp.requires_grad(inputs[i])) {
            auto gx = tp.grad(inputs[i]).data();
            for (std::size_t t = 0; t < frames; ++t) {
              for (std::size_t j = 0; j < widths[i]; ++j) {
                gx[t * widths[i] + j] += gy[t * total + off + j];
              }
            }
          }
          off += widths[i];
        }
      });
}

Tape::Id layer(Tape& tape, const LayerSpec& spec,
               const std::map<std::string, Tape::Id>& params, Tape::Id x) {
  auto p = [&](const std::string& suffix) {
    auto it = params.find(spec.name + suffix);
    if (it == params.end()) {
      throw UsageError("missing parameter '" + spec.name + suffix + "'");
    }
    return it->second;
  };
  switch (spec.kind) {
    case LayerKind::kConv2d:
      return conv2d(tape, spec, x, p(".weight"), p(".bias"));
    case LayerKind::kGroupedLinear:
      return grouped_linear(tape, spec, x, p(".weight"),
                            spec.bias ? p(".bias") : Tape::kNone);
    case LayerKind::kGru:
      return gru(tape, spec, x, p(".w_ih"), p(".w_hh"), p(".b_ih"), p(".b_hh"));
    case LayerKind::kPointwise:
      return pointwise(tape, spec.activation, x);
    case LayerKind::kConcat:
      break;
  }
  throw CapabilityError("ag::layer cannot apply a concat; use ag::concat");
}

Tape::Id half_squared_error(Tape& tape, Tape::Id x, const Tensor& target) {
  const Tensor& xv = tape.value(x);
  if (xv.numel() != target.numel()) {
    throw DomainError("half_squared_error: size mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const double d = xv[i] - target[i];
    acc += d * d;
  }
  return tape.record("half-squared-error", Tensor({1}, 0.5 * acc), {x},
                     [target](Tape& tp, Tape::Id self) {
                       const Tape::Id in = tp.inputs(self)[0];
                       if (!tp.requires_grad(in)) return;
                       const double g = tp.grad(self)[0];
                       const auto xv = tp.value(in).data();
                       auto gx = tp.grad(in).data();
                       for (std::size_t i = 0; i < xv.size(); ++i) {
                         gx[i] += g * (xv[i] - target[i]);
                       }
                     });
}

Tape::Id scale(Tape& tape, Tape::Id x, double factor) {
  Tensor y = tape.value(x);
  for (double& v : y.vec()) v *= factor;
  return tape.record("scale", std::move(y), {x},
                     [factor](Tape& tp, Tape::Id self) {
                       const Tape::Id in = tp.inputs(self)[0];
                       if (!tp.requires_grad(in)) return;
                       const auto gy = tp.grad(self).data();
                       auto gx = tp.grad(in).data();
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         gx[i] += factor * gy[i];
                       }
                     });
}

}  // namespace ag
}  // namespace pse

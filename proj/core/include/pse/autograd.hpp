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

#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pse/layers.hpp"
#include "pse/tensor.hpp"

namespace pse {

// Reverse-mode gradient tape over the supported layer kinds. Nodes hold
// double-precision sequence tensors of shape [frames, features]. Each
// recorded op carries its own vector-Jacobian product; a node recorded
// without one raises CapabilityError if a gradient reaches it.
class Tape {
 public:
  using Id = std::size_t;
  using BackwardFn = std::function<void(Tape&, Id)>;
  static constexpr Id kNone = std::numeric_limits<Id>::max();

  Id constant(Tensor value);
  Id parameter(const std::string& name, Tensor value);
  Id record(std::string op, Tensor value, std::vector<Id> inputs,
            BackwardFn backward);

  const Tensor& value(Id id) const { return nodes_.at(id).value; }
  const std::vector<Id>& inputs(Id id) const { return nodes_.at(id).inputs; }
  const std::string& op(Id id) const { return nodes_.at(id).op; }
  bool requires_grad(Id id) const {
    return id != kNone && nodes_.at(id).requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(Id id);
  bool has_grad(Id id) const { return nodes_.at(id).has_grad; }

  // Seeds d(loss)/d(node) for each pair and sweeps the tape once.
  void backward(std::span<const std::pair<Id, Tensor>> seeds);
  // Scalar-output convenience: seed 1.
  void backward(Id scalar_output);

  // Gradient per parameter node, zero where nothing flowed.
  ParamStore gradients() const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<Id> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param;
    Tensor grad;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
};

// Binds every tensor in `params` as a parameter node.
std::map<std::string, Tape::Id> bind_params(Tape& tape,
                                            const ParamStore& params);

namespace ag {

// All sequence inputs are [frames, features].
Tape::Id grouped_linear(Tape& tape, const LayerSpec& spec, Tape::Id x,
                        Tape::Id weight, Tape::Id bias);
Tape::Id conv2d(Tape& tape, const LayerSpec& spec, Tape::Id x, Tape::Id weight,
                Tape::Id bias);
Tape::Id gru(Tape& tape, const LayerSpec& spec, Tape::Id x, Tape::Id w_ih,
             Tape::Id w_hh, Tape::Id b_ih, Tape::Id b_hh);
Tape::Id pointwise(Tape& tape, Activation act, Tape::Id x);
Tape::Id concat(Tape& tape, std::span<const Tape::Id> parts);

// Applies a layer by name lookup in `params` (see bind_params).
Tape::Id layer(Tape& tape, const LayerSpec& spec,
               const std::map<std::string, Tape::Id>& params, Tape::Id x);

// 0.5 * ||x - target||^2 as a scalar node.
Tape::Id half_squared_error(Tape& tape, Tape::Id x, const Tensor& target);
Tape::Id scale(Tape& tape, Tape::Id x, double factor);

}  // namespace ag
}  // namespace pse

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
#include <random>

namespace pse {

// Draws built only on the raw 64-bit engine output, so sequences are the
// same on every standard library.

// Uniform in [0, 1).
double unit_uniform(std::mt19937_64& rng);

// Standard normal via Box-Muller; consumes two engine outputs per call.
double standard_normal(std::mt19937_64& rng);

// Uniform integer in [0, n). n must be positive.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

// Independent stream seed for item `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace pse

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
#include <stdexcept>
#include <string>

namespace pse {

// Error categories map onto CLI exit codes: usage/config -> 1,
// domain/format -> 2, capability/training/runtime -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset),
        has_offset_(true) {}
  explicit FormatError(const std::string& what) : Error(what), detail_(what) {}

  std::uint64_t offset() const { return offset_; }
  bool has_offset() const { return has_offset_; }

  // Same error with `context` (typically a file name) prepended.
  FormatError prefixed(const std::string& context) const {
    return has_offset_ ? FormatError(context + ": " + detail_, offset_)
                       : FormatError(context + ": " + detail_);
  }

 private:
  std::string detail_;
  std::uint64_t offset_ = 0;
  bool has_offset_ = false;
};

class CapabilityError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::int64_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}

  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace pse

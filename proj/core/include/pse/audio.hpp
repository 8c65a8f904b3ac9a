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

#include <filesystem>
#include <string>
#include <vector>

namespace pse {

// Mono linear PCM in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }
  double seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate
                           : 0.0;
  }
};

// Throws DomainError when the sample rate is non-positive or a sample is not
// finite.
void validate(const AudioBuffer& audio);

enum class WavEncoding { kPcm16, kFloat32 };

// Reads a mono little-endian WAV file (16-bit PCM or 32-bit float).
// Multichannel files and other encodings raise FormatError.
AudioBuffer read_wav(const std::filesystem::path& path);

// Writes through a temporary file and renames it into place.
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
               WavEncoding encoding = WavEncoding::kFloat32);

std::vector<unsigned char> encode_wav(const AudioBuffer& audio,
                                      WavEncoding encoding);
AudioBuffer decode_wav(const std::vector<unsigned char>& bytes);

// Writes `bytes` to `path` atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& bytes);

}  // namespace pse

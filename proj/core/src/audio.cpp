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

#include "pse/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "pse/error.hpp"

namespace pse {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  }
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes)
      : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated WAV while reading ") + what,
                        pos_);
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] |
                                                 (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string tag(const char* what) {
    need(4, what);
    std::string t(reinterpret_cast<const char*>(&bytes_[pos_]), 4);
    pos_ += 4;
    return t;
  }
  void skip(std::size_t n, const char* what) {
    need(n, what);
    pos_ += n;
  }
  const unsigned char* here() const { return bytes_.data() + pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void validate(const AudioBuffer& audio) {
  if (audio.sample_rate <= 0) {
    throw DomainError("audio sample rate must be positive");
  }
  for (double s : audio.samples) {
    if (!std::isfinite(s)) throw DomainError("audio contains non-finite samples");
  }
}

std::vector<unsigned char> encode_wav(const AudioBuffer& audio,
                                      WavEncoding encoding) {
  validate(audio);
  const bool is_float = encoding == WavEncoding::kFloat32;
  const std::uint16_t bits = is_float ? 32 : 16;
  const std::uint16_t block_align = bits / 8;
  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(audio.samples.size() * block_align);

  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, is_float ? kFormatFloat : kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * block_align);
  put_u16(out, block_align);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double s : audio.samples) {
    if (is_float) {
      float f = static_cast<float>(s);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(out, u);
    } else {
      double c = std::clamp(s, -1.0, 1.0);
      auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
      put_u16(out, static_cast<std::uint16_t>(v));
    }
  }
  return out;
}

AudioBuffer decode_wav(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes);
  if (r.tag("RIFF header") != "RIFF") throw FormatError("missing RIFF tag", 0);
  r.u32("RIFF size");
  if (r.tag("WAVE tag") != "WAVE") throw FormatError("missing WAVE tag", 8);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::size_t chunk_start = r.offset();
    std::string id = r.tag("chunk id");
    std::uint32_t size = r.u32("chunk size");
    if (id == "fmt ") {
      if (size < 16) throw FormatError("fmt chunk too small", chunk_start);
      format = r.u16("format");
      channels = r.u16("channels");
      rate = r.u32("sample rate");
      r.u32("byte rate");
      r.u16("block align");
      bits = r.u16("bits per sample");
      std::size_t rest = size - 16;
      if (format == kFormatExtensible && rest >= 10) {
        r.u16("cb size");
        r.u16("valid bits");
        r.u32("channel mask");
        format = r.u16("sub format");
        rest -= 10;
      }
      r.skip(rest + (size & 1u), "fmt padding");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt", chunk_start);
      if (channels != 1) {
        throw FormatError("only mono WAV is supported, file has " +
                              std::to_string(channels) + " channels",
                          chunk_start);
      }
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32) {
        throw FormatError("unsupported WAV encoding (format " +
                              std::to_string(format) + ", " +
                              std::to_string(bits) + " bits)",
                          chunk_start);
      }
      std::size_t avail = std::min<std::size_t>(size, r.remaining());
      if (avail < size) {
        throw FormatError("truncated WAV data chunk", r.offset());
      }
      AudioBuffer audio;
      audio.sample_rate = static_cast<int>(rate);
      const std::size_t width = bits / 8;
      const std::size_t n = size / width;
      audio.samples.resize(n);
      const unsigned char* p = r.here();
      for (std::size_t i = 0; i < n; ++i) {
        if (pcm16) {
          auto v = static_cast<std::int16_t>(p[2 * i] | (p[2 * i + 1] << 8));
          audio.samples[i] = v / 32768.0;
        } else {
          std::uint32_t u = 0;
          for (int b = 0; b < 4; ++b) {
            u |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
          }
          float f;
          std::memcpy(&f, &u, 4);
          audio.samples[i] = f;
        }
      }
      if (audio.sample_rate <= 0) {
        throw FormatError("WAV sample rate is zero", chunk_start);
      }
      return audio;
    } else {
      r.skip(size + (size & 1u), "chunk body");
    }
  }
  throw FormatError("no data chunk in WAV", r.offset());
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open WAV file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw e.prefixed(path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& bytes) {
  std::random_device rd;
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename into place: " + path.string());
  }
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
               WavEncoding encoding) {
  auto bytes = encode_wav(audio, encoding);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

}  // namespace pse

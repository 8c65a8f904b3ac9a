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

#include "pse/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "pse/audio.hpp"
#include "pse/error.hpp"

namespace pse {

Tensor::Tensor(Shape shape, double fill, DType dtype)
    : shape_(std::move(shape)), data_(count(shape_), fill), dtype_(dtype) {
  if (dtype_ == DType::kF32) set_dtype(DType::kF32);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  if (data_.size() != count(shape_)) {
    throw DomainError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string(shape_));
  }
  if (dtype_ == DType::kF32) set_dtype(DType::kF32);
}

void Tensor::set_dtype(DType dtype) {
  dtype_ = dtype;
  if (dtype_ == DType::kF32) {
    for (double& v : data_) v = static_cast<float>(v);
  }
}

std::size_t Tensor::count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.numel() * sizeof(double)) == 0;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool is_valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) ||
        (extra == 3 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

void ParamStore::set(const std::string& name, Tensor tensor) {
  if (name.empty()) throw UsageError("tensor names must be non-empty");
  if (!is_valid_utf8(name)) throw UsageError("tensor name is not valid UTF-8");
  tensors_[name] = std::move(tensor);
}

bool ParamStore::contains(const std::string& name) const {
  return tensors_.count(name) != 0;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw UsageError("no tensor named '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw UsageError("no tensor named '" + name + "'");
  return it->second;
}

void ParamStore::set_meta(const std::string& key, const std::string& value) {
  if (key.empty()) throw UsageError("metadata keys must be non-empty");
  if (!is_valid_utf8(key) || !is_valid_utf8(value)) {
    throw UsageError("metadata is not valid UTF-8");
  }
  metadata_[key] = value;
}

bool ParamStore::has_meta(const std::string& key) const {
  return metadata_.count(key) != 0;
}

const std::string& ParamStore::meta(const std::string& key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end()) {
    throw FormatError("missing metadata key '" + key + "'");
  }
  return it->second;
}

std::int64_t ParamStore::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : tensors_) n += static_cast<std::int64_t>(t.numel());
  return n;
}

bool bit_equal(const ParamStore& a, const ParamStore& b) {
  if (a.metadata() != b.metadata() || a.size() != b.size()) return false;
  auto ia = a.tensors().begin();
  auto ib = b.tensors().begin();
  for (; ia != a.tensors().end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bit_equal(ia->second, ib->second)) {
      return false;
    }
  }
  return true;
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    out_.append(static_cast<const char*>(p), n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
    }
  }
  void str16(const std::string& s) {
    if (s.size() > 0xFFFF) throw UsageError("string too long for container");
    le<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("truncated container while reading ") +
                            what,
                        pos_);
    }
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i]))
           << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string str16(const char* what) {
    const auto n = le<std::uint16_t>(what);
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_container(const ParamStore& store) {
  Writer w;
  w.bytes("PDF2", 4);
  w.le<std::uint32_t>(kContainerVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(store.metadata().size()));
  for (const auto& [k, v] : store.metadata()) {
    w.str16(k);
    w.str16(v);
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.tensors()) {
    w.str16(name);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    if (t.rank() > 255) throw UsageError("tensor rank too large: " + name);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
      if (t.dtype() == DType::kF32) {
        w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return w.take();
}

ParamStore parse_container(const std::string& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (bytes.compare(0, 4, "PDF2") != 0) {
    throw FormatError("bad container magic", 0);
  }
  r.le<std::uint32_t>("magic");
  const std::size_t version_at = r.offset();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version),
                      version_at);
  }
  ParamStore store;
  const auto n_meta = r.le<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    const std::size_t at = r.offset();
    std::string k = r.str16("metadata key");
    std::string v = r.str16("metadata value");
    if (k.empty() || !is_valid_utf8(k) || !is_valid_utf8(v)) {
      throw FormatError("invalid metadata entry", at);
    }
    store.set_meta(k, v);
  }
  const auto n_tensors = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::size_t at = r.offset();
    std::string name = r.str16("tensor name");
    if (name.empty() || !is_valid_utf8(name)) {
      throw FormatError("invalid tensor name", at);
    }
    if (store.contains(name)) {
      throw FormatError("duplicate tensor name '" + name + "'", at);
    }
    const std::size_t dtype_at = r.offset();
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype > 1) {
      throw FormatError("unknown dtype " + std::to_string(dtype), dtype_at);
    }
    const auto rank = r.le<std::uint8_t>("rank");
    Tensor::Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>("dimension");
    const std::size_t n = Tensor::count(shape);
    const std::size_t width = dtype == 0 ? 4 : 8;
    if (n != 0 && (bytes.size() - r.offset()) / width < n) {
      throw FormatError("truncated data for tensor '" + name + "'", r.offset());
    }
    std::vector<double> data(n);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t value_at = r.offset();
      double v;
      if (dtype == 0) {
        v = std::bit_cast<float>(r.le<std::uint32_t>("tensor data"));
      } else {
        v = std::bit_cast<double>(r.le<std::uint64_t>("tensor data"));
      }
      if (!std::isfinite(v)) {
        throw FormatError("non-finite value in tensor '" + name + "'", value_at);
      }
      data[j] = v;
    }
    store.set(name, Tensor(std::move(shape), std::move(data),
                           static_cast<DType>(dtype)));
  }
  if (!r.done()) throw FormatError("trailing bytes after container", r.offset());
  return store;
}

void save_container(const ParamStore& store, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_container(store));
}

ParamStore load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open container: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  try {
    return parse_container(bytes);
  } catch (const FormatError& e) {
    throw e.prefixed(path.string());
  }
}

}  // namespace pse

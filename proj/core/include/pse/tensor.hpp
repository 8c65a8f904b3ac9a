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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pse {

// Storage precision recorded in the weight container. Values are held in
// double in memory; f32 tensors hold values exactly representable in float.
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, DType dtype = DType::kF64);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::kF64);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  DType dtype() const { return dtype_; }
  // Rounds every value to float when switching to kF32.
  void set_dtype(DType dtype);

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  static std::size_t count(const Shape& shape);

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::kF64;
};

// Same shape, dtype, and bit pattern of every value.
bool bit_equal(const Tensor& a, const Tensor& b);
std::string shape_string(const Tensor::Shape& shape);

// Named tensors plus string metadata. Iteration order is by name, so
// serialization is canonical.
class ParamStore {
 public:
  using TensorMap = std::map<std::string, Tensor>;
  using MetaMap = std::map<std::string, std::string>;

  // Throws UsageError for empty or non-UTF-8 names.
  void set(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }

  const TensorMap& tensors() const { return tensors_; }
  TensorMap& tensors() { return tensors_; }

  void set_meta(const std::string& key, const std::string& value);
  bool has_meta(const std::string& key) const;
  const std::string& meta(const std::string& key) const;
  const MetaMap& metadata() const { return metadata_; }

  std::int64_t scalar_count() const;

 private:
  TensorMap tensors_;
  MetaMap metadata_;
};

bool bit_equal(const ParamStore& a, const ParamStore& b);
bool is_valid_utf8(const std::string& s);

// Binary weight container, little-endian:
//   "PDF2" | u32 version=1 | u32 n_meta | n_meta x (u16 len, key, u16 len,
//   value) | u32 n_tensors | n_tensors x (u16 len, name, u8 dtype, u8 rank,
//   u32 dims[rank], raw values)
inline constexpr std::uint32_t kContainerVersion = 1;

std::string serialize_container(const ParamStore& store);
// Throws FormatError (with byte offset) on bad magic, version, dtype,
// truncation, or trailing bytes. No partial result is returned.
ParamStore parse_container(const std::string& bytes);

void save_container(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_container(const std::filesystem::path& path);

}  // namespace pse

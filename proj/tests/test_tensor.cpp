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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "pse/error.hpp"
#include "pse/tensor.hpp"
#include "test_util.hpp"

namespace pse {
namespace {

ParamStore sample_store() {
  ParamStore s;
  s.set_meta("variant", "unified");
  s.set_meta("note", "gr\xc3\xbc\xc3\x9f");
  s.set("b.bias", Tensor({3}, {1.0, -2.5, 3.25}, DType::kF32));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> w(24);
  for (auto& v : w) v = g(rng);
  s.set("a.weight", Tensor({2, 3, 4}, w, DType::kF64));
  s.set("scalar", Tensor({}, {7.0}));
  return s;
}

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DomainError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(shape_string(t.shape()), "[2, 3]");
}

TEST(Tensor, F32RoundsValues) {
  Tensor t({1}, {0.1});
  t.set_dtype(DType::kF32);
  EXPECT_EQ(t[0], static_cast<double>(0.1f));
}

TEST(ParamStore, RejectsBadNames) {
  ParamStore s;
  EXPECT_THROW(s.set("", Tensor({1})), UsageError);
  EXPECT_THROW(s.set("bad\xff", Tensor({1})), UsageError);
  EXPECT_THROW(s.at("missing"), UsageError);
}

TEST(Container, RoundTripIsBitExact) {
  const ParamStore s = sample_store();
  const ParamStore back = parse_container(serialize_container(s));
  EXPECT_TRUE(bit_equal(s, back));
  EXPECT_EQ(back.metadata(), s.metadata());
  EXPECT_EQ(back.at("b.bias").dtype(), DType::kF32);
}

TEST(Container, SerializationIsCanonical) {
  ParamStore a;
  a.set("z", Tensor({1}, 1.0));
  a.set("a", Tensor({1}, 2.0));
  ParamStore b;
  b.set("a", Tensor({1}, 2.0));
  b.set("z", Tensor({1}, 1.0));
  EXPECT_EQ(serialize_container(a), serialize_container(b));
}

TEST(Container, EmptyStoreHasZeroTensors) {
  const std::string bytes = serialize_container(ParamStore{});
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 4u);
  EXPECT_EQ(bytes.substr(0, 4), "PDF2");
  EXPECT_EQ(test::read_u32(bytes, 4), 1u);
  EXPECT_EQ(test::read_u32(bytes, 8), 0u);
  EXPECT_EQ(test::read_u32(bytes, 12), 0u);
  EXPECT_TRUE(parse_container(bytes).empty());
}

TEST(Container, ByteLayoutMatchesHandEncoding) {
  ParamStore s;
  s.set_meta("k", "vv");
  s.set("w", Tensor({2}, {1.5, -2.0}, DType::kF32));
  s.set("d", Tensor({1, 1}, {0.25}, DType::kF64));

  std::string ref = "PDF2";
  test::put_u32(ref, 1);
  test::put_u32(ref, 1);
  test::put_u16(ref, 1);
  ref += "k";
  test::put_u16(ref, 2);
  ref += "vv";
  test::put_u32(ref, 2);
  // "d" sorts first.
  test::put_u16(ref, 1);
  ref += "d";
  ref += char(1);
  ref += char(2);
  test::put_u32(ref, 1);
  test::put_u32(ref, 1);
  test::put_f64(ref, 0.25);
  test::put_u16(ref, 1);
  ref += "w";
  ref += char(0);
  ref += char(1);
  test::put_u32(ref, 2);
  test::put_f32(ref, 1.5f);
  test::put_f32(ref, -2.0f);
  EXPECT_EQ(serialize_container(s), ref);
}

TEST(Container, CorruptMagicRejectedWithOffset) {
  std::string bytes = serialize_container(sample_store());
  bytes[0] = 'X';
  try {
    parse_container(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_TRUE(e.has_offset());
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Container, BadVersionTruncationAndTrailingRejected) {
  const std::string good = serialize_container(sample_store());
  std::string v = good;
  v[4] = 2;
  EXPECT_THROW(parse_container(v), FormatError);
  for (std::size_t cut : {3u, 10u, 30u}) {
    EXPECT_THROW(parse_container(good.substr(0, cut)), FormatError) << cut;
  }
  EXPECT_THROW(parse_container(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(parse_container(good + "x"), FormatError);
}

TEST(Container, NonFiniteRejected) {
  ParamStore s;
  s.set("x", Tensor({1}, {1.0}));
  std::string bytes = serialize_container(s);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - 8, &nan, 8);
  EXPECT_THROW(parse_container(bytes), FormatError);
}

TEST(Container, FileRoundTripAndMissingFile) {
  test::TempDir dir;
  const auto path = dir.path() / "store.pdf2";
  save_container(sample_store(), path);
  EXPECT_TRUE(bit_equal(load_container(path), sample_store()));
  EXPECT_THROW(load_container(dir.path() / "nope.pdf2"), FormatError);
}

TEST(Container, FailedLoadLeavesNoPartialResult) {
  test::TempDir dir;
  const auto path = dir.path() / "bad.pdf2";
  std::string bytes = serialize_container(sample_store());
  bytes.resize(bytes.size() - 3);
  std::ofstream(path, std::ios::binary) << bytes;
  ParamStore out = sample_store();
  EXPECT_THROW(out = load_container(path), FormatError);
  EXPECT_TRUE(bit_equal(out, sample_store()));
}

}  // namespace
}  // namespace pse

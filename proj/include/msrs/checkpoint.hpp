// Copyright 2026 The MSRS Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary checkpoint layout, all integers little-endian:
//
//   "MSRS"  u32 version
//   u64 tensor count, then per tensor:
//       u32 name length, UTF-8 name, u32 ndim, u64 dims[ndim], f64 data[]
//   u64 optimizer tensor count, then tensors in the same encoding
//   u64 counter count, then per counter: u32 name length, name, f64 value

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "msrs/tensor.hpp"

namespace msrs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::vector<NamedTensor> optimizer;
  std::vector<std::pair<std::string, double>> counters;

  double counter(const std::string& name) const {
    for (const auto& [k, v] : counters)
      if (k == name) return v;
    throw std::out_of_range("checkpoint has no counter " + name);
  }
  const Tensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw std::out_of_range("checkpoint has no tensor " + name);
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& msg, std::uint64_t offset)
      : std::runtime_error(msg + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void tensor(const NamedTensor& t) {
    str(t.name);
    u32(std::uint32_t(t.value.ndim()));
    for (auto d : t.value.shape()) u64(d);
    for (double v : t.value.data()) f64(v);
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(char((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> b, std::uint64_t start) : buf_(std::move(b)), pos_(start) {}

  std::uint64_t offset() const { return pos_; }
  std::uint32_t u32() { return std::uint32_t(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str();
    const std::uint32_t nd = u32();
    if (nd == 0 || nd > 8) throw CheckpointError("implausible tensor rank " + std::to_string(nd), pos_);
    Shape s(nd);
    std::uint64_t n = 1;
    for (auto& d : s) {
      d = u64();
      if (d == 0) throw CheckpointError("zero dimension in tensor " + t.name, pos_);
      n *= d;
    }
    need(n * 8);
    std::vector<double> data(n);
    for (auto& v : data) v = f64();
    t.value = Tensor(std::move(s), std::move(data));
    return t;
  }
  void expect_end() const {
    if (pos_ != buf_.size())
      throw CheckpointError("trailing bytes: expected " + std::to_string(pos_) + " bytes, file has " +
                                std::to_string(buf_.size()),
                            pos_);
  }
  void need(std::uint64_t n) const {
    if (pos_ + n > buf_.size())
      throw CheckpointError("truncated checkpoint: expected " + std::to_string(pos_ + n) +
                                " bytes, file has " + std::to_string(buf_.size()),
                            pos_);
  }

 private:
  std::uint64_t le(int n) {
    need(std::uint64_t(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += std::uint64_t(n);
    return v;
  }

  std::vector<char> buf_;
  std::uint64_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw("MSRS", 4);
  w.u32(kCheckpointVersion);
  w.u64(c.tensors.size());
  for (const auto& t : c.tensors) w.tensor(t);
  w.u64(c.optimizer.size());
  for (const auto& t : c.optimizer) w.tensor(t);
  w.u64(c.counters.size());
  for (const auto& [k, v] : c.counters) {
    w.str(k);
    w.f64(v);
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::vector<char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MSRS", 4) != 0)
    throw CheckpointError("bad magic, not a checkpoint", 0);
  detail::ByteReader r(std::move(bytes), 4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version), 4);
  Checkpoint c;
  for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) c.tensors.push_back(r.tensor());
  for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) c.optimizer.push_back(r.tensor());
  for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) {
    std::string k = r.str();
    c.counters.emplace_back(std::move(k), r.f64());
  }
  r.expect_end();
  return c;
}

inline Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(bytes));
}

inline void checkpoint_save(const Checkpoint& c, const std::string& path) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace msrs

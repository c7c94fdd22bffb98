// Copyright 2026 The MPrompt Authors.
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

#include "mprompt/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "mprompt/errors.h"

namespace mprompt {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("tensor archive truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_archive(std::span<const Parameter* const> params) {
  std::string out;
  for (const Parameter* p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(p->value.data()[i])));
    }
  }
  return out;
}

std::vector<NamedTensor> decode_archive(std::string_view bytes) {
  Reader r(bytes);
  std::vector<NamedTensor> out;
  while (!r.done()) {
    NamedTensor t;
    std::uint32_t len = r.u32();
    t.name = std::string(r.take(len));
    std::uint32_t rank = r.u32();
    if (rank > 8) throw DataError("tensor '" + t.name + "': implausible rank");
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.shape.push_back(r.u32());
      count *= t.shape.back();
    }
    if (count * 4 > bytes.size()) throw DataError("tensor '" + t.name + "': size exceeds archive");
    t.data.resize(count);
    for (auto& f : t.data) f = std::bit_cast<float>(r.u32());
    out.push_back(std::move(t));
  }
  return out;
}

void write_archive(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string bytes = encode_archive(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<NamedTensor> read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

void assign_tensors(std::span<const NamedTensor> tensors, std::span<Parameter* const> params) {
  std::unordered_map<std::string_view, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw DataError("archive lacks tensor '" + p->name + "'");
    const NamedTensor& t = *it->second;
    const bool ok = t.shape.size() == 2 && t.shape[0] == static_cast<std::uint32_t>(p->value.rows()) &&
                    t.shape[1] == static_cast<std::uint32_t>(p->value.cols());
    if (!ok) throw DataError("tensor '" + p->name + "': shape mismatch");
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = t.data[static_cast<std::size_t>(i)];
  }
}

void round_to_f32(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] = static_cast<double>(static_cast<float>(p->value.data()[i]));
    }
  }
}

}  // namespace mprompt

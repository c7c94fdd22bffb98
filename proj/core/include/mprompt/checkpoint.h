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

// Flat tensor archive. Each record, with no file header:
//   u32 name_len | name bytes (UTF-8) | u32 rank | u32 dims[rank] | f32 data
// All integers and floats little-endian, data row-major.

#ifndef MPROMPT_CHECKPOINT_H_
#define MPROMPT_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mprompt/autograd.h"

namespace mprompt {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

std::string encode_archive(std::span<const Parameter* const> params);
std::vector<NamedTensor> decode_archive(std::string_view bytes);

void write_archive(const std::filesystem::path& path, std::span<const Parameter* const> params);
std::vector<NamedTensor> read_archive(const std::filesystem::path& path);

/// Copies tensors into same-named parameters. Every parameter must be
/// present with a matching shape (DataError otherwise); extra tensors are
/// ignored.
void assign_tensors(std::span<const NamedTensor> tensors, std::span<Parameter* const> params);

/// Parameter values rounded through f32, matching what an archive stores.
void round_to_f32(std::span<Parameter* const> params);

}  // namespace mprompt

#endif  // MPROMPT_CHECKPOINT_H_

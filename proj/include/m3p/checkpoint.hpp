// Copyright 2026 The m3p Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container:
//   "M3PCKPT1" | u64 header length | JSON header | raw little-endian doubles
// The header carries the model config, the tokenizer vocabulary and the
// ordered tensor index (name, rows, cols). Tensors are stored row-major in
// index order, so save/load round-trips bit-exactly.

#pragma once

#include <filesystem>

#include "m3p/model.hpp"
#include "m3p/tokenizer.hpp"

namespace m3p {

struct Checkpoint {
  ModelConfig config;
  EncoderParameters params;
  Tokenizer tokenizer;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace m3p

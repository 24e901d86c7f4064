#pragma once

#include <string>
#include <string_view>

#include "hvae/config.hpp"
#include "hvae/params.hpp"

namespace hvae::io {

/// Layout: "HVAE0001", u32 length + key=value document, u32 tensor count,
/// then per tensor u16 length + name, u8 rank, u32 dims, float32 values.
/// All integers and floats are little-endian.
struct Checkpoint {
  KvDoc config;
  nn::ParameterStore<float> tensors;
};

std::string encode_checkpoint(const KvDoc& config, const nn::ParameterStore<float>& tensors);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const KvDoc& config, const nn::ParameterStore<float>& tensors);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hvae::io

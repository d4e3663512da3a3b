#pragma once

#include <filesystem>

#include "dapn/model.hpp"

namespace dapn {

/// Single-archive checkpoint: a JSON header carrying the model configuration
/// followed by every tensor (trainable parameters plus the fixed conditioning
/// maps) keyed by module path. Layout (little-endian):
///   "DAPNCKPT1\n" | u64 header_len | header JSON | tensors
/// with each tensor as  u32 name_len | name | u64 rows | u64 cols | doubles
/// in column-major order.
void save_checkpoint(const std::filesystem::path& path, const Model& model);

Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dapn

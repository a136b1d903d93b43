#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "natmotion/model.hpp"

namespace natmotion {

/// Checkpoint layout:
///   8 bytes   magic "NATCKPT1"
///   8 bytes   manifest length L, unsigned little-endian
///   L bytes   UTF-8 JSON manifest (model kind, config, tensor paths/shapes)
///   ...       little-endian float64 tensor data in manifest order
std::string serialize_checkpoint(const Model& model);
/// Throws DataError on a malformed or truncated checkpoint.
Model deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64-bit digest of the serialized checkpoint, as 16 hex digits.
std::string checkpoint_digest(const Model& model);
std::string fnv1a64_hex(std::string_view bytes);

}  // namespace natmotion

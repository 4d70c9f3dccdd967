// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/backend.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace osketch {

/// Learned <ins> rows followed by the embedded <optional> text.
struct HybridInstruction {
    InstructionEmbedding ins;
    std::string optional_text;
    InstructionEmbedding composed;
};

/// Appends the embedded optional text after every row of `ins`. Empty text
/// returns `ins` unchanged. Throws TokenOverflowError instead of truncating,
/// and rejects an `ins` that is already a hybrid.
HybridInstruction compose_hybrid(const Backend& backend, const InstructionEmbedding& ins,
                                 const std::string& optional_text);

// .osi layout (little-endian):
//   "OSI1" | version u32 | token_dim u32 | n_tokens u32 | joint_dim u32
//   | name_len u32 | name bytes (UTF-8) | seed u64
//   | n_tokens * token_dim float32, row-major
//   | ceil(n_tokens / 8) mask bytes, bit i of byte k is token 8k + i
//   | provenance u8 | crc32 over everything before it (u32)
inline constexpr char kOsiMagic[4] = {'O', 'S', 'I', '1'};
inline constexpr std::uint32_t kOsiVersion = 1;

struct OsiHeader {
    std::uint32_t version = kOsiVersion;
    std::uint32_t token_dim = 0;
    std::uint32_t n_tokens = 0;
    std::uint32_t joint_dim = 0;
    std::string backend_name;
    std::uint64_t seed = 0;
};

std::vector<std::uint8_t> serialize_instruction(const InstructionEmbedding& e, const BackendDescriptor& backend,
                                                std::uint64_t backend_seed);

struct ParsedInstruction {
    OsiHeader header;
    InstructionEmbedding embedding;
};

/// Parses and verifies magic, version and checksum. Never returns a partial result.
ParsedInstruction parse_instruction(const std::vector<std::uint8_t>& bytes);

/// Writes atomically (temporary file then rename).
void save_instruction(const InstructionEmbedding& e, const std::filesystem::path& path,
                      const BackendDescriptor& backend, std::uint64_t backend_seed);

/// Loads and checks compatibility with `backend` (token_dim, joint_dim, token budget).
InstructionEmbedding load_instruction(const std::filesystem::path& path, const BackendDescriptor& backend);

/// Writes bytes to `path` through a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace osketch

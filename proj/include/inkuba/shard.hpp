#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "inkuba/tokenizer.hpp"

namespace inkuba {

// Fixed-length packed training rows. mask[i] is 1 for real tokens, 0 for
// padding.
//
// File layout (little-endian): u32 seq_len, u32 row_count, then
// row_count*seq_len u32 token ids row-major, then the mask bit-packed
// LSB-first in ceil(row_count*seq_len/8) bytes.
struct Shard {
  int seq_len = 0;
  std::vector<TokenId> tokens;
  std::vector<uint8_t> mask;

  size_t rows() const {
    return seq_len == 0 ? 0 : tokens.size() / static_cast<size_t>(seq_len);
  }
  size_t real_tokens() const;

  std::string serialize() const;
  static Shard parse(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Shard load(const std::filesystem::path& path);
};

// Concatenates documents with eos after each, cuts rows of exactly seq_len,
// and pads the final row with pad_id (masked out).
Shard pack(std::span<const std::vector<TokenId>> docs, int seq_len,
           TokenId eos_id = kEosId, TokenId pad_id = kPadId);

// Loads every *.shard file in dir (sorted by name) and concatenates rows.
Shard load_shard_dir(const std::filesystem::path& dir);

}  // namespace inkuba

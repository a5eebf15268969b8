#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace inkuba {

using TokenId = int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr int kNumSpecials = 4;
inline constexpr int kNumBytes = 256;
inline constexpr int kBaseVocabSize = kNumSpecials + kNumBytes;

inline constexpr TokenId byte_token(uint8_t b) { return kNumSpecials + b; }

struct Merge {
  TokenId left = 0;
  TokenId right = 0;
  friend bool operator==(const Merge&, const Merge&) = default;
};

using SpecialNames = std::array<std::string, kNumSpecials>;
SpecialNames default_special_names();

// Splits normalized text into BPE pre-tokens. A single whitespace byte that
// directly precedes a word is kept with that word; other whitespace bytes
// become one-byte chunks. Concatenating the chunks yields the input.
std::vector<std::string_view> pretokenize(std::string_view text);

// Byte-level BPE model. Ids: specials 0..3, bytes 4..259, then one id per
// merge in training order.
class Tokenizer {
 public:
  Tokenizer() : Tokenizer(std::vector<Merge>{}) {}
  explicit Tokenizer(std::vector<Merge> merges,
                     SpecialNames specials = default_special_names());

  int vocab_size() const { return static_cast<int>(token_bytes_.size()); }
  const std::vector<Merge>& merges() const { return merges_; }
  const SpecialNames& special_names() const { return specials_; }

  // Byte content of a token; empty for specials.
  const std::string& token_bytes(TokenId id) const;
  // Non-special token lookup by byte content.
  const std::unordered_map<std::string, TokenId>& token_to_id() const {
    return token_to_id_;
  }

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  // Model restricted to its first `count` merges.
  Tokenizer truncated(size_t count) const;

  std::string serialize() const;
  static Tokenizer parse(std::string_view contents);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

  std::vector<Merge> merges_;
  SpecialNames specials_;
  std::vector<std::string> token_bytes_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::unordered_map<uint64_t, int32_t> merge_rank_;
};

struct BpeTrainResult {
  Tokenizer model;
  // True when training stopped before the target because no remaining pair
  // occurred at least twice.
  bool stopped_early = false;
};

// Trains byte-level BPE. Ties in pair count go to the pair whose first
// occurrence in the normalized corpus stream is earliest. Pairs whose merged
// bytes already name a token are skipped so token strings stay unique.
BpeTrainResult train_bpe(std::span<const std::string> corpus,
                         size_t target_vocab_size,
                         SpecialNames specials = default_special_names());

}  // namespace inkuba

#include "inkuba/shard.hpp"

#include <algorithm>

#include "inkuba/binary_io.hpp"
#include "inkuba/error.hpp"
#include "inkuba/text.hpp"

namespace inkuba {

size_t Shard::real_tokens() const {
  return static_cast<size_t>(std::count(mask.begin(), mask.end(), uint8_t{1}));
}

std::string Shard::serialize() const {
  ByteWriter out;
  out.u32(static_cast<uint32_t>(seq_len));
  out.u32(static_cast<uint32_t>(rows()));
  for (TokenId id : tokens) out.u32(static_cast<uint32_t>(id));
  std::string bits((mask.size() + 7) / 8, '\0');
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
  }
  out.bytes(bits);
  return out.take();
}

Shard Shard::parse(std::string_view bytes) {
  ByteReader in(bytes);
  Shard shard;
  shard.seq_len = static_cast<int>(in.u32());
  const uint32_t rows = in.u32();
  if (shard.seq_len < 1 && rows > 0) {
    throw Error(ErrorKind::DataInvalid, "shard has zero sequence length");
  }
  const size_t n = static_cast<size_t>(rows) * static_cast<size_t>(shard.seq_len);
  shard.tokens.resize(n);
  for (auto& id : shard.tokens) id = static_cast<TokenId>(in.u32());
  const std::string_view bits = in.bytes((n + 7) / 8);
  shard.mask.resize(n);
  for (size_t i = 0; i < n; ++i) {
    shard.mask[i] = (static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1u;
  }
  if (!in.done()) throw Error(ErrorKind::DataInvalid, "trailing bytes in shard");
  return shard;
}

void Shard::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Shard Shard::load(const std::filesystem::path& path) { return parse(read_file(path)); }

Shard pack(std::span<const std::vector<TokenId>> docs, int seq_len, TokenId eos_id,
           TokenId pad_id) {
  if (seq_len < 2) throw Error(ErrorKind::ConfigInvalid, "seq_len must be >= 2");
  Shard shard;
  shard.seq_len = seq_len;
  for (const auto& doc : docs) {
    shard.tokens.insert(shard.tokens.end(), doc.begin(), doc.end());
    shard.tokens.push_back(eos_id);
  }
  shard.mask.assign(shard.tokens.size(), 1);
  const size_t remainder = shard.tokens.size() % static_cast<size_t>(seq_len);
  if (remainder != 0) {
    const size_t pad = static_cast<size_t>(seq_len) - remainder;
    shard.tokens.insert(shard.tokens.end(), pad, pad_id);
    shard.mask.insert(shard.mask.end(), pad, 0);
  }
  return shard;
}

Shard load_shard_dir(const std::filesystem::path& dir) {
  Shard all;
  for (const auto& path : list_files(dir)) {
    if (path.extension() != ".shard") continue;
    Shard s = Shard::load(path);
    if (s.rows() == 0) continue;
    if (all.seq_len == 0) all.seq_len = s.seq_len;
    if (s.seq_len != all.seq_len) {
      throw Error(ErrorKind::DataInvalid, "shards in " + dir.string() +
                                              " disagree on sequence length");
    }
    all.tokens.insert(all.tokens.end(), s.tokens.begin(), s.tokens.end());
    all.mask.insert(all.mask.end(), s.mask.begin(), s.mask.end());
  }
  if (all.rows() == 0) {
    throw Error(ErrorKind::TrainingDataEmpty, "no shard rows under " + dir.string());
  }
  return all;
}

}  // namespace inkuba

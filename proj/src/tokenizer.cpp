#include "inkuba/tokenizer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <unordered_set>

#include "inkuba/error.hpp"
#include "inkuba/text.hpp"

namespace inkuba {
namespace {

constexpr uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(left)) << 32) |
         static_cast<uint32_t>(right);
}

constexpr TokenId key_left(uint64_t key) {
  return static_cast<TokenId>(key >> 32);
}
constexpr TokenId key_right(uint64_t key) {
  return static_cast<TokenId>(key & 0xffffffffu);
}

std::string escape_token(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (char ch : bytes) {
    const auto b = static_cast<unsigned char>(ch);
    if (b > 0x20 && b < 0x7f && b != '\\') {
      out.push_back(ch);
    } else {
      out += "\\x";
      out.push_back(kHex[b >> 4]);
      out.push_back(kHex[b & 0xf]);
    }
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string unescape_token(std::string_view text) {
  std::string out;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\') {
      out.push_back(text[i]);
      continue;
    }
    if (i + 3 >= text.size() || text[i + 1] != 'x') {
      throw Error(ErrorKind::DataInvalid,
                  "bad escape in token '" + std::string(text) + "'");
    }
    const int hi = hex_value(text[i + 2]);
    const int lo = hex_value(text[i + 3]);
    if (hi < 0 || lo < 0) {
      throw Error(ErrorKind::DataInvalid,
                  "bad escape in token '" + std::string(text) + "'");
    }
    out.push_back(static_cast<char>(hi * 16 + lo));
    i += 3;
  }
  return out;
}

}  // namespace

SpecialNames default_special_names() {
  return {"<pad>", "<unk>", "<bos>", "<eos>"};
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> chunks;
  const auto ws = [&](size_t i) {
    return is_ascii_space(static_cast<unsigned char>(text[i]));
  };
  size_t i = 0;
  while (i < text.size()) {
    size_t j = i;
    if (ws(i)) {
      if (i + 1 < text.size() && !ws(i + 1)) {
        j = i + 1;
        while (j < text.size() && !ws(j)) ++j;
      } else {
        j = i + 1;
      }
    } else {
      while (j < text.size() && !ws(j)) ++j;
    }
    chunks.push_back(text.substr(i, j - i));
    i = j;
  }
  return chunks;
}

Tokenizer::Tokenizer(std::vector<Merge> merges, SpecialNames specials)
    : merges_(std::move(merges)), specials_(std::move(specials)) {
  token_bytes_.assign(kNumSpecials, std::string());
  for (int b = 0; b < kNumBytes; ++b) {
    token_bytes_.emplace_back(1, static_cast<char>(b));
    token_to_id_.emplace(token_bytes_.back(), byte_token(static_cast<uint8_t>(b)));
  }
  for (size_t i = 0; i < merges_.size(); ++i) {
    const Merge& m = merges_[i];
    const auto id = static_cast<TokenId>(token_bytes_.size());
    if (m.left < kNumSpecials || m.right < kNumSpecials || m.left >= id ||
        m.right >= id) {
      throw Error(ErrorKind::DataInvalid,
                  "merge " + std::to_string(i) + " references an invalid id");
    }
    std::string bytes = token_bytes_[m.left] + token_bytes_[m.right];
    if (!token_to_id_.emplace(bytes, id).second) {
      throw Error(ErrorKind::DataInvalid,
                  "merge " + std::to_string(i) + " duplicates token '" +
                      escape_token(bytes) + "'");
    }
    token_bytes_.push_back(std::move(bytes));
    merge_rank_.emplace(pair_key(m.left, m.right), static_cast<int32_t>(i));
  }
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || id >= vocab_size()) {
    throw Error(ErrorKind::IdOutOfRange, "token id " + std::to_string(id) +
                                             " outside vocabulary of " +
                                             std::to_string(vocab_size()));
  }
  return token_bytes_[static_cast<size_t>(id)];
}

void Tokenizer::encode_chunk(std::string_view chunk,
                             std::vector<TokenId>& out) const {
  std::vector<TokenId> symbols;
  symbols.reserve(chunk.size());
  for (char c : chunk) symbols.push_back(byte_token(static_cast<uint8_t>(c)));

  while (symbols.size() > 1) {
    int32_t best_rank = -1;
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
        best_rank = it->second;
      }
    }
    if (best_rank < 0) break;
    const Merge& m = merges_[static_cast<size_t>(best_rank)];
    const TokenId merged = kBaseVocabSize + best_rank;
    size_t write = 0;
    for (size_t read = 0; read < symbols.size(); ++write) {
      if (read + 1 < symbols.size() && symbols[read] == m.left &&
          symbols[read + 1] == m.right) {
        symbols[write] = merged;
        read += 2;
      } else {
        symbols[write] = symbols[read];
        read += 1;
      }
    }
    symbols.resize(write);
  }
  out.insert(out.end(), symbols.begin(), symbols.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  const std::string normalized = nfc(text);
  std::vector<TokenId> ids;
  ids.reserve(normalized.size());
  for (std::string_view chunk : pretokenize(normalized)) {
    encode_chunk(chunk, ids);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

Tokenizer Tokenizer::truncated(size_t count) const {
  count = std::min(count, merges_.size());
  return Tokenizer(std::vector<Merge>(merges_.begin(), merges_.begin() + count),
                   specials_);
}

std::string Tokenizer::serialize() const {
  std::string out = "bpe-v1 " + std::to_string(vocab_size()) + "\n";
  for (const auto& name : specials_) out += name + "\n";
  for (const Merge& m : merges_) {
    out += escape_token(token_bytes_[m.left]);
    out.push_back(' ');
    out += escape_token(token_bytes_[m.right]);
    out.push_back('\n');
  }
  return out;
}

Tokenizer Tokenizer::parse(std::string_view contents) {
  std::vector<std::string_view> lines;
  size_t start = 0;
  while (start < contents.size()) {
    size_t end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    lines.push_back(contents.substr(start, end - start));
    start = end + 1;
  }
  if (lines.size() < 1 + kNumSpecials || !lines[0].starts_with("bpe-v1 ")) {
    throw Error(ErrorKind::DataInvalid, "not a bpe-v1 tokenizer file");
  }
  const std::string_view size_text = lines[0].substr(7);
  size_t declared = 0;
  auto [ptr, ec] = std::from_chars(size_text.data(),
                                   size_text.data() + size_text.size(), declared);
  if (ec != std::errc() || ptr != size_text.data() + size_text.size()) {
    throw Error(ErrorKind::DataInvalid, "bad vocabulary size in header");
  }
  SpecialNames specials;
  for (int i = 0; i < kNumSpecials; ++i) specials[i] = std::string(lines[1 + i]);

  // Rebuild ids by replaying merges in order.
  std::unordered_map<std::string, TokenId> ids;
  for (int b = 0; b < kNumBytes; ++b) {
    ids.emplace(std::string(1, static_cast<char>(b)),
                byte_token(static_cast<uint8_t>(b)));
  }
  std::vector<Merge> merges;
  for (size_t n = 1 + kNumSpecials; n < lines.size(); ++n) {
    const std::string_view line = lines[n];
    const size_t space = line.find(' ');
    if (space == std::string_view::npos || line.find(' ', space + 1) != std::string_view::npos) {
      throw Error(ErrorKind::DataInvalid,
                  "merge line " + std::to_string(n + 1) + " is malformed");
    }
    const std::string left = unescape_token(line.substr(0, space));
    const std::string right = unescape_token(line.substr(space + 1));
    auto l = ids.find(left);
    auto r = ids.find(right);
    if (l == ids.end() || r == ids.end()) {
      throw Error(ErrorKind::DataInvalid,
                  "merge line " + std::to_string(n + 1) + " uses an unknown token");
    }
    merges.push_back({l->second, r->second});
    ids.emplace(left + right, static_cast<TokenId>(kBaseVocabSize + merges.size() - 1));
  }
  if (declared != kBaseVocabSize + merges.size()) {
    throw Error(ErrorKind::DataInvalid,
                "header declares " + std::to_string(declared) +
                    " tokens but file defines " +
                    std::to_string(kBaseVocabSize + merges.size()));
  }
  return Tokenizer(std::move(merges), std::move(specials));
}

void Tokenizer::save(const std::filesystem::path& path) const {
  write_file(path, serialize());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

namespace {

// Incremental pair statistics over the unique pre-token table.
class BpeTrainer {
 public:
  BpeTrainer(std::vector<std::vector<TokenId>> words, std::vector<int64_t> freqs)
      : words_(std::move(words)), freqs_(std::move(freqs)) {
    for (int b = 0; b < kNumBytes; ++b) {
      token_bytes_.emplace_back(1, static_cast<char>(b));
      known_.insert(token_bytes_.back());
    }
    std::unordered_set<uint64_t> touched;
    for (size_t w = 0; w < words_.size(); ++w) {
      add_word(static_cast<int32_t>(w), touched);
    }
    for (uint64_t key : touched) refresh(key);
  }

  std::vector<Merge> run(size_t merge_budget, bool& stopped_early) {
    std::vector<Merge> merges;
    while (merges.size() < merge_budget) {
      auto best = candidates_.begin();
      while (best != candidates_.end()) {
        const std::string joined =
            bytes_of(key_left(best->key)) + bytes_of(key_right(best->key));
        if (!known_.contains(joined)) break;
        banned_.insert(best->key);
        current_.erase(best->key);
        best = candidates_.erase(best);
      }
      if (best == candidates_.end() || best->count < 2) {
        stopped_early = true;
        break;
      }
      const uint64_t key = best->key;
      const TokenId left = key_left(key);
      const TokenId right = key_right(key);
      const auto merged = static_cast<TokenId>(kBaseVocabSize + merges.size());
      merges.push_back({left, right});
      token_bytes_.push_back(bytes_of(left) + bytes_of(right));
      known_.insert(token_bytes_.back());

      std::vector<int32_t> affected;
      for (const auto& [word, occ] : stats_.at(key).words) affected.push_back(word);
      std::unordered_set<uint64_t> touched;
      for (int32_t w : affected) {
        remove_word(w, touched);
        apply_merge(words_[static_cast<size_t>(w)], left, right, merged);
        add_word(w, touched);
      }
      for (uint64_t k : touched) refresh(k);
    }
    return merges;
  }

 private:
  struct PairStats {
    int64_t count = 0;
    std::map<int32_t, int32_t> words;  // word index -> occurrences
  };

  struct Candidate {
    int64_t count;
    int32_t word;
    int32_t offset;
    uint64_t key;
    bool operator<(const Candidate& o) const {
      if (count != o.count) return count > o.count;
      if (word != o.word) return word < o.word;
      if (offset != o.offset) return offset < o.offset;
      // Live candidates never tie above; this keeps a stale entry awaiting
      // refresh from shadowing a new one.
      return key < o.key;
    }
  };

  std::string bytes_of(TokenId id) const {
    return token_bytes_[static_cast<size_t>(id - kNumSpecials)];
  }

  size_t byte_length(TokenId id) const {
    return token_bytes_[static_cast<size_t>(id - kNumSpecials)].size();
  }

  static void apply_merge(std::vector<TokenId>& symbols, TokenId left,
                          TokenId right, TokenId merged) {
    size_t write = 0;
    for (size_t read = 0; read < symbols.size(); ++write) {
      if (read + 1 < symbols.size() && symbols[read] == left &&
          symbols[read + 1] == right) {
        symbols[write] = merged;
        read += 2;
      } else {
        symbols[write] = symbols[read];
        read += 1;
      }
    }
    symbols.resize(write);
  }

  void add_word(int32_t w, std::unordered_set<uint64_t>& touched) {
    const auto& symbols = words_[static_cast<size_t>(w)];
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      const uint64_t key = pair_key(symbols[i], symbols[i + 1]);
      auto& st = stats_[key];
      st.count += freqs_[static_cast<size_t>(w)];
      st.words[w] += 1;
      touched.insert(key);
    }
  }

  void remove_word(int32_t w, std::unordered_set<uint64_t>& touched) {
    const auto& symbols = words_[static_cast<size_t>(w)];
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      const uint64_t key = pair_key(symbols[i], symbols[i + 1]);
      auto& st = stats_.at(key);
      st.count -= freqs_[static_cast<size_t>(w)];
      auto it = st.words.find(w);
      if (--it->second == 0) st.words.erase(it);
      touched.insert(key);
    }
  }

  // Byte offset of the first occurrence of `key` inside word w.
  int32_t first_offset(int32_t w, uint64_t key) const {
    const auto& symbols = words_[static_cast<size_t>(w)];
    size_t offset = 0;
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      if (pair_key(symbols[i], symbols[i + 1]) == key) {
        return static_cast<int32_t>(offset);
      }
      offset += byte_length(symbols[i]);
    }
    return -1;
  }

  void refresh(uint64_t key) {
    if (auto it = current_.find(key); it != current_.end()) {
      candidates_.erase(it->second);
      current_.erase(it);
    }
    auto st = stats_.find(key);
    if (st == stats_.end()) return;
    if (st->second.count <= 0 || st->second.words.empty()) {
      stats_.erase(st);
      return;
    }
    if (banned_.contains(key)) return;
    const int32_t word = st->second.words.begin()->first;
    Candidate c{st->second.count, word, first_offset(word, key), key};
    candidates_.insert(c);
    current_.emplace(key, c);
  }

  std::vector<std::vector<TokenId>> words_;
  std::vector<int64_t> freqs_;
  std::vector<std::string> token_bytes_;  // indexed by id - kNumSpecials
  std::unordered_set<std::string> known_;
  std::unordered_map<uint64_t, PairStats> stats_;
  std::set<Candidate> candidates_;
  std::unordered_map<uint64_t, Candidate> current_;
  std::unordered_set<uint64_t> banned_;
};

}  // namespace

BpeTrainResult train_bpe(std::span<const std::string> corpus,
                         size_t target_vocab_size, SpecialNames specials) {
  if (target_vocab_size < static_cast<size_t>(kBaseVocabSize)) {
    throw Error(ErrorKind::ConfigInvalid,
                "target vocabulary " + std::to_string(target_vocab_size) +
                    " is below the base size " + std::to_string(kBaseVocabSize));
  }
  // Unique pre-tokens in order of first appearance in the corpus stream.
  std::unordered_map<std::string, int32_t> index;
  std::vector<std::vector<TokenId>> words;
  std::vector<int64_t> freqs;
  size_t total_bytes = 0;
  for (const std::string& doc : corpus) {
    const std::string normalized = nfc(doc);
    total_bytes += normalized.size();
    for (std::string_view chunk : pretokenize(normalized)) {
      auto [it, inserted] =
          index.try_emplace(std::string(chunk), static_cast<int32_t>(words.size()));
      if (inserted) {
        std::vector<TokenId> symbols;
        symbols.reserve(chunk.size());
        for (char c : chunk) symbols.push_back(byte_token(static_cast<uint8_t>(c)));
        words.push_back(std::move(symbols));
        freqs.push_back(0);
      }
      freqs[static_cast<size_t>(it->second)] += 1;
    }
  }
  if (total_bytes == 0) {
    throw Error(ErrorKind::TrainingDataEmpty, "tokenizer corpus is empty");
  }

  const size_t budget = target_vocab_size - kBaseVocabSize;
  BpeTrainer trainer(std::move(words), std::move(freqs));
  BpeTrainResult result;
  std::vector<Merge> merges = trainer.run(budget, result.stopped_early);
  if (merges.size() == budget) result.stopped_early = false;
  if (result.stopped_early) {
    spdlog::warn("BPE stopped at {} merges (target {}): no pair occurs twice",
                 merges.size(), budget);
  }
  result.model = Tokenizer(std::move(merges), std::move(specials));
  return result;
}

}  // namespace inkuba

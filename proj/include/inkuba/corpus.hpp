#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "inkuba/tokenizer.hpp"

namespace inkuba {

// ISO 639-3 codes handled by the corpus tools, in report order.
const std::vector<std::string>& african_languages();  // hau yor swa zul xho
const std::vector<std::string>& corpus_languages();   // african + eng fra
bool is_corpus_language(std::string_view code);
std::string_view language_display_name(std::string_view code);

struct CorpusDocument {
  std::string text;
  std::string language;
  std::string source;
};

inline constexpr size_t kMinWordsPerDocument = 3;

// NFC, control characters dropped, whitespace collapsed. Documents with fewer
// than three words come back as nullopt.
std::optional<CorpusDocument> clean(const CorpusDocument& doc);

// Exact-duplicate filter keyed on a hash of the text, with full-text
// comparison on hash collisions. Safe to share between threads.
class Deduplicator {
 public:
  // True the first time `text` is seen.
  bool insert(std::string_view text);
  size_t size() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<uint64_t, std::vector<std::string>> seen_;
  size_t count_ = 0;
};

// Keeps the first occurrence of each text; order otherwise preserved.
std::vector<CorpusDocument> dedup(std::span<const CorpusDocument> docs);

// Non-empty segments after splitting on '.', '?', '!' and newlines.
size_t count_sentences(std::string_view text);

struct LanguageStats {
  uint64_t sentence_count = 0;
  uint64_t token_count = 0;

  LanguageStats& operator+=(const LanguageStats& o) {
    sentence_count += o.sentence_count;
    token_count += o.token_count;
    return *this;
  }
  friend bool operator==(const LanguageStats&, const LanguageStats&) = default;
};

struct CorpusStats {
  std::map<std::string, LanguageStats> per_language;

  LanguageStats african_only() const;
  LanguageStats total() const;
  // Rows: five African languages, "African only", English, French, "Total".
  std::string render_table() const;
};

CorpusStats compute_stats(std::span<const CorpusDocument> docs, const Tokenizer& tokenizer);

// Directory-per-language layout: <dir>/<code>/*.txt, one document per line.
std::vector<CorpusDocument> read_corpus_dir(const std::filesystem::path& dir);
void write_corpus_dir(std::span<const CorpusDocument> docs, const std::filesystem::path& dir);

}  // namespace inkuba

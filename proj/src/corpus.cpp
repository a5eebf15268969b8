#include "inkuba/corpus.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <functional>

#include "inkuba/error.hpp"
#include "inkuba/text.hpp"

namespace inkuba {

const std::vector<std::string>& african_languages() {
  static const std::vector<std::string> codes = {"hau", "yor", "swa", "zul", "xho"};
  return codes;
}

const std::vector<std::string>& corpus_languages() {
  static const std::vector<std::string> codes = {"hau", "yor", "swa", "zul",
                                                 "xho", "eng", "fra"};
  return codes;
}

bool is_corpus_language(std::string_view code) {
  const auto& all = corpus_languages();
  return std::find(all.begin(), all.end(), code) != all.end();
}

std::string_view language_display_name(std::string_view code) {
  if (code == "hau") return "Hausa";
  if (code == "yor") return "Yoruba";
  if (code == "swa") return "Swahili";
  if (code == "zul") return "isiZulu";
  if (code == "xho") return "isiXhosa";
  if (code == "eng") return "English";
  if (code == "fra") return "French";
  return code;
}

std::optional<CorpusDocument> clean(const CorpusDocument& doc) {
  if (!is_corpus_language(doc.language)) {
    throw Error(ErrorKind::DataInvalid, "unknown language code '" + doc.language + "'");
  }
  CorpusDocument out{normalize_whitespace(doc.text), doc.language, doc.source};
  if (split_whitespace(out.text).size() < kMinWordsPerDocument) return std::nullopt;
  return out;
}

bool Deduplicator::insert(std::string_view text) {
  const uint64_t h = std::hash<std::string_view>{}(text);
  std::lock_guard lock(mu_);
  auto& bucket = seen_[h];
  for (const auto& s : bucket) {
    if (s == text) return false;
  }
  bucket.emplace_back(text);
  ++count_;
  return true;
}

size_t Deduplicator::size() const {
  std::lock_guard lock(mu_);
  return count_;
}

std::vector<CorpusDocument> dedup(std::span<const CorpusDocument> docs) {
  Deduplicator seen;
  std::vector<CorpusDocument> out;
  for (const auto& d : docs) {
    if (seen.insert(d.text)) out.push_back(d);
  }
  return out;
}

size_t count_sentences(std::string_view text) {
  size_t count = 0;
  bool has_content = false;
  for (char c : text) {
    if (c == '.' || c == '?' || c == '!' || c == '\n') {
      if (has_content) ++count;
      has_content = false;
    } else if (!is_ascii_space(static_cast<unsigned char>(c))) {
      has_content = true;
    }
  }
  if (has_content) ++count;
  return count;
}

LanguageStats CorpusStats::african_only() const {
  LanguageStats sum;
  for (const auto& code : african_languages()) {
    if (auto it = per_language.find(code); it != per_language.end()) sum += it->second;
  }
  return sum;
}

LanguageStats CorpusStats::total() const {
  LanguageStats sum;
  for (const auto& [code, stats] : per_language) sum += stats;
  return sum;
}

std::string CorpusStats::render_table() const {
  std::vector<std::pair<std::string, LanguageStats>> rows;
  auto lookup = [&](const std::string& code) {
    auto it = per_language.find(code);
    return it == per_language.end() ? LanguageStats{} : it->second;
  };
  for (const auto& code : african_languages()) {
    rows.emplace_back(std::string(language_display_name(code)), lookup(code));
  }
  rows.emplace_back("African only", african_only());
  rows.emplace_back("English", lookup("eng"));
  rows.emplace_back("French", lookup("fra"));
  rows.emplace_back("Total", total());

  std::string out = fmt::format("{:<14} {:>20} {:>16}\n", "Language",
                                "Number of sentences", "Tokens");
  for (const auto& [name, s] : rows) {
    out += fmt::format("{:<14} {:>20} {:>16}\n", name, s.sentence_count, s.token_count);
  }
  return out;
}

CorpusStats compute_stats(std::span<const CorpusDocument> docs, const Tokenizer& tokenizer) {
  CorpusStats stats;
  for (const auto& d : docs) {
    auto& s = stats.per_language[d.language];
    s.sentence_count += count_sentences(d.text);
    s.token_count += tokenizer.encode(d.text).size();
  }
  return stats;
}

std::vector<CorpusDocument> read_corpus_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::Io, "corpus directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> lang_dirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory()) lang_dirs.push_back(entry.path());
  }
  std::sort(lang_dirs.begin(), lang_dirs.end());
  std::vector<CorpusDocument> docs;
  for (const auto& lang_dir : lang_dirs) {
    const std::string code = lang_dir.filename().string();
    if (!is_corpus_language(code)) {
      throw Error(ErrorKind::DataInvalid, "corpus subdirectory '" + code +
                                              "' is not a supported language code");
    }
    for (const auto& file : list_files(lang_dir)) {
      const auto lines = read_lines(file);
      for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        docs.push_back({lines[i], code,
                        fmt::format("{}/{}:{}", code, file.filename().string(), i + 1)});
      }
    }
  }
  return docs;
}

void write_corpus_dir(std::span<const CorpusDocument> docs, const std::filesystem::path& dir) {
  std::map<std::string, std::string> per_language;
  for (const auto& d : docs) {
    if (d.text.find('\n') != std::string::npos) {
      throw Error(ErrorKind::DataInvalid, "document from " + d.source + " spans lines");
    }
    per_language[d.language] += d.text + "\n";
  }
  for (const auto& [code, contents] : per_language) {
    write_file(dir / code / (code + ".txt"), contents);
  }
}

}  // namespace inkuba

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace inkuba {

enum class Task { Mt, Sentiment, Ner, Pos, Qa, Topic };
std::string_view to_string(Task task);
Task parse_task(std::string_view name);

// Translation direction relative to the English pivot.
enum class MtDirection { None, ToEnglish, FromEnglish };
std::string_view to_string(MtDirection d);
MtDirection parse_direction(std::string_view name);

enum class PromptLanguage { Native, English };
enum class PromptMode { Native, English, Multiple };
std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view name);

inline constexpr std::string_view kInputsPlaceholder = "{inputs}";
inline constexpr std::string_view kOutputMarker = "Output:";
inline constexpr int kVariantsPerTask = 4;

struct TaskTemplate {
  Task task = Task::Mt;
  MtDirection direction = MtDirection::None;
  std::string language;
  PromptLanguage prompt_language = PromptLanguage::Native;
  int variant = 1;
  std::string origin;  // "published" or a note on where the wording came from
  std::string text;

  // Exactly one {inputs}; text ends with "Output:". Throws TemplateInvalid.
  void validate() const;
};

// Substitutes the input into the template. Appends a note to `warnings`
// when the input is empty.
std::string render(const TaskTemplate& tmpl, std::string_view inputs,
                   std::vector<std::string>* warnings = nullptr);

// Template table; file form is TSV with columns
// task, direction, language, prompt_language, variant, origin, text.
class TemplateSet {
 public:
  static TemplateSet parse_tsv(std::string_view text);
  static TemplateSet load(const std::filesystem::path& path);
  // The editable set shipped in data/templates.tsv.
  static TemplateSet bundled();

  void add(TaskTemplate t);
  size_t size() const { return templates_.size(); }

  // Throws TemplateMissing.
  const TaskTemplate& get(Task task, MtDirection direction, std::string_view language,
                          PromptLanguage prompt_language, int variant) const;

  // native/english pick variant 1 in that language; multiple draws one of
  // the four native variants from rng.
  const TaskTemplate& select(Task task, MtDirection direction, std::string_view language,
                             PromptMode mode, std::mt19937_64& rng) const;

 private:
  using Key = std::tuple<Task, MtDirection, std::string, PromptLanguage, int>;
  std::map<Key, TaskTemplate> templates_;
};

// Source label -> target-language label for sentiment and topic tasks. TSV
// columns: task, language, source_label, translated_label.
class LabelMaps {
 public:
  static LabelMaps parse_tsv(std::string_view text);
  static LabelMaps load(const std::filesystem::path& path);
  static LabelMaps bundled();  // data/labels.tsv

  void add(Task task, std::string_view language, std::string source,
           std::string translated);

  // Identity for NER/POS. Throws LabelUnknown.
  std::string map_label(Task task, std::string_view language, std::string_view label) const;
  std::string inverse(Task task, std::string_view language, std::string_view translated) const;
  // Source labels in insertion order. Throws LabelUnknown when no map exists.
  std::vector<std::string> source_labels(Task task, std::string_view language) const;

 private:
  struct Map {
    std::vector<std::pair<std::string, std::string>> entries;
  };
  const Map& find(Task task, std::string_view language) const;
  std::map<std::pair<Task, std::string>, Map> maps_;
};

inline constexpr std::string_view kEnglish = "eng";

struct InstructionRecord {
  std::string task;
  // African code, or "src-tgt" for translation records (e.g. "swa-eng").
  std::string language;
  std::string instruction;
  std::string inputs;
  std::string targets;
  std::string split;  // train|dev|test; empty before splitting

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

// The African language a record belongs to.
std::string record_african_language(const InstructionRecord& r);
MtDirection record_direction(const InstructionRecord& r);

std::string to_jsonl(std::span<const InstructionRecord> records);
std::vector<InstructionRecord> parse_jsonl(std::string_view text);
void write_jsonl(const std::filesystem::path& path, std::span<const InstructionRecord> records);
std::vector<InstructionRecord> read_jsonl(const std::filesystem::path& path);

// Raw task examples, one struct per input adapter.
struct MtPair {
  std::string african;
  std::string english;
};
struct LabeledText {
  std::string text;
  std::string label;
};
struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};
struct QaExample {
  std::string question;
  std::string context;
  std::string answer;
};

std::vector<MtPair> read_mt_tsv(const std::filesystem::path& path);
std::vector<TaggedSentence> read_conll(const std::filesystem::path& path);
// CSV with columns text,label (RFC 4180 quoting; optional header row).
std::vector<LabeledText> read_labeled_csv(const std::filesystem::path& path);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::vector<QaExample> read_qa_jsonl(const std::filesystem::path& path);

struct BuildContext {
  std::string language;
  PromptMode mode = PromptMode::Native;
  uint64_t seed = 0;
  const TemplateSet* templates = nullptr;
  const LabelMaps* labels = nullptr;
  std::vector<std::string>* warnings = nullptr;
};

// Two records per pair: xxx->eng then eng->xxx. Throws PairInvalid on an
// empty side.
std::vector<InstructionRecord> build_mt(std::span<const MtPair> pairs, const BuildContext& ctx);
// Sentiment/topic; targets are translated labels except in English mode.
std::vector<InstructionRecord> build_classification(Task task,
                                                    std::span<const LabeledText> examples,
                                                    const BuildContext& ctx);
// NER/POS; tokens and tags joined by single spaces.
std::vector<InstructionRecord> build_tagging(Task task, std::span<const TaggedSentence> sentences,
                                             const BuildContext& ctx);
std::vector<InstructionRecord> build_qa(std::span<const QaExample> examples,
                                        const BuildContext& ctx);
// Question followed by its context, as substituted into QA templates.
std::string qa_inputs(const QaExample& e);

struct SplitRatios {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};
// Proportions of the released 148M/65M/55M train/dev/test sizes.
SplitRatios published_split_ratios();

struct InstructStats {
  // language -> (train, dev, test) counts
  std::map<std::string, std::array<uint64_t, 3>> per_language;
  // Translation records, counted against the English pivot row.
  std::array<uint64_t, 3> english_pivot{};

  // Rows Hausa, Yoruba, Swahili, isiZulu, isiXhosa, English.
  std::string render_table() const;
};

struct SplitResult {
  std::vector<InstructionRecord> train;
  std::vector<InstructionRecord> dev;
  std::vector<InstructionRecord> test;
  InstructStats stats;
};

// Seeded shuffle then cut by ratios (largest-remainder rounding); each split
// keeps input order.
SplitResult merge_and_split(std::span<const InstructionRecord> records, SplitRatios ratios,
                            uint64_t seed);

InstructStats compute_instruct_stats(std::span<const InstructionRecord> records);

}  // namespace inkuba

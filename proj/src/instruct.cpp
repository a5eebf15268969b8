#include "inkuba/instruct.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <numeric>

#include "inkuba/corpus.hpp"
#include "inkuba/error.hpp"
#include "inkuba/text.hpp"

namespace inkuba {

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::vector<std::string_view> data_lines(std::string_view text) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    start = end + 1;
  }
  return out;
}

bool skippable(std::string_view line) {
  return line.empty() || line.front() == '#';
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("INKUBA_DATA_DIR"); env && *env) return env;
  return INKUBA_DATA_DIR;
}

size_t count_occurrences(std::string_view text, std::string_view needle) {
  size_t n = 0;
  for (size_t pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string_view to_string(Task task) {
  switch (task) {
    case Task::Mt: return "mt";
    case Task::Sentiment: return "sentiment";
    case Task::Ner: return "ner";
    case Task::Pos: return "pos";
    case Task::Qa: return "qa";
    case Task::Topic: return "topic";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  for (Task t : {Task::Mt, Task::Sentiment, Task::Ner, Task::Pos, Task::Qa, Task::Topic}) {
    if (to_string(t) == name) return t;
  }
  throw Error(ErrorKind::ConfigInvalid, fmt::format("unknown task '{}'", name));
}

std::string_view to_string(MtDirection d) {
  switch (d) {
    case MtDirection::None: return "-";
    case MtDirection::ToEnglish: return "to_eng";
    case MtDirection::FromEnglish: return "from_eng";
  }
  return "?";
}

MtDirection parse_direction(std::string_view name) {
  for (MtDirection d : {MtDirection::None, MtDirection::ToEnglish, MtDirection::FromEnglish}) {
    if (to_string(d) == name) return d;
  }
  throw Error(ErrorKind::ConfigInvalid, fmt::format("unknown direction '{}'", name));
}

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::Native: return "native";
    case PromptMode::English: return "english";
    case PromptMode::Multiple: return "multiple";
  }
  return "?";
}

PromptMode parse_prompt_mode(std::string_view name) {
  for (PromptMode m : {PromptMode::Native, PromptMode::English, PromptMode::Multiple}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorKind::ConfigInvalid, fmt::format("unknown prompt mode '{}'", name));
}

void TaskTemplate::validate() const {
  const size_t n = count_occurrences(text, kInputsPlaceholder);
  if (n != 1) {
    throw Error(ErrorKind::TemplateInvalid,
                fmt::format("{} template for {} variant {} has {} '{}' placeholders, expected 1",
                            to_string(task), language, variant, n, kInputsPlaceholder));
  }
  std::string_view t = text;
  if (t.size() < kOutputMarker.size() || t.substr(t.size() - kOutputMarker.size()) != kOutputMarker) {
    throw Error(ErrorKind::TemplateInvalid,
                fmt::format("{} template for {} variant {} does not end with '{}'",
                            to_string(task), language, variant, kOutputMarker));
  }
  if (variant < 1 || variant > kVariantsPerTask) {
    throw Error(ErrorKind::TemplateInvalid, fmt::format("variant {} outside 1..{}", variant,
                                                        kVariantsPerTask));
  }
  if ((task == Task::Mt) != (direction != MtDirection::None)) {
    throw Error(ErrorKind::TemplateInvalid,
                "direction must be set for mt templates and only for them");
  }
}

std::string render(const TaskTemplate& tmpl, std::string_view inputs,
                   std::vector<std::string>* warnings) {
  tmpl.validate();
  if (inputs.empty()) {
    const std::string msg = fmt::format("empty input for {} template ({}, variant {})",
                                        to_string(tmpl.task), tmpl.language, tmpl.variant);
    spdlog::warn("{}", msg);
    if (warnings) warnings->push_back(msg);
  }
  std::string out = tmpl.text;
  out.replace(out.find(kInputsPlaceholder), kInputsPlaceholder.size(), inputs);
  return out;
}

TemplateSet TemplateSet::parse_tsv(std::string_view text) {
  TemplateSet set;
  const auto lines = data_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (skippable(lines[i])) continue;
    const auto cols = split_tabs(lines[i]);
    if (cols.size() != 7) {
      throw Error(ErrorKind::TemplateInvalid,
                  fmt::format("template line {}: expected 7 tab-separated columns, got {}", i + 1,
                              cols.size()));
    }
    TaskTemplate t;
    try {
      t.task = parse_task(cols[0]);
      t.direction = parse_direction(cols[1]);
    } catch (const Error& e) {
      throw Error(ErrorKind::TemplateInvalid, fmt::format("template line {}: {}", i + 1, e.what()));
    }
    t.language = cols[2];
    if (cols[3] == "native") {
      t.prompt_language = PromptLanguage::Native;
    } else if (cols[3] == "english") {
      t.prompt_language = PromptLanguage::English;
    } else {
      throw Error(ErrorKind::TemplateInvalid,
                  fmt::format("template line {}: prompt language '{}'", i + 1, cols[3]));
    }
    try {
      size_t used = 0;
      t.variant = std::stoi(cols[4], &used);
      if (used != cols[4].size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::TemplateInvalid,
                  fmt::format("template line {}: variant '{}'", i + 1, cols[4]));
    }
    t.origin = cols[5];
    t.text = cols[6];
    set.add(std::move(t));
  }
  return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  return parse_tsv(read_file(path));
}

TemplateSet TemplateSet::bundled() { return load(data_dir() / "templates.tsv"); }

void TemplateSet::add(TaskTemplate t) {
  t.validate();
  Key key{t.task, t.direction, t.language, t.prompt_language, t.variant};
  if (templates_.contains(key)) {
    throw Error(ErrorKind::TemplateInvalid,
                fmt::format("duplicate {} template for {} variant {}", to_string(t.task),
                            t.language, t.variant));
  }
  templates_.emplace(std::move(key), std::move(t));
}

const TaskTemplate& TemplateSet::get(Task task, MtDirection direction,
                                     std::string_view language, PromptLanguage prompt_language,
                                     int variant) const {
  auto it = templates_.find(Key{task, direction, std::string(language), prompt_language, variant});
  if (it == templates_.end()) {
    throw Error(ErrorKind::TemplateMissing,
                fmt::format("no {} {}template for language '{}' ({} prompt, variant {})",
                            to_string(task),
                            direction == MtDirection::None
                                ? std::string()
                                : std::string(to_string(direction)) + " ",
                            language,
                            prompt_language == PromptLanguage::Native ? "native" : "english",
                            variant));
  }
  return it->second;
}

const TaskTemplate& TemplateSet::select(Task task, MtDirection direction,
                                        std::string_view language, PromptMode mode,
                                        std::mt19937_64& rng) const {
  switch (mode) {
    case PromptMode::Native:
      return get(task, direction, language, PromptLanguage::Native, 1);
    case PromptMode::English:
      return get(task, direction, language, PromptLanguage::English, 1);
    case PromptMode::Multiple: {
      std::uniform_int_distribution<int> pick(1, kVariantsPerTask);
      return get(task, direction, language, PromptLanguage::Native, pick(rng));
    }
  }
  throw Error(ErrorKind::ConfigInvalid, "bad prompt mode");
}

LabelMaps LabelMaps::parse_tsv(std::string_view text) {
  LabelMaps maps;
  const auto lines = data_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (skippable(lines[i])) continue;
    const auto cols = split_tabs(lines[i]);
    if (cols.size() != 4) {
      throw Error(ErrorKind::DataInvalid,
                  fmt::format("label line {}: expected 4 tab-separated columns, got {}", i + 1,
                              cols.size()));
    }
    maps.add(parse_task(cols[0]), cols[1], cols[2], cols[3]);
  }
  return maps;
}

LabelMaps LabelMaps::load(const std::filesystem::path& path) { return parse_tsv(read_file(path)); }

LabelMaps LabelMaps::bundled() { return load(data_dir() / "labels.tsv"); }

void LabelMaps::add(Task task, std::string_view language, std::string source,
                    std::string translated) {
  auto& map = maps_[{task, std::string(language)}];
  for (const auto& [s, t] : map.entries) {
    if (s == source || t == translated) {
      throw Error(ErrorKind::DataInvalid,
                  fmt::format("{} label map for {} is not one-to-one at '{}' -> '{}'",
                              to_string(task), language, source, translated));
    }
  }
  map.entries.emplace_back(std::move(source), std::move(translated));
}

const LabelMaps::Map& LabelMaps::find(Task task, std::string_view language) const {
  auto it = maps_.find({task, std::string(language)});
  if (it == maps_.end()) {
    throw Error(ErrorKind::LabelUnknown,
                fmt::format("no {} label map for language '{}'", to_string(task), language));
  }
  return it->second;
}

std::string LabelMaps::map_label(Task task, std::string_view language,
                                 std::string_view label) const {
  if (task == Task::Ner || task == Task::Pos) return std::string(label);
  for (const auto& [s, t] : find(task, language).entries) {
    if (s == label) return t;
  }
  throw Error(ErrorKind::LabelUnknown, fmt::format("{} label '{}' has no {} translation",
                                                   to_string(task), label, language));
}

std::string LabelMaps::inverse(Task task, std::string_view language,
                               std::string_view translated) const {
  if (task == Task::Ner || task == Task::Pos) return std::string(translated);
  for (const auto& [s, t] : find(task, language).entries) {
    if (t == translated) return s;
  }
  throw Error(ErrorKind::LabelUnknown, fmt::format("'{}' is not a {} {} label", translated,
                                                   language, to_string(task)));
}

std::vector<std::string> LabelMaps::source_labels(Task task, std::string_view language) const {
  std::vector<std::string> out;
  for (const auto& [s, t] : find(task, language).entries) out.push_back(s);
  return out;
}

std::string record_african_language(const InstructionRecord& r) {
  const size_t dash = r.language.find('-');
  if (dash == std::string::npos) return r.language;
  const std::string src = r.language.substr(0, dash);
  return src == kEnglish ? r.language.substr(dash + 1) : src;
}

MtDirection record_direction(const InstructionRecord& r) {
  const size_t dash = r.language.find('-');
  if (dash == std::string::npos) return MtDirection::None;
  return r.language.substr(0, dash) == kEnglish ? MtDirection::FromEnglish
                                                : MtDirection::ToEnglish;
}

namespace {

nlohmann::ordered_json record_json(const InstructionRecord& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["language"] = r.language;
  j["instruction"] = r.instruction;
  j["inputs"] = r.inputs;
  j["targets"] = r.targets;
  j["split"] = r.split;
  return j;
}

}  // namespace

std::string to_jsonl(std::span<const InstructionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += record_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<InstructionRecord> parse_jsonl(std::string_view text) {
  static constexpr std::array<const char*, 6> kFields = {"task",   "language", "instruction",
                                                         "inputs", "targets",  "split"};
  std::vector<InstructionRecord> out;
  const auto lines = data_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::DataInvalid, fmt::format("jsonl line {}: {}", i + 1, e.what()));
    }
    if (!j.is_object() || j.size() != kFields.size()) {
      throw Error(ErrorKind::DataInvalid,
                  fmt::format("jsonl line {}: expected an object with fields task, language, "
                              "instruction, inputs, targets, split",
                              i + 1));
    }
    std::array<std::string, 6> v;
    for (size_t f = 0; f < kFields.size(); ++f) {
      auto it = j.find(kFields[f]);
      if (it == j.end() || !it->is_string()) {
        throw Error(ErrorKind::DataInvalid,
                    fmt::format("jsonl line {}: field '{}' missing or not a string", i + 1,
                                kFields[f]));
      }
      v[f] = it->get<std::string>();
    }
    InstructionRecord r{v[0], v[1], v[2], v[3], v[4], v[5]};
    parse_task(r.task);
    if (!r.split.empty() && r.split != "train" && r.split != "dev" && r.split != "test") {
      throw Error(ErrorKind::DataInvalid,
                  fmt::format("jsonl line {}: split '{}'", i + 1, r.split));
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const InstructionRecord> records) {
  write_file(path, to_jsonl(records));
}

std::vector<InstructionRecord> read_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_file(path));
}

std::vector<MtPair> read_mt_tsv(const std::filesystem::path& path) {
  std::vector<MtPair> out;
  const auto lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cols = split_tabs(lines[i]);
    if (cols.size() != 2) {
      throw Error(ErrorKind::PairInvalid,
                  fmt::format("{}:{}: expected 'african<TAB>english'", path.string(), i + 1));
    }
    out.push_back({cols[0], cols[1]});
  }
  return out;
}

std::vector<TaggedSentence> read_conll(const std::filesystem::path& path) {
  std::vector<TaggedSentence> out;
  TaggedSentence current;
  auto flush = [&] {
    if (!current.tokens.empty()) out.push_back(std::move(current));
    current = {};
  };
  const auto lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const auto fields = split_whitespace(lines[i]);
    if (fields.empty()) {
      flush();
      continue;
    }
    if (fields.front().starts_with("-DOCSTART-")) continue;
    if (fields.size() < 2) {
      throw Error(ErrorKind::DataInvalid,
                  fmt::format("{}:{}: expected 'token tag'", path.string(), i + 1));
    }
    current.tokens.emplace_back(fields.front());
    current.tags.emplace_back(fields.back());
  }
  flush();
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_has_data = false;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        row_has_data = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_has_data = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_has_data || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        row_has_data = false;
        break;
      default:
        field += c;
        row_has_data = true;
    }
  }
  if (quoted) throw Error(ErrorKind::DataInvalid, "csv: unterminated quoted field");
  if (row_has_data || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<LabeledText> read_labeled_csv(const std::filesystem::path& path) {
  auto rows = parse_csv(read_file(path));
  std::vector<LabeledText> out;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != 2) {
      throw Error(ErrorKind::DataInvalid,
                  fmt::format("{}: row {} has {} columns, expected text,label", path.string(),
                              i + 1, rows[i].size()));
    }
    if (i == 0 && rows[i][0] == "text" && rows[i][1] == "label") continue;
    out.push_back({std::move(rows[i][0]), std::move(rows[i][1])});
  }
  return out;
}

std::vector<QaExample> read_qa_jsonl(const std::filesystem::path& path) {
  std::vector<QaExample> out;
  const auto lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      out.push_back({j.at("question").get<std::string>(), j.at("context").get<std::string>(),
                     j.at("answer").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::DataInvalid,
                  fmt::format("{}:{}: {}", path.string(), i + 1, e.what()));
    }
  }
  return out;
}

namespace {

void check_context(const BuildContext& ctx) {
  if (!ctx.templates) throw Error(ErrorKind::ConfigInvalid, "build context has no templates");
  if (std::find(african_languages().begin(), african_languages().end(), ctx.language) ==
      african_languages().end()) {
    throw Error(ErrorKind::ConfigInvalid,
                fmt::format("'{}' is not one of hau, yor, swa, zul, xho", ctx.language));
  }
}

InstructionRecord make_record(Task task, std::string language, const TaskTemplate& tmpl,
                              std::string inputs, std::string targets, const BuildContext& ctx) {
  InstructionRecord r;
  r.task = std::string(to_string(task));
  r.language = std::move(language);
  r.instruction = render(tmpl, inputs, ctx.warnings);
  r.inputs = std::move(inputs);
  r.targets = std::move(targets);
  return r;
}

}  // namespace

std::vector<InstructionRecord> build_mt(std::span<const MtPair> pairs, const BuildContext& ctx) {
  check_context(ctx);
  std::mt19937_64 rng(ctx.seed);
  std::vector<InstructionRecord> out;
  out.reserve(pairs.size() * 2);
  const std::string lang = ctx.language;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.african.empty() || p.english.empty()) {
      throw Error(ErrorKind::PairInvalid,
                  fmt::format("translation pair {} has an empty {} side", i + 1,
                              p.african.empty() ? lang : std::string(kEnglish)));
    }
    const auto& to_eng = ctx.templates->select(Task::Mt, MtDirection::ToEnglish, lang, ctx.mode, rng);
    out.push_back(make_record(Task::Mt, lang + "-" + std::string(kEnglish), to_eng, p.african,
                              p.english, ctx));
    const auto& from_eng =
        ctx.templates->select(Task::Mt, MtDirection::FromEnglish, lang, ctx.mode, rng);
    out.push_back(make_record(Task::Mt, std::string(kEnglish) + "-" + lang, from_eng, p.english,
                              p.african, ctx));
  }
  return out;
}

std::vector<InstructionRecord> build_classification(Task task,
                                                    std::span<const LabeledText> examples,
                                                    const BuildContext& ctx) {
  check_context(ctx);
  if (task != Task::Sentiment && task != Task::Topic) {
    throw Error(ErrorKind::ConfigInvalid,
                fmt::format("{} is not a classification task", to_string(task)));
  }
  if (!ctx.labels) throw Error(ErrorKind::ConfigInvalid, "build context has no label maps");
  std::mt19937_64 rng(ctx.seed);
  std::vector<InstructionRecord> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    const auto& tmpl = ctx.templates->select(task, MtDirection::None, ctx.language, ctx.mode, rng);
    // English prompts list English labels; the eng map checks the label set.
    std::string target = ctx.labels->map_label(
        task, ctx.mode == PromptMode::English ? kEnglish : std::string_view(ctx.language),
        e.label);
    out.push_back(make_record(task, ctx.language, tmpl, e.text, std::move(target), ctx));
  }
  return out;
}

std::vector<InstructionRecord> build_tagging(Task task, std::span<const TaggedSentence> sentences,
                                             const BuildContext& ctx) {
  check_context(ctx);
  if (task != Task::Ner && task != Task::Pos) {
    throw Error(ErrorKind::ConfigInvalid,
                fmt::format("{} is not a tagging task", to_string(task)));
  }
  std::mt19937_64 rng(ctx.seed);
  std::vector<InstructionRecord> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    if (s.tokens.size() != s.tags.size()) {
      throw Error(ErrorKind::DataInvalid, "tagged sentence has mismatched token and tag counts");
    }
    const auto& tmpl = ctx.templates->select(task, MtDirection::None, ctx.language, ctx.mode, rng);
    out.push_back(make_record(task, ctx.language, tmpl, join(s.tokens, " "), join(s.tags, " "),
                              ctx));
  }
  return out;
}

std::string qa_inputs(const QaExample& e) { return e.question + "\n" + e.context; }

std::vector<InstructionRecord> build_qa(std::span<const QaExample> examples,
                                        const BuildContext& ctx) {
  check_context(ctx);
  std::mt19937_64 rng(ctx.seed);
  std::vector<InstructionRecord> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    const auto& tmpl = ctx.templates->select(Task::Qa, MtDirection::None, ctx.language, ctx.mode, rng);
    out.push_back(make_record(Task::Qa, ctx.language, tmpl, qa_inputs(e), e.answer, ctx));
  }
  return out;
}

SplitRatios published_split_ratios() {
  constexpr double total = 148.0 + 65.0 + 55.0;
  return {148.0 / total, 65.0 / total, 55.0 / total};
}

namespace {

size_t split_index(std::string_view split) {
  if (split == "train") return 0;
  if (split == "dev") return 1;
  if (split == "test") return 2;
  throw Error(ErrorKind::DataInvalid, fmt::format("record has split '{}'", split));
}

}  // namespace

InstructStats compute_instruct_stats(std::span<const InstructionRecord> records) {
  InstructStats stats;
  for (const auto& r : records) {
    const size_t s = split_index(r.split);
    ++stats.per_language[record_african_language(r)][s];
    if (record_direction(r) != MtDirection::None) ++stats.english_pivot[s];
  }
  return stats;
}

std::string InstructStats::render_table() const {
  std::string out = fmt::format("{:<10} {:>12} {:>12} {:>12} {:>18}\n", "Language", "train",
                                "dev", "test", "Number of samples");
  auto row = [&](std::string_view name, const std::array<uint64_t, 3>& c) {
    out += fmt::format("{:<10} {:>12} {:>12} {:>12} {:>18}\n", name, c[0], c[1], c[2],
                       c[0] + c[1] + c[2]);
  };
  for (const auto& code : african_languages()) {
    auto it = per_language.find(code);
    row(language_display_name(code), it == per_language.end() ? std::array<uint64_t, 3>{}
                                                              : it->second);
  }
  row("English", english_pivot);
  return out;
}

SplitResult merge_and_split(std::span<const InstructionRecord> records, SplitRatios ratios,
                            uint64_t seed) {
  const std::array<double, 3> r{ratios.train, ratios.dev, ratios.test};
  for (double x : r) {
    if (!(x >= 0.0)) throw Error(ErrorKind::ConfigInvalid, "split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw Error(ErrorKind::ConfigInvalid,
                fmt::format("split ratios sum to {}, expected 1", r[0] + r[1] + r[2]));
  }
  const size_t n = records.size();
  std::array<size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  size_t assigned = 0;
  for (size_t s = 0; s < 3; ++s) {
    const double exact = r[s] * static_cast<double>(n);
    sizes[s] = static_cast<size_t>(std::floor(exact + 1e-9));
    remainder[s] = exact - static_cast<double>(sizes[s]);
    assigned += sizes[s];
  }
  while (assigned < n) {
    size_t best = 0;
    for (size_t s = 1; s < 3; ++s) {
      if (remainder[s] > remainder[best]) best = s;
    }
    ++sizes[best];
    remainder[best] = -1.0;
    ++assigned;
  }

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::array<std::vector<size_t>, 3> picks;
  size_t cursor = 0;
  for (size_t s = 0; s < 3; ++s) {
    picks[s].assign(order.begin() + cursor, order.begin() + cursor + sizes[s]);
    std::sort(picks[s].begin(), picks[s].end());
    cursor += sizes[s];
  }

  static constexpr std::array<const char*, 3> kNames = {"train", "dev", "test"};
  SplitResult result;
  std::array<std::vector<InstructionRecord>*, 3> outs{&result.train, &result.dev, &result.test};
  for (size_t s = 0; s < 3; ++s) {
    outs[s]->reserve(picks[s].size());
    for (size_t idx : picks[s]) {
      InstructionRecord rec = records[idx];
      rec.split = kNames[s];
      outs[s]->push_back(std::move(rec));
    }
  }
  std::vector<InstructionRecord> all;
  for (auto* v : outs) all.insert(all.end(), v->begin(), v->end());
  result.stats = compute_instruct_stats(all);
  return result;
}

}  // namespace inkuba

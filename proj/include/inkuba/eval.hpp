#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "inkuba/instruct.hpp"
#include "inkuba/model.hpp"
#include "inkuba/tokenizer.hpp"

namespace inkuba {

// Next-token distributions over a token prefix.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::string name() const = 0;
  virtual int vocab_size() const = 0;
  virtual int max_seq_len() const = 0;
  // Row t holds log p(. | ids[0..t]); one row per input position.
  virtual std::vector<std::vector<double>> next_token_log_probs(
      std::span<const TokenId> ids) const = 0;
};

class TransformerModel : public LanguageModel {
 public:
  TransformerModel(std::string name, ModelConfig cfg, ParamStore<float> params);
  static TransformerModel from_checkpoint(const std::filesystem::path& path);

  std::string name() const override { return name_; }
  int vocab_size() const override { return cfg_.vocab_size; }
  int max_seq_len() const override { return cfg_.max_seq_len; }
  std::vector<std::vector<double>> next_token_log_probs(
      std::span<const TokenId> ids) const override;

 private:
  std::string name_;
  ModelConfig cfg_;
  ParamStore<float> params_;
};

enum class EvalKind { Generation, Classification, MultipleChoice };
enum class Metric { Bleu, MacroF1, Accuracy };
std::string_view to_string(EvalKind kind);
std::string_view to_string(Metric metric);

struct EvalTask {
  EvalKind kind = EvalKind::Generation;
  Task task = Task::Mt;  // mt for generation; sentiment/topic for classification
  MtDirection direction = MtDirection::ToEnglish;
  PromptMode mode = PromptMode::Native;
  Metric metric = Metric::Bleu;
  uint64_t seed = 0;  // variant draws in multiple mode
  bool length_normalized = false;

  // bleu iff generation. Throws ConfigInvalid.
  void validate() const;
  // "mt-to-eng", "mt-from-eng", "sentiment", "topic", "mc".
  static EvalTask parse(std::string_view name);
};

struct GenerationParams {
  int max_new_tokens = 64;
  bool stop_at_newline = true;  // eos always stops
};

// Prompts are preceded by eos, the document separator used in packed shards.
std::vector<TokenId> prompt_ids(const Tokenizer& tok, std::string_view prompt);

// Greedy continuation, cut at eos or the first newline. Throws ContextTooLong.
std::string generate(const LanguageModel& model, const Tokenizer& tok, std::string_view prompt,
                     const GenerationParams& params);

struct ChoiceScores {
  size_t chosen = 0;
  std::vector<double> log_prob;    // summed over the choice tokens
  std::vector<double> normalized;  // log_prob / byte length of the choice
};

// Continuation for each choice is " " + choice. Ties break to the lowest index.
ChoiceScores score_choices(const LanguageModel& model, const Tokenizer& tok,
                           std::string_view prompt, std::span<const std::string> choices,
                           bool length_normalized = false);

// Punctuation split off, then whitespace tokenization.
std::vector<std::string> bleu_tokenize(std::string_view text);

// Corpus BLEU-4 in [0, 100]. Throws CorpusMismatch on unequal counts.
double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

// Mean per-label F1 over `labels`, times 100.
double macro_f1(std::span<const std::string> predictions, std::span<const std::string> golds,
                std::span<const std::string> labels);
double accuracy(std::span<const std::string> predictions, std::span<const std::string> golds);

struct MultipleChoiceItem {
  std::string language;
  std::vector<std::pair<std::string, std::string>> prompt_fields;  // file order
  std::vector<std::string> choices;
  size_t answer_index = 0;
};

// Prompt fields as "name: value" lines followed by "Output:".
std::string multiple_choice_prompt(const MultipleChoiceItem& item);

struct EvalDataset {
  std::vector<InstructionRecord> records;
  std::vector<MultipleChoiceItem> items;
};

// Throws CorpusMismatch when the file does not fit the task.
EvalDataset load_eval_dataset(const std::filesystem::path& path, const EvalTask& task);
EvalDataset parse_eval_dataset(std::string_view text, const EvalTask& task);

// Prompt for a generation/classification record under the task's mode.
std::string render_prompt(const EvalTask& task, const InstructionRecord& record,
                          const TemplateSet& templates, std::mt19937_64& rng);

struct ReportRow {
  std::string metric;
  std::map<std::string, double> scores;  // language -> score

  double avg() const;
};

struct EvalReport {
  std::string model_name;
  std::vector<ReportRow> rows;

  // Languages present, ordered swa hau yor xho zul.
  std::vector<std::string> languages() const;
  std::string render_table() const;
  std::string to_csv() const;
};

struct EvalContext {
  const TemplateSet* templates = nullptr;
  const LabelMaps* labels = nullptr;
  GenerationParams generation;
};

EvalReport evaluate(const LanguageModel& model, const Tokenizer& tok, const EvalTask& task,
                    const EvalDataset& data, const EvalContext& ctx);

}  // namespace inkuba

#include "inkuba/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <json.hpp>

#include "inkuba/error.hpp"
#include "inkuba/text.hpp"
#include "inkuba/trainer.hpp"

namespace inkuba {

TransformerModel::TransformerModel(std::string name, ModelConfig cfg, ParamStore<float> params)
    : name_(std::move(name)), cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

TransformerModel TransformerModel::from_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  return TransformerModel(path.stem().string(), ckpt.model, std::move(ckpt.params));
}

std::vector<std::vector<double>> TransformerModel::next_token_log_probs(
    std::span<const TokenId> ids) const {
  TokenBatch batch;
  batch.batch = 1;
  batch.seq = static_cast<int>(ids.size());
  batch.ids.assign(ids.begin(), ids.end());
  batch.validate(cfg_);
  const auto logits = forward<float>(cfg_, params_, batch);
  const size_t V = static_cast<size_t>(cfg_.vocab_size);
  std::vector<std::vector<double>> out(ids.size(), std::vector<double>(V));
  for (size_t t = 0; t < ids.size(); ++t) {
    const float* row = logits.data() + t * V;
    const double mx = *std::max_element(row, row + V);
    double sum = 0;
    for (size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
    const double lse = mx + std::log(sum);
    for (size_t v = 0; v < V; ++v) out[t][v] = static_cast<double>(row[v]) - lse;
  }
  return out;
}

std::string_view to_string(EvalKind kind) {
  switch (kind) {
    case EvalKind::Generation: return "generation";
    case EvalKind::Classification: return "classification";
    case EvalKind::MultipleChoice: return "multiple_choice";
  }
  return "?";
}

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::Bleu: return "bleu";
    case Metric::MacroF1: return "macro_f1";
    case Metric::Accuracy: return "accuracy";
  }
  return "?";
}

void EvalTask::validate() const {
  if ((kind == EvalKind::Generation) != (metric == Metric::Bleu)) {
    throw Error(ErrorKind::ConfigInvalid,
                fmt::format("metric {} does not fit {} tasks", to_string(metric),
                            to_string(kind)));
  }
  if (kind == EvalKind::Generation && (task != Task::Mt || direction == MtDirection::None)) {
    throw Error(ErrorKind::ConfigInvalid, "generation tasks are translation with a direction");
  }
  if (kind == EvalKind::Classification && task != Task::Sentiment && task != Task::Topic) {
    throw Error(ErrorKind::ConfigInvalid, "classification tasks are sentiment or topic");
  }
}

EvalTask EvalTask::parse(std::string_view name) {
  EvalTask t;
  if (name == "mt-to-eng" || name == "mt-from-eng") {
    t.kind = EvalKind::Generation;
    t.task = Task::Mt;
    t.direction = name == "mt-to-eng" ? MtDirection::ToEnglish : MtDirection::FromEnglish;
    t.metric = Metric::Bleu;
  } else if (name == "sentiment" || name == "topic") {
    t.kind = EvalKind::Classification;
    t.task = parse_task(name);
    t.direction = MtDirection::None;
    t.metric = Metric::MacroF1;
  } else if (name == "mc") {
    t.kind = EvalKind::MultipleChoice;
    t.direction = MtDirection::None;
    t.metric = Metric::Accuracy;
  } else {
    throw Error(ErrorKind::ConfigInvalid,
                fmt::format("unknown eval task '{}' (mt-to-eng, mt-from-eng, sentiment, topic, mc)",
                            name));
  }
  return t;
}

std::vector<TokenId> prompt_ids(const Tokenizer& tok, std::string_view prompt) {
  std::vector<TokenId> ids{kEosId};
  const auto body = tok.encode(prompt);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

namespace {

void check_vocab(const LanguageModel& model, const Tokenizer& tok) {
  if (model.vocab_size() != tok.vocab_size()) {
    throw Error(ErrorKind::VocabMismatch,
                fmt::format("model vocab {} differs from tokenizer vocab {}", model.vocab_size(),
                            tok.vocab_size()));
  }
}

size_t argmax(const std::vector<double>& row) {
  return static_cast<size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::string generate(const LanguageModel& model, const Tokenizer& tok, std::string_view prompt,
                     const GenerationParams& params) {
  if (params.max_new_tokens < 1) {
    throw Error(ErrorKind::ConfigInvalid, "max_new_tokens must be >= 1");
  }
  check_vocab(model, tok);
  std::vector<TokenId> ids = prompt_ids(tok, prompt);
  const size_t prompt_len = ids.size();
  if (prompt_len + static_cast<size_t>(params.max_new_tokens) >
      static_cast<size_t>(model.max_seq_len())) {
    throw Error(ErrorKind::ContextTooLong,
                fmt::format("prompt of {} tokens plus {} new tokens exceeds context {}",
                            prompt_len, params.max_new_tokens, model.max_seq_len()));
  }
  std::string text;
  for (int i = 0; i < params.max_new_tokens; ++i) {
    const auto rows = model.next_token_log_probs(ids);
    const auto next = static_cast<TokenId>(argmax(rows.back()));
    if (next == kEosId) break;
    ids.push_back(next);
    text = tok.decode(std::span<const TokenId>(ids).subspan(prompt_len));
    if (params.stop_at_newline && text.find('\n') != std::string::npos) break;
  }
  if (params.stop_at_newline) {
    if (auto nl = text.find('\n'); nl != std::string::npos) text.resize(nl);
  }
  return text;
}

ChoiceScores score_choices(const LanguageModel& model, const Tokenizer& tok,
                           std::string_view prompt, std::span<const std::string> choices,
                           bool length_normalized) {
  check_vocab(model, tok);
  if (choices.size() < 2) throw Error(ErrorKind::DataInvalid, "need at least 2 choices");
  const auto context = prompt_ids(tok, prompt);
  ChoiceScores s;
  for (const auto& choice : choices) {
    const auto cont = tok.encode(" " + choice);
    std::vector<TokenId> ids = context;
    ids.insert(ids.end(), cont.begin(), cont.end());
    if (ids.size() > static_cast<size_t>(model.max_seq_len())) {
      throw Error(ErrorKind::ContextTooLong,
                  fmt::format("prompt plus choice is {} tokens, context {}", ids.size(),
                              model.max_seq_len()));
    }
    const auto rows = model.next_token_log_probs(ids);
    double lp = 0;
    for (size_t j = 0; j < cont.size(); ++j) {
      lp += rows[context.size() - 1 + j][static_cast<size_t>(cont[j])];
    }
    s.log_prob.push_back(lp);
    s.normalized.push_back(lp / static_cast<double>(std::max<size_t>(1, choice.size())));
  }
  const auto& ranked = length_normalized ? s.normalized : s.log_prob;
  s.chosen = 0;
  for (size_t i = 1; i < ranked.size(); ++i) {
    if (ranked[i] > ranked[s.chosen]) s.chosen = i;
  }
  return s;
}

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::string spaced;
  for (char c : text) {
    if (std::ispunct(static_cast<unsigned char>(c))) {
      spaced += ' ';
      spaced += c;
      spaced += ' ';
    } else {
      spaced += c;
    }
  }
  std::vector<std::string> out;
  for (auto w : split_whitespace(spaced)) out.emplace_back(w);
  return out;
}

double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) {
    throw Error(ErrorKind::CorpusMismatch,
                fmt::format("{} hypotheses for {} references", hypotheses.size(),
                            references.size()));
  }
  constexpr int kMaxN = 4;
  std::array<double, kMaxN> matched{}, total{};
  double hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = bleu_tokenize(hypotheses[s]);
    const auto ref = bleu_tokenize(references[s]);
    hyp_len += static_cast<double>(hyp.size());
    ref_len += static_cast<double>(ref.size());
    for (int n = 1; n <= kMaxN; ++n) {
      std::map<std::vector<std::string>, int> ref_counts, hyp_counts;
      for (size_t i = 0; i + n <= ref.size(); ++i) {
        ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      }
      for (size_t i = 0; i + n <= hyp.size(); ++i) {
        ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
      }
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(c, it->second);
        total[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0 || matched[0] == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < kMaxN; ++n) {
    double p = total[n] > 0 ? matched[n] / total[n] : 0.0;
    if (matched[n] == 0) p = (matched[n] + 1) / (total[n] + 1);
    log_sum += std::log(p);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
  return 100.0 * bp * std::exp(log_sum / kMaxN);
}

double macro_f1(std::span<const std::string> predictions, std::span<const std::string> golds,
                std::span<const std::string> labels) {
  if (predictions.size() != golds.size()) {
    throw Error(ErrorKind::CorpusMismatch, "prediction and gold counts differ");
  }
  if (labels.empty()) return 0.0;
  double sum = 0;
  for (const auto& label : labels) {
    double tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < golds.size(); ++i) {
      const bool p = predictions[i] == label, g = golds[i] == label;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    const double denom = 2 * tp + fp + fn;
    sum += denom > 0 ? 2 * tp / denom : 0.0;
  }
  return 100.0 * sum / static_cast<double>(labels.size());
}

double accuracy(std::span<const std::string> predictions, std::span<const std::string> golds) {
  if (predictions.size() != golds.size()) {
    throw Error(ErrorKind::CorpusMismatch, "prediction and gold counts differ");
  }
  if (golds.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < golds.size(); ++i) hits += predictions[i] == golds[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(golds.size());
}

std::string multiple_choice_prompt(const MultipleChoiceItem& item) {
  std::string out;
  for (const auto& [name, value] : item.prompt_fields) out += name + ": " + value + "\n";
  out += kOutputMarker;
  return out;
}

EvalDataset parse_eval_dataset(std::string_view text, const EvalTask& task) {
  task.validate();
  EvalDataset data;
  size_t line_no = 0, skipped = 0;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::DataInvalid, fmt::format("line {}: {}", line_no, e.what()));
    }
    const bool is_mc = j.is_object() && j.contains("choices");
    if (is_mc != (task.kind == EvalKind::MultipleChoice)) {
      throw Error(ErrorKind::CorpusMismatch,
                  fmt::format("line {}: {} record given to a {} task", line_no,
                              is_mc ? "multiple-choice" : "instruction", to_string(task.kind)));
    }
    if (is_mc) {
      MultipleChoiceItem item;
      try {
        item.language = j.at("language").get<std::string>();
        for (const auto& [k, v] : j.at("prompt_fields").items()) {
          item.prompt_fields.emplace_back(k, v.get<std::string>());
        }
        item.choices = j.at("choices").get<std::vector<std::string>>();
        item.answer_index = j.at("answer_index").get<size_t>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::DataInvalid, fmt::format("line {}: {}", line_no, e.what()));
      }
      if (item.choices.size() < 2 || item.answer_index >= item.choices.size()) {
        throw Error(ErrorKind::DataInvalid,
                    fmt::format("line {}: need >= 2 choices and a valid answer_index", line_no));
      }
      data.items.push_back(std::move(item));
      continue;
    }
    auto recs = parse_jsonl(line);
    InstructionRecord& r = recs.front();
    if (r.task != to_string(task.task)) {
      throw Error(ErrorKind::CorpusMismatch,
                  fmt::format("line {}: {} record given to a {} task", line_no, r.task,
                              to_string(task.task)));
    }
    if (record_direction(r) != task.direction) {
      ++skipped;
      continue;
    }
    data.records.push_back(std::move(r));
  }
  if (data.records.empty() && data.items.empty()) {
    throw Error(ErrorKind::CorpusMismatch,
                fmt::format("no usable examples for the task ({} skipped for direction)", skipped));
  }
  return data;
}

EvalDataset load_eval_dataset(const std::filesystem::path& path, const EvalTask& task) {
  return parse_eval_dataset(read_file(path), task);
}

std::string render_prompt(const EvalTask& task, const InstructionRecord& record,
                          const TemplateSet& templates, std::mt19937_64& rng) {
  const auto& tmpl = templates.select(task.task, task.direction, record_african_language(record),
                                      task.mode, rng);
  return render(tmpl, record.inputs);
}

double ReportRow::avg() const {
  if (scores.empty()) return 0.0;
  double sum = 0;
  for (const auto& [lang, v] : scores) sum += v;
  return sum / static_cast<double>(scores.size());
}

std::vector<std::string> EvalReport::languages() const {
  static const std::vector<std::string> order = {"swa", "hau", "yor", "xho", "zul"};
  std::vector<std::string> present;
  for (const auto& code : order) {
    for (const auto& row : rows) {
      if (row.scores.contains(code)) {
        present.push_back(code);
        break;
      }
    }
  }
  for (const auto& row : rows) {
    for (const auto& [code, v] : row.scores) {
      if (std::find(present.begin(), present.end(), code) == present.end()) {
        present.push_back(code);
      }
    }
  }
  return present;
}

std::string EvalReport::render_table() const {
  const auto langs = languages();
  std::string out = fmt::format("{:<20} {:<14}", "Model", "Metric");
  for (const auto& l : langs) out += fmt::format(" {:>8}", l);
  out += fmt::format(" {:>8}\n", "AVG");
  for (const auto& row : rows) {
    out += fmt::format("{:<20} {:<14}", model_name, row.metric);
    for (const auto& l : langs) {
      auto it = row.scores.find(l);
      out += it == row.scores.end() ? fmt::format(" {:>8}", "-")
                                    : fmt::format(" {:>8.2f}", it->second);
    }
    out += fmt::format(" {:>8.2f}\n", row.avg());
  }
  return out;
}

std::string EvalReport::to_csv() const {
  const auto langs = languages();
  std::string out = "model,metric";
  for (const auto& l : langs) out += "," + l;
  out += ",AVG\n";
  for (const auto& row : rows) {
    out += model_name + "," + row.metric;
    for (const auto& l : langs) {
      auto it = row.scores.find(l);
      out += it == row.scores.end() ? std::string(",") : fmt::format(",{:.6f}", it->second);
    }
    out += fmt::format(",{:.6f}\n", row.avg());
  }
  return out;
}

namespace {

struct Outcomes {
  std::vector<std::string> predictions, golds, normalized_predictions;
  std::vector<std::string> labels;
};

}  // namespace

EvalReport evaluate(const LanguageModel& model, const Tokenizer& tok, const EvalTask& task,
                    const EvalDataset& data, const EvalContext& ctx) {
  task.validate();
  EvalReport report;
  report.model_name = model.name();
  std::mt19937_64 rng(task.seed);
  std::map<std::string, Outcomes> by_lang;

  if (task.kind == EvalKind::MultipleChoice) {
    for (const auto& item : data.items) {
      const auto s = score_choices(model, tok, multiple_choice_prompt(item), item.choices,
                                   task.length_normalized);
      const auto raw = score_choices(model, tok, multiple_choice_prompt(item), item.choices,
                                     !task.length_normalized);
      auto& o = by_lang[item.language];
      const size_t normalized_pick = task.length_normalized ? s.chosen : raw.chosen;
      const size_t raw_pick = task.length_normalized ? raw.chosen : s.chosen;
      o.predictions.push_back(std::to_string(raw_pick));
      o.normalized_predictions.push_back(std::to_string(normalized_pick));
      o.golds.push_back(std::to_string(item.answer_index));
      for (size_t i = 0; i < item.choices.size(); ++i) {
        const auto label = std::to_string(i);
        if (std::find(o.labels.begin(), o.labels.end(), label) == o.labels.end()) {
          o.labels.push_back(label);
        }
      }
    }
    ReportRow acc{"accuracy", {}}, acc_norm{"accuracy_norm", {}}, f1{"macro_f1", {}};
    for (const auto& [lang, o] : by_lang) {
      acc.scores[lang] = accuracy(o.predictions, o.golds);
      acc_norm.scores[lang] = accuracy(o.normalized_predictions, o.golds);
      f1.scores[lang] = macro_f1(task.length_normalized ? o.normalized_predictions
                                                        : o.predictions,
                                 o.golds, o.labels);
    }
    report.rows = {acc, acc_norm, f1};
    return report;
  }

  if (!ctx.templates) throw Error(ErrorKind::ConfigInvalid, "evaluation needs templates");

  if (task.kind == EvalKind::Generation) {
    std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
    for (const auto& r : data.records) {
      const auto prompt = render_prompt(task, r, *ctx.templates, rng);
      auto& [hyps, refs] = pairs[record_african_language(r)];
      hyps.push_back(generate(model, tok, prompt, ctx.generation));
      refs.push_back(r.targets);
    }
    ReportRow row{"bleu", {}};
    for (const auto& [lang, hr] : pairs) row.scores[lang] = bleu(hr.first, hr.second);
    report.rows = {row};
    return report;
  }

  if (!ctx.labels) throw Error(ErrorKind::ConfigInvalid, "classification needs label maps");
  for (const auto& r : data.records) {
    const std::string lang = record_african_language(r);
    // English prompts list the English label set, shared by every language.
    const std::string label_lang =
        task.mode == PromptMode::English ? std::string(kEnglish) : lang;
    const auto sources = ctx.labels->source_labels(task.task, label_lang);
    std::vector<std::string> verbalizers;
    for (const auto& s : sources) {
      verbalizers.push_back(task.mode == PromptMode::English
                                ? s
                                : ctx.labels->map_label(task.task, lang, s));
    }
    std::string gold = r.targets;
    if (std::find(sources.begin(), sources.end(), gold) == sources.end()) {
      gold = ctx.labels->inverse(task.task, lang, gold);
    }
    const auto prompt = render_prompt(task, r, *ctx.templates, rng);
    const auto s = score_choices(model, tok, prompt, verbalizers, task.length_normalized);
    auto& o = by_lang[lang];
    o.predictions.push_back(sources[s.chosen]);
    o.golds.push_back(gold);
    o.labels = sources;
  }
  ReportRow f1{"macro_f1", {}}, acc{"accuracy", {}};
  for (const auto& [lang, o] : by_lang) {
    f1.scores[lang] = macro_f1(o.predictions, o.golds, o.labels);
    acc.scores[lang] = accuracy(o.predictions, o.golds);
  }
  report.rows = task.metric == Metric::Accuracy ? std::vector<ReportRow>{acc, f1}
                                                : std::vector<ReportRow>{f1, acc};
  return report;
}

}  // namespace inkuba

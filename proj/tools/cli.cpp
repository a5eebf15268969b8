#include "cli.hpp"

#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

#include "inkuba/attention.hpp"
#include "inkuba/corpus.hpp"
#include "inkuba/error.hpp"
#include "inkuba/eval.hpp"
#include "inkuba/instruct.hpp"
#include "inkuba/model.hpp"
#include "inkuba/shard.hpp"
#include "inkuba/text.hpp"
#include "inkuba/tokenizer.hpp"
#include "inkuba/trainer.hpp"

namespace inkuba {

namespace {

namespace fs = std::filesystem;

// Routes spdlog to the caller's error stream for the duration of a run.
class LogRedirect {
 public:
  LogRedirect(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    sink->set_pattern("[%l] %v");
    spdlog::set_default_logger(std::make_shared<spdlog::logger>("inkuba", sink));
  }
  ~LogRedirect() { spdlog::set_default_logger(previous_); }

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

struct Globals {
  uint64_t seed = 0;
  std::string log_level = "info";
  int threads = 1;
};

std::vector<std::string> corpus_texts(const fs::path& input) {
  std::vector<std::string> texts;
  if (fs::is_directory(input)) {
    for (auto& d : read_corpus_dir(input)) texts.push_back(std::move(d.text));
  } else {
    for (auto& line : read_lines(input)) {
      if (!line.empty()) texts.push_back(std::move(line));
    }
  }
  return texts;
}

std::vector<TokenId> parse_ids(const std::string& text) {
  std::vector<TokenId> ids;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    try {
      size_t used = 0;
      const long v = std::stol(word, &used);
      if (used != word.size()) throw std::invalid_argument(word);
      ids.push_back(static_cast<TokenId>(v));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::ConfigInvalid, fmt::format("'{}' is not a token id", word));
    }
  }
  return ids;
}

SplitRatios parse_ratios(const std::string& text) {
  if (text == "published") return published_split_ratios();
  std::vector<double> v;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      v.push_back(std::stod(part));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::ConfigInvalid, fmt::format("bad split ratio '{}'", part));
    }
  }
  if (v.size() != 3) {
    throw Error(ErrorKind::ConfigInvalid, "--ratios takes train,dev,test or 'published'");
  }
  return {v[0], v[1], v[2]};
}

void echo_options(const CLI::App& app, const std::string& prefix, std::ostream& err) {
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    std::string value = opt->get_default_str();
    if (opt->count() > 0) value = fmt::format("{}", fmt::join(opt->results(), ","));
    err << prefix << opt->get_lnames().front() << "=" << value << "\n";
  }
}

template <typename F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  LogRedirect redirect(err);
  CLI::App app{"Small multilingual language model toolkit", "inkuba"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every randomized step")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->capture_default_str();
  app.add_option("--threads", g.threads, "Cap on worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // tok
  auto* tok = app.add_subcommand("tok", "Byte-level BPE tokenizer");
  tok->require_subcommand(1);
  struct {
    std::string input, out, tokenizer, text, ids;
    size_t vocab = 61788;
  } tk;
  auto* tok_train = tok->add_subcommand("train", "Train merges on a corpus");
  tok_train->add_option("--input", tk.input, "Corpus directory or one-document-per-line file")
      ->required();
  tok_train->add_option("--vocab", tk.vocab, "Target vocabulary size")->capture_default_str();
  tok_train->add_option("--out", tk.out, "Tokenizer file to write")->required();
  auto* tok_encode = tok->add_subcommand("encode", "Print token ids for a text");
  tok_encode->add_option("--tokenizer", tk.tokenizer)->required();
  tok_encode->add_option("--text", tk.text)->required();
  auto* tok_decode = tok->add_subcommand("decode", "Print the text for space-separated ids");
  tok_decode->add_option("--tokenizer", tk.tokenizer)->required();
  tok_decode->add_option("--ids", tk.ids)->required();

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Monolingual corpus pipeline");
  corpus->require_subcommand(1);
  struct {
    std::string input, out, tokenizer;
    int seq_len = 2048;
  } cp;
  auto* corpus_clean = corpus->add_subcommand("clean", "Normalize and drop short documents");
  auto* corpus_dedup = corpus->add_subcommand("dedup", "Drop exact duplicate documents");
  for (auto* sub : {corpus_clean, corpus_dedup}) {
    sub->add_option("--input", cp.input, "Corpus directory (<dir>/<lang>/*.txt)")->required();
    sub->add_option("--out", cp.out, "Output corpus directory")->required();
  }
  auto* corpus_stats = corpus->add_subcommand("stats", "Sentence and token counts per language");
  corpus_stats->add_option("--input", cp.input)->required();
  corpus_stats->add_option("--tokenizer", cp.tokenizer)->required();
  auto* corpus_pack = corpus->add_subcommand("pack", "Tokenize and pack into training shards");
  corpus_pack->add_option("--input", cp.input)->required();
  corpus_pack->add_option("--tokenizer", cp.tokenizer)->required();
  corpus_pack->add_option("--seq-len", cp.seq_len)->capture_default_str();
  corpus_pack->add_option("--out", cp.out, "Shard directory")->required();

  // instruct
  auto* instruct = app.add_subcommand("instruct", "Instruction dataset builder");
  instruct->require_subcommand(1);
  struct {
    std::string task, lang, mode = "native", input, out, templates, labels,
                ratios = "0.8,0.1,0.1";
    std::vector<std::string> inputs;
  } in;
  auto* instruct_build = instruct->add_subcommand("build", "Render task examples into records");
  instruct_build->add_option("--task", in.task, "mt|sentiment|ner|pos|qa|topic")->required();
  instruct_build->add_option("--lang", in.lang, "hau|yor|swa|zul|xho")->required();
  instruct_build->add_option("--mode", in.mode, "native|english|multiple")->capture_default_str();
  instruct_build->add_option("--input", in.input, "Task data (TSV, CSV, CoNLL or JSONL)")
      ->required();
  instruct_build->add_option("--out", in.out, "Records file (JSON Lines)")->required();
  instruct_build->add_option("--templates", in.templates)->envname("INKUBA_TEMPLATES");
  instruct_build->add_option("--labels", in.labels)->envname("INKUBA_LABELS");
  auto* instruct_split = instruct->add_subcommand("split", "Merge record files and split");
  instruct_split->add_option("--input", in.inputs, "Record files")->required();
  instruct_split->add_option("--ratios", in.ratios, "train,dev,test or 'published'")
      ->capture_default_str();
  instruct_split->add_option("--out", in.out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Pretrain the decoder on packed shards");
  struct {
    std::string model_config, train_config, data, out, resume;
    int64_t stop_after = 0;
  } tr;
  train->add_option("--model-config", tr.model_config)->required()->envname("INKUBA_MODEL_CONFIG");
  train->add_option("--train-config", tr.train_config)->required()->envname("INKUBA_TRAIN_CONFIG");
  train->add_option("--data", tr.data, "Shard directory")->required();
  train->add_option("--out", tr.out, "Run directory")->required();
  train->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train->add_option("--stop-after", tr.stop_after, "Stop after this step")->capture_default_str();

  // params
  auto* params = app.add_subcommand("params", "Count parameters for a model config");
  std::string params_config;
  params->add_option("--model-config", params_config)->envname("INKUBA_MODEL_CONFIG");

  // generate
  auto* gen = app.add_subcommand("generate", "Greedy continuation of a prompt");
  struct {
    std::string model, tokenizer, prompt;
    int max_new_tokens = 64;
  } gn;
  gen->add_option("--model", gn.model, "Checkpoint")->required();
  gen->add_option("--tokenizer", gn.tokenizer)->required();
  gen->add_option("--prompt", gn.prompt)->required();
  gen->add_option("--max-new-tokens", gn.max_new_tokens)->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Zero-shot evaluation");
  eval->require_subcommand(1);
  struct {
    std::string task, mode = "native", model, tokenizer, data, report, templates, labels;
    bool normalized = false;
    int max_new_tokens = 64;
  } ev;
  auto* eval_run = eval->add_subcommand("run", "Score a model on a dataset");
  eval_run->add_option("--task", ev.task, "mt-to-eng|mt-from-eng|sentiment|topic|mc")->required();
  eval_run->add_option("--mode", ev.mode, "native|english|multiple")->capture_default_str();
  eval_run->add_option("--model", ev.model, "Checkpoint")->required();
  eval_run->add_option("--tokenizer", ev.tokenizer)->required();
  eval_run->add_option("--data", ev.data, "JSON Lines dataset")->required();
  eval_run->add_option("--report", ev.report, "Write the table here and CSV beside it");
  eval_run->add_flag("--normalized", ev.normalized, "Rank choices by per-byte log-probability");
  eval_run->add_option("--max-new-tokens", ev.max_new_tokens)->capture_default_str();
  eval_run->add_option("--templates", ev.templates)->envname("INKUBA_TEMPLATES");
  eval_run->add_option("--labels", ev.labels)->envname("INKUBA_LABELS");

  // bench
  auto* bench = app.add_subcommand("bench", "Kernel benchmarks");
  bench->require_subcommand(1);
  struct {
    int seq = 512, tile = kDefaultAttentionTile, heads = 4, head_dim = 64;
  } bn;
  auto* bench_attn = bench->add_subcommand("attention", "Naive vs streaming attention");
  bench_attn->add_option("--seq", bn.seq)->check(CLI::PositiveNumber)->capture_default_str();
  bench_attn->add_option("--tile", bn.tile)->check(CLI::PositiveNumber)->capture_default_str();
  bench_attn->add_option("--heads", bn.heads)->check(CLI::PositiveNumber)->capture_default_str();
  bench_attn->add_option("--head-dim", bn.head_dim)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // carbon
  auto* carbon = app.add_subcommand("carbon", "Training footprint estimate");
  CarbonQuery cq;
  std::optional<double> target_kg;
  carbon->add_option("--gpus", cq.gpu_count)->capture_default_str();
  carbon->add_option("--hours", cq.wall_hours)->capture_default_str();
  carbon->add_option("--power-kw", cq.device_power_kw)->capture_default_str();
  carbon->add_option("--pue", cq.pue)->capture_default_str();
  carbon->add_option("--intensity", cq.grid_intensity, "kgCO2e per kWh")->capture_default_str();
  carbon->add_option("--target-kg", target_kg, "Report the intensity that yields this total");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    // Show usage for the deepest subcommand that was reached.
    const CLI::App* shown = &app;
    for (auto* sub = &app; sub;) {
      const auto subs = sub->get_subcommands();
      if (subs.empty()) break;
      sub = subs.front();
      shown = sub;
    }
    err << shown->help();
    return exit_code(ErrorKind::ConfigInvalid);
  }

  const auto level = spdlog::level::from_str(g.log_level);
  if (level == spdlog::level::off && g.log_level != "off") {
    err << "error: unknown log level '" << g.log_level << "'\n";
    return exit_code(ErrorKind::ConfigInvalid);
  }
  spdlog::set_level(level);
  err << "# resolved configuration\n";
  echo_options(app, "", err);
  std::string path;
  for (const CLI::App* sub = &app; !sub->get_subcommands().empty();) {
    sub = sub->get_subcommands().front();
    path += sub->get_name() + ".";
    echo_options(*sub, path, err);
  }

  try {
    if (tok_train->parsed()) {
      const auto texts = corpus_texts(tk.input);
      const auto result = train_bpe(texts, tk.vocab);
      result.model.save(tk.out);
      out << fmt::format("vocab_size {}\n", result.model.vocab_size());
      if (result.stopped_early) {
        spdlog::warn("corpus supported only {} tokens of the requested {}",
                     result.model.vocab_size(), tk.vocab);
      }
    } else if (tok_encode->parsed()) {
      const auto ids = Tokenizer::load(tk.tokenizer).encode(tk.text);
      out << fmt::format("{}\n", fmt::join(ids, " "));
    } else if (tok_decode->parsed()) {
      out << Tokenizer::load(tk.tokenizer).decode(parse_ids(tk.ids)) << "\n";
    } else if (corpus_clean->parsed()) {
      const auto docs = read_corpus_dir(cp.input);
      std::vector<CorpusDocument> kept;
      for (const auto& d : docs) {
        if (auto c = clean(d)) kept.push_back(std::move(*c));
      }
      write_corpus_dir(kept, cp.out);
      out << fmt::format("kept {} of {} documents\n", kept.size(), docs.size());
    } else if (corpus_dedup->parsed()) {
      const auto docs = read_corpus_dir(cp.input);
      const auto kept = dedup(docs);
      write_corpus_dir(kept, cp.out);
      out << fmt::format("kept {} of {} documents\n", kept.size(), docs.size());
    } else if (corpus_stats->parsed()) {
      const auto docs = read_corpus_dir(cp.input);
      out << compute_stats(docs, Tokenizer::load(cp.tokenizer)).render_table();
    } else if (corpus_pack->parsed()) {
      const auto docs = read_corpus_dir(cp.input);
      const auto tokenizer = Tokenizer::load(cp.tokenizer);
      std::map<std::string, std::vector<std::vector<TokenId>>> per_language;
      for (const auto& d : docs) per_language[d.language].push_back(tokenizer.encode(d.text));
      if (per_language.empty()) {
        throw Error(ErrorKind::TrainingDataEmpty, "no documents under " + cp.input);
      }
      for (const auto& [code, encoded] : per_language) {
        const Shard shard = pack(encoded, cp.seq_len);
        shard.save(fs::path(cp.out) / (code + ".shard"));
        out << fmt::format("{} {} rows {} tokens\n", code, shard.rows(), shard.real_tokens());
      }
    } else if (instruct_build->parsed()) {
      const Task task = parse_task(in.task);
      const TemplateSet templates =
          in.templates.empty() ? TemplateSet::bundled() : TemplateSet::load(in.templates);
      const LabelMaps labels =
          in.labels.empty() ? LabelMaps::bundled() : LabelMaps::load(in.labels);
      std::vector<std::string> warnings;
      BuildContext ctx{in.lang, parse_prompt_mode(in.mode), g.seed, &templates, &labels,
                       &warnings};
      std::vector<InstructionRecord> records;
      switch (task) {
        case Task::Mt: records = build_mt(read_mt_tsv(in.input), ctx); break;
        case Task::Sentiment:
        case Task::Topic:
          records = build_classification(task, read_labeled_csv(in.input), ctx);
          break;
        case Task::Ner:
        case Task::Pos: records = build_tagging(task, read_conll(in.input), ctx); break;
        case Task::Qa: records = build_qa(read_qa_jsonl(in.input), ctx); break;
      }
      write_jsonl(in.out, records);
      out << fmt::format("{} records, {} warnings\n", records.size(), warnings.size());
    } else if (instruct_split->parsed()) {
      std::vector<InstructionRecord> all;
      for (const auto& path : in.inputs) {
        auto part = read_jsonl(path);
        all.insert(all.end(), part.begin(), part.end());
      }
      const auto split = merge_and_split(all, parse_ratios(in.ratios), g.seed);
      const fs::path dir(in.out);
      write_jsonl(dir / "train.jsonl", split.train);
      write_jsonl(dir / "dev.jsonl", split.dev);
      write_jsonl(dir / "test.jsonl", split.test);
      const auto table = split.stats.render_table();
      write_file(dir / "stats.txt", table);
      out << table;
    } else if (train->parsed()) {
      const ModelConfig model_cfg = ModelConfig::load(tr.model_config);
      TrainConfig train_cfg = TrainConfig::load(tr.train_config);
      if (app.get_option("--seed")->count() > 0) train_cfg.seed = g.seed;
      if (app.get_option("--threads")->count() > 0) train_cfg.threads = g.threads;
      err << "# model\n" << model_cfg.to_text() << "# train\n" << train_cfg.to_text();
      TrainRunOptions opts;
      opts.out_dir = tr.out;
      if (!tr.resume.empty()) opts.resume_from = tr.resume;
      opts.stop_after = tr.stop_after;
      const auto trace = run_training(model_cfg, train_cfg, load_shard_dir(tr.data), opts);
      if (!trace.empty()) {
        out << fmt::format("step {} loss {:.6f}\n", trace.back().step, trace.back().loss);
      }
    } else if (params->parsed()) {
      const ModelConfig cfg =
          params_config.empty() ? ModelConfig{} : ModelConfig::load(params_config);
      out << count_params(cfg) << "\n";
    } else if (gen->parsed()) {
      const auto model = TransformerModel::from_checkpoint(gn.model);
      GenerationParams p;
      p.max_new_tokens = gn.max_new_tokens;
      out << generate(model, Tokenizer::load(gn.tokenizer), gn.prompt, p) << "\n";
    } else if (eval_run->parsed()) {
      EvalTask task = EvalTask::parse(ev.task);
      task.mode = parse_prompt_mode(ev.mode);
      task.seed = g.seed;
      task.length_normalized = ev.normalized;
      const auto data = load_eval_dataset(ev.data, task);
      const auto model = TransformerModel::from_checkpoint(ev.model);
      const TemplateSet templates =
          ev.templates.empty() ? TemplateSet::bundled() : TemplateSet::load(ev.templates);
      const LabelMaps labels =
          ev.labels.empty() ? LabelMaps::bundled() : LabelMaps::load(ev.labels);
      EvalContext ctx{&templates, &labels, {}};
      ctx.generation.max_new_tokens = ev.max_new_tokens;
      const auto report = evaluate(model, Tokenizer::load(ev.tokenizer), task, data, ctx);
      const auto table = report.render_table();
      out << table;
      if (!ev.report.empty()) {
        write_file(ev.report, table);
        write_file(fs::path(ev.report).replace_extension(".csv"), report.to_csv());
      }
    } else if (bench_attn->parsed()) {
      std::mt19937_64 rng(g.seed);
      std::normal_distribution<float> normal(0.0f, 1.0f);
      const size_t n = static_cast<size_t>(bn.heads) * bn.seq * bn.head_dim;
      std::vector<float> q(n), k(n), v(n);
      for (auto* buf : {&q, &k, &v}) {
        for (auto& x : *buf) x = normal(rng);
      }
      AttentionInputs<float> ai{q, k, v, bn.heads, bn.seq, bn.head_dim, bn.tile};
      std::vector<float> a, b;
      StreamingStats stats;
      const double naive_ms = time_ms([&] { a = naive_attention(ai); });
      const double stream_ms = time_ms([&] { b = streaming_attention(ai, &stats); });
      double max_diff = 0;
      for (size_t i = 0; i < n; ++i) {
        max_diff = std::max(max_diff, static_cast<double>(std::abs(a[i] - b[i])));
      }
      const size_t naive_bytes = static_cast<size_t>(bn.seq) * bn.seq * sizeof(float);
      out << fmt::format("kernel     ms          score_buffer_bytes\n");
      out << fmt::format("naive      {:<11.3f} {}\n", naive_ms, naive_bytes);
      out << fmt::format("streaming  {:<11.3f} {}\n", stream_ms, stats.peak_score_buffer_bytes);
      out << fmt::format("max_abs_diff {:.3g}\n", max_diff);
    } else if (carbon->parsed()) {
      out << fmt::format("energy_kwh {:.6g}\n", energy_kwh(cq));
      out << fmt::format("carbon_kg {:.6g}\n", estimate_carbon(cq));
      if (target_kg) {
        out << fmt::format("implied_intensity_kg_per_kwh {:.6g}\n",
                           implied_grid_intensity(cq, *target_kg));
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace inkuba

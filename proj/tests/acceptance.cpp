// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "grad_check.hpp"
#include "inkuba/attention.hpp"
#include "inkuba/corpus.hpp"
#include "inkuba/eval.hpp"
#include "inkuba/instruct.hpp"
#include "inkuba/model.hpp"
#include "inkuba/shard.hpp"
#include "inkuba/text.hpp"
#include "inkuba/tokenizer.hpp"
#include "inkuba/trainer.hpp"
#include "test_util.hpp"

using namespace inkuba;

namespace {

// Tolerances and budgets.
constexpr double kAttentionTol = 1e-5;
constexpr double kGradRelTol = 1e-3;
constexpr double kInitLossTol = 0.1;
constexpr double kOverfitLoss = 0.05;
constexpr double kBleuTol = 1e-6;
constexpr double kAvgTol = 1e-9;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

int failures = 0;

void criterion(int id, const char* name, double budget_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) o.require(false, fmt::format("took {:.1f}s, budget {:.0f}s", secs, budget_s));
  if (!o.pass) ++failures;
  fmt::print("{} {:>2} {} ({:.2f}s){}{}\n", o.pass ? "PASS" : "FAIL", id, name, secs,
             o.detail.empty() ? "" : ": ", o.detail);
  std::fflush(stdout);
}

int worker_threads() {
  return static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1u, 4u));
}

// ---------------------------------------------------------------------------

Outcome parameter_count() {
  Outcome o;
  const ModelConfig cfg;  // defaults are the 0.4B configuration
  const int64_t n = count_params(cfg);
  o.require(n == 421'939'200, fmt::format("count {}", n));
  o.require(fmt::format("{:.3f}", static_cast<double>(n) / 1e9) == "0.422", "does not round to 0.422B");
  o.require(cfg.share_ffn && !cfg.tie_embeddings, "default sharing flags");
  if (o.pass) o.detail = fmt::format("{} params", n);
  return o;
}

// Pseudo-words from a multilingual syllable inventory, each used at least
// twice, so the merge supply comfortably exceeds the target.
std::vector<std::string> synthetic_corpus(size_t words, uint64_t seed) {
  const std::vector<std::string> onsets = {"b", "d", "f", "g", "h", "j", "k", "l", "m", "n",
                                           "p", "r", "s", "t", "w", "y", "z", "ch", "sh", "ny",
                                           "mb", "nd", "ng", "kw", "gb", "ts", "hl", "\xC9\x93",
                                           "\xC9\x97", "\xC6\x99", "\xE1\xB9\xA3", ""};
  const std::vector<std::string> vowels = {"a", "e", "i", "o", "u", "\xE1\xBA\xB9",
                                           "\xE1\xBB\x8D", "\xC3\xA0", "\xC3\xA9", "aa"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> on(0, onsets.size() - 1), vo(0, vowels.size() - 1);
  std::uniform_int_distribution<int> syl(2, 5);
  std::set<std::string> seen;
  std::vector<std::string> vocab;
  while (vocab.size() < words) {
    std::string w;
    const int n = syl(rng);
    for (int i = 0; i < n; ++i) w += onsets[on(rng)] + vowels[vo(rng)];
    if (seen.insert(w).second) vocab.push_back(w);
  }
  std::vector<std::string> docs;
  std::uniform_int_distribution<size_t> pick(0, vocab.size() - 1);
  std::string doc;
  int in_doc = 0;
  auto emit = [&](const std::string& w) {
    doc += (in_doc ? " " : "") + w;
    if (++in_doc == 12) {
      docs.push_back(doc);
      doc.clear();
      in_doc = 0;
    }
  };
  for (int rep = 0; rep < 2; ++rep) {
    for (const auto& w : vocab) emit(w);
  }
  for (size_t i = 0; i < vocab.size(); ++i) emit(vocab[pick(rng)]);
  if (!doc.empty()) docs.push_back(doc);
  return docs;
}

Outcome vocabulary() {
  Outcome o;
  const auto corpus = synthetic_corpus(60'000, 11);
  const auto big = train_bpe(corpus, 61788);
  o.require(big.model.vocab_size() == 61788,
            fmt::format("large target gave {}", big.model.vocab_size()));
  std::vector<std::string> mini;
  for (const auto& d : read_corpus_dir(test_util::fixtures() / "mini_corpus")) {
    mini.push_back(d.text);
  }
  const auto small = train_bpe(mini, 1024);
  o.require(small.model.vocab_size() == 1024,
            fmt::format("fixture target gave {}", small.model.vocab_size()));
  if (o.pass) o.detail = "61788 and 1024 hit exactly";
  return o;
}

Outcome attention() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> seq_d(1, 96), hd_d(1, 32), heads_d(1, 4);
  std::normal_distribution<float> n(0.0f, 1.0f);
  double worst = 0;
  int comparisons = 0;
  for (int shape = 0; shape < 100; ++shape) {
    const int seq = seq_d(rng), hd = hd_d(rng), heads = heads_d(rng);
    std::vector<float> q(static_cast<size_t>(heads) * seq * hd), k(q.size()), v(q.size());
    for (auto* buf : {&q, &k, &v}) {
      for (auto& x : *buf) x = n(rng);
    }
    for (int tile : {1, 16, 64, seq}) {
      AttentionInputs<float> in{q, k, v, heads, seq, hd, tile};
      const auto a = naive_attention(in), b = streaming_attention(in);
      for (size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
      }
      ++comparisons;
    }
    // Perturb keys/values after a cut; outputs up to the cut must not move.
    const int cut = seq / 2;
    auto k2 = k, v2 = v;
    for (int h = 0; h < heads; ++h) {
      for (int j = cut + 1; j < seq; ++j) {
        for (int d = 0; d < hd; ++d) {
          const size_t idx = (static_cast<size_t>(h) * seq + j) * hd + d;
          k2[idx] += 3.0f * n(rng);
          v2[idx] -= 3.0f * n(rng);
        }
      }
    }
    for (int tile : {1, 16, seq}) {
      AttentionInputs<float> a{q, k, v, heads, seq, hd, tile}, b{q, k2, v2, heads, seq, hd, tile};
      const auto sa = streaming_attention(a), sb = streaming_attention(b);
      const auto na = naive_attention(a), nb = naive_attention(b);
      for (int h = 0; h < heads; ++h) {
        for (int t = 0; t <= cut; ++t) {
          for (int d = 0; d < hd; ++d) {
            const size_t idx = (static_cast<size_t>(h) * seq + t) * hd + d;
            if (sa[idx] != sb[idx] || na[idx] != nb[idx]) {
              o.require(false, fmt::format("causality broken at seq {} tile {}", seq, tile));
              return o;
            }
          }
        }
      }
    }
  }
  o.require(worst < kAttentionTol, fmt::format("max diff {:.3g}", worst));
  if (o.pass) o.detail = fmt::format("{} comparisons, max diff {:.3g}", comparisons, worst);
  return o;
}

Outcome gradients() {
  Outcome o;
  double worst = 0;
  std::string worst_name;
  size_t coords = 0;
  for (bool tied : {false, true}) {
    auto cfg = test_util::toy_config();
    cfg.tie_embeddings = tied;
    const auto params = test_util::lively_params(cfg, 5 + tied);
    const auto batch = test_util::random_batch(cfg, 2, 8, 6, true);
    const auto r = test_util::grad_check(cfg, params, batch, 20, 7);
    coords += r.coordinates;
    if (r.worst_rel_error > worst) {
      worst = r.worst_rel_error;
      worst_name = r.worst_tensor;
    }
  }
  o.require(worst < kGradRelTol, fmt::format("rel error {:.3g} in {}", worst, worst_name));

  ModelConfig cfg = test_util::toy_config();
  cfg.vocab_size = 512;
  cfg.hidden_size = 64;
  cfg.n_heads = 4;
  cfg.max_seq_len = 32;
  const auto params = init_params<float>(cfg, 9);
  const auto batch = test_util::random_batch(cfg, 4, 32, 10, false);
  const double loss = loss_only<float>(cfg, params, batch);
  o.require(std::abs(loss - std::log(512.0)) < kInitLossTol,
            fmt::format("init loss {:.4f} vs ln(512) {:.4f}", loss, std::log(512.0)));
  if (o.pass) {
    o.detail = fmt::format("{} coords, worst rel {:.2g}; init loss {:.4f}", coords, worst, loss);
  }
  return o;
}

Outcome overfit() {
  Outcome o;
  // First bytes differ, so each row is fully determined by its first token.
  const std::vector<std::string> sentences = {
      "Habari ya asubuhi, rafiki yangu mpendwa.",
      "Sannu da zuwa, ina kwana ya gida?",
      "E kaaro, se alaafia ni gbogbo ile?",
      "Molo, unjani namhlanje ekhaya lakho?"};
  const Tokenizer tok;
  Shard data;
  for (int rep = 0; rep < 16; ++rep) {
    for (const auto& s : sentences) {
      const std::vector<std::vector<TokenId>> one = {tok.encode(s)};
      const Shard row = pack(one, 48);
      if (data.seq_len == 0) data.seq_len = row.seq_len;
      data.tokens.insert(data.tokens.end(), row.tokens.begin(), row.tokens.end());
      data.mask.insert(data.mask.end(), row.mask.begin(), row.mask.end());
    }
  }
  o.require(data.rows() == 64, fmt::format("{} rows", data.rows()));

  ModelConfig model;
  model.hidden_size = 64;
  model.intermediate_size = 128;
  model.n_heads = 4;
  model.n_layers = 2;
  model.vocab_size = tok.vocab_size();
  model.max_seq_len = 48;
  model.attention_tile = 16;
  const int64_t n_params = count_params(model);
  o.require(n_params <= 5'000'000, fmt::format("{} params", n_params));

  TrainConfig train;
  train.peak_lr = 1e-2;
  train.warmup_steps = 20;
  train.total_steps = 300;
  train.min_lr_ratio = 0.1;
  train.weight_decay = 0.0;
  train.batch_size = 8;
  train.grad_clip = 1.0;
  train.seed = 99;
  train.threads = worker_threads();

  Trainer a(model, train, data);
  std::vector<double> trace_a;
  std::string mid;
  while (!a.finished()) {
    trace_a.push_back(a.step().loss);
    if (a.current_step() == 150) mid = a.checkpoint().serialize();
  }
  const double final_loss = trace_a.back();
  o.require(final_loss < kOverfitLoss, fmt::format("final loss {:.4f}", final_loss));

  Trainer b(model, train, data);
  std::vector<double> trace_b;
  while (!b.finished()) trace_b.push_back(b.step().loss);
  o.require(trace_a == trace_b, "same seed gave different traces");

  Trainer c(model, train, data);
  c.resume(Checkpoint::parse(mid));
  std::vector<double> trace_c;
  while (!c.finished()) trace_c.push_back(c.step().loss);
  o.require(trace_c == std::vector<double>(trace_a.begin() + 150, trace_a.end()),
            "resumed trace diverged");
  if (o.pass) {
    o.detail = fmt::format("{} params, loss {:.4g} -> {:.3g}; repeat and resume exact", n_params,
                           trace_a.front(), final_loss);
  }
  return o;
}

Outcome tokenizer_properties() {
  Outcome o;
  std::mt19937_64 rng(77);
  std::vector<std::string> corpus;
  for (int i = 0; i < 500; ++i) corpus.push_back(test_util::random_multilingual(rng));
  const auto tok = train_bpe(corpus, 1200).model;
  int exact = 0;
  for (int i = 0; i < 10'000; ++i) {
    const auto s = test_util::random_multilingual(rng);
    if (tok.decode(tok.encode(s)) == nfc(s)) ++exact;
  }
  o.require(exact == 10'000, fmt::format("{} / 10000 exact", exact));

  const std::vector<std::string> gage = {"aaabdaaabac"};
  const auto g = train_bpe(gage, 300).model;
  const auto a = byte_token('a'), b = byte_token('b');
  const std::vector<Merge> expected = {{a, a}, {260, a}, {261, b}};
  o.require(g.merges() == expected, "merge sequence differs");
  if (o.pass) o.detail = "10000/10000 roundtrips; merges (a,a) (aa,a) (aaa,b)";
  return o;
}

Outcome instruct_goldens() {
  Outcome o;
  const auto templates = TemplateSet::bundled();
  const auto labels = LabelMaps::bundled();
  const auto& senti =
      templates.get(Task::Sentiment, MtDirection::None, "swa", PromptLanguage::Native, 1);
  o.require(render(senti, "Nimefurahi") ==
                "Tafadhali tambua mawazo yaliyoonyeshwa kwenye matini haya kwa kutegemea "
                "miongozo ifuatayo: Chanya: ---, Hasi: ---, Wastani: --- Nimefurahi Output:",
            "sentiment template");
  o.require(render(templates.get(Task::Mt, MtDirection::ToEnglish, "swa", PromptLanguage::Native, 1),
                   "Habari") == "Tafsiri zifuatazo kutoka kwa Swahili hadi English. Habari Output:",
            "mt swa-eng template");
  o.require(render(templates.get(Task::Mt, MtDirection::FromEnglish, "swa", PromptLanguage::Native, 1),
                   "Hello") == "Tafsiri zifuatazo kutoka kwa English hadi Swahili. Hello Output:",
            "mt eng-swa template");
  o.require(render(templates.get(Task::Sentiment, MtDirection::None, "swa", PromptLanguage::English, 1),
                   "x") ==
                "Please identify the sentiment reflected in this text based on the following "
                "guidelines: Positive: ---, Negative: ---, Neutral: --- x Output:",
            "english sentiment template");

  std::vector<std::string> warnings;
  const BuildContext ctx{"swa", PromptMode::Native, 0, &templates, &labels, &warnings};
  const auto pairs = read_mt_tsv(test_util::fixtures() / "instruct" / "swa_mt.tsv");
  const auto mt = build_mt(pairs, ctx);
  o.require(mt.size() == 2 * pairs.size(), "mt record count");
  o.require(to_jsonl(mt) ==
                read_file(test_util::fixtures() / "instruct" / "swa_mt_native.golden.jsonl"),
            "mt golden file");

  // 9 swa sentiment, 3 pairs (6 records), 5 hau ner.
  std::vector<InstructionRecord> all = mt;
  std::vector<LabeledText> texts;
  for (int i = 0; i < 9; ++i) texts.push_back({"maandishi " + std::to_string(i), i % 2 ? "positive" : "negative"});
  const auto cls = build_classification(Task::Sentiment, texts, ctx);
  all.insert(all.end(), cls.begin(), cls.end());
  for (int i = 0; i < 5; ++i) all.push_back({"ner", "hau", "i", std::to_string(i), "O", ""});
  const auto split = merge_and_split(all, {0.6, 0.2, 0.2}, 3);
  std::multiset<std::string> before, after;
  for (const auto& r : all) before.insert(r.task + r.language + r.inputs);
  for (const auto* part : {&split.train, &split.dev, &split.test}) {
    for (const auto& r : *part) after.insert(r.task + r.language + r.inputs);
  }
  o.require(before == after, "split is not a partition");
  o.require(split.train.size() == 12 && split.dev.size() == 4 && split.test.size() == 4,
            "split sizes");
  // Hand count from the split itself: swa rows are sentiment plus MT.
  std::array<uint64_t, 3> swa{}, hau{}, eng{};
  const std::vector<const std::vector<InstructionRecord>*> parts = {&split.train, &split.dev,
                                                                     &split.test};
  for (size_t p = 0; p < 3; ++p) {
    for (const auto& r : *parts[p]) {
      if (r.language == "hau") ++hau[p];
      if (r.language.find("swa") != std::string::npos) ++swa[p];
      if (r.task == "mt") ++eng[p];
    }
  }
  o.require(split.stats.per_language.at("swa") == swa, "swa stats");
  o.require(split.stats.per_language.at("hau") == hau, "hau stats");
  o.require(split.stats.english_pivot == eng, "english pivot stats");
  o.require(swa[0] + swa[1] + swa[2] == 15 && hau[0] + hau[1] + hau[2] == 5, "totals");
  if (o.pass) o.detail = "templates byte-exact, 2 records per pair, partition and counts hold";
  return o;
}

// Always answers with a fixed continuation for any prompt containing its key.
class KeyedStub : public LanguageModel {
 public:
  std::vector<std::pair<std::string, std::string>> answers;
  std::string name() const override { return "stub"; }
  int vocab_size() const override { return kBaseVocabSize; }
  int max_seq_len() const override { return 1024; }
  std::vector<std::vector<double>> next_token_log_probs(
      std::span<const TokenId> ids) const override {
    std::vector<std::vector<double>> rows;
    std::string text;
    for (TokenId id : ids) {
      if (id >= kNumSpecials) text += static_cast<char>(id - kNumSpecials);
      TokenId target = kEosId;
      const auto marker = text.rfind("Output:");
      if (marker != std::string::npos) {
        const auto tail = text.substr(marker + 7);
        for (const auto& [key, cont] : answers) {
          if (text.find(key) >= marker) continue;
          if (tail.size() < cont.size() && cont.compare(0, tail.size(), tail) == 0) {
            target = byte_token(static_cast<uint8_t>(cont[tail.size()]));
          }
          break;
        }
      }
      std::vector<double> row(kBaseVocabSize, std::log(1e-6 / (kBaseVocabSize - 1)));
      row[static_cast<size_t>(target)] = std::log1p(-1e-6);
      rows.push_back(std::move(row));
    }
    return rows;
  }
};

Outcome metrics() {
  Outcome o;
  const std::vector<std::string> refs = {"a b c d", "the cat sat on the mat"};
  o.require(std::abs(bleu(refs, refs) - 100.0) < kBleuTol, "identical corpora");
  const std::vector<std::string> empties = {"", ""};
  o.require(bleu(empties, refs) == 0.0, "empty hypotheses");
  // Hand n-gram table: matches 3/4, 1/3, 0/2, 0/1; the zeros become 1/3
  // and 1/2; brevity penalty 1.
  const double hand = 100.0 * std::pow((3.0 / 4) * (1.0 / 3) * (1.0 / 3) * (1.0 / 2), 0.25);
  const std::vector<std::string> hyp = {"a b x d"}, ref = {"a b c d"};
  const double got = bleu(hyp, ref);
  o.require(std::abs(got - hand) < kBleuTol, fmt::format("fixture {:.8f} vs {:.8f}", got, hand));

  const std::vector<std::string> labels = {"pos", "neg"};
  const std::vector<std::string> golds = {"pos", "pos", "neg", "neg"}, all_pos(4, "pos");
  // pos: TP 2, FP 2, FN 0 -> 2/3. neg: 0. mean 1/3.
  o.require(std::abs(macro_f1(all_pos, golds, labels) - 100.0 / 3) < 1e-9, "macro-F1 one-class");
  const std::vector<std::string> three = {"a", "b", "c"};
  const std::vector<std::string> p3 = {"a", "b", "b", "c", "a", "c"}, g3 = {"a", "b", "c", "c", "a", "a"};
  // a: TP 2 FP 0 FN 1 -> 4/5; b: TP 1 FP 1 FN 0 -> 2/3; c: TP 1 FP 1 FN 1 -> 1/2.
  const double f1_hand = 100.0 * (0.8 + 2.0 / 3 + 0.5) / 3;
  o.require(std::abs(macro_f1(p3, g3, three) - f1_hand) < 1e-9, "macro-F1 three-class");

  // Reports from every evaluation path must satisfy the AVG invariant.
  const auto templates = TemplateSet::bundled();
  const auto label_maps = LabelMaps::bundled();
  const EvalContext ctx{&templates, &label_maps, {}};
  const Tokenizer tok;
  KeyedStub stub;
  EvalDataset cls;
  const std::vector<std::string> langs = {"swa", "hau", "yor", "zul", "xho"};
  const std::vector<std::string> sentiments = {"positive", "negative", "neutral"};
  for (size_t l = 0; l < langs.size(); ++l) {
    for (size_t i = 0; i < 6; ++i) {
      const std::string key = fmt::format("<{}{}>", langs[l], i);
      cls.records.push_back({"sentiment", langs[l], "", key, sentiments[i % 3], "test"});
      stub.answers.push_back({key, " " + sentiments[(i + (i < l ? 1 : 0)) % 3]});
    }
  }
  auto senti = EvalTask::parse("sentiment");
  senti.mode = PromptMode::English;
  EvalDataset mt;
  const std::vector<std::string> hyps = {"one two three four", "one two three five", "six"};
  for (size_t i = 0; i < 3; ++i) {
    const std::string key = fmt::format("<mt{}>", i);
    mt.records.push_back({"mt", "swa-eng", "", key, "one two three four", "test"});
    stub.answers.push_back({key, hyps[i]});
  }
  EvalDataset mc;
  for (size_t i = 0; i < 4; ++i) {
    const std::string key = fmt::format("<mc{}>", i);
    mc.items.push_back({i % 2 ? "yor" : "swa", {{"question", key}}, {"x", "y", "z"}, i % 3});
    stub.answers.push_back({key, " y"});
  }
  std::vector<EvalReport> reports = {evaluate(stub, tok, senti, cls, ctx),
                                     evaluate(stub, tok, EvalTask::parse("mt-to-eng"), mt, ctx),
                                     evaluate(stub, tok, EvalTask::parse("mc"), mc, ctx)};
  int rows = 0;
  for (const auto& r : reports) {
    for (const auto& row : r.rows) {
      double sum = 0;
      for (const auto& [l, v] : row.scores) sum += v;
      const double mean = sum / static_cast<double>(row.scores.size());
      o.require(std::abs(row.avg() - mean) < kAvgTol, "AVG column off for " + row.metric);
      ++rows;
    }
  }
  // swa gets every sentiment right; the wrong answers grow with the
  // language index, so the columns differ.
  o.require(reports[0].rows[0].scores.at("swa") == 100.0, "always-correct column");
  if (o.pass) o.detail = fmt::format("BLEU fixture {:.6f}, {} report rows checked", got, rows);
  return o;
}

Outcome packing() {
  Outcome o;
  std::mt19937_64 rng(31337);
  std::uniform_int_distribution<int> docs_d(1, 30), len_d(0, 120), id_d(4, 61787), seq_d(2, 300);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<TokenId>> docs(docs_d(rng));
    size_t expected = 0;
    for (auto& d : docs) {
      d.resize(len_d(rng));
      for (auto& t : d) t = id_d(rng);
      expected += d.size();
    }
    expected += docs.size();
    const int seq = seq_d(rng);
    // Split across two shards to count "across shards".
    const size_t half = docs.size() / 2;
    const std::span<const std::vector<TokenId>> all(docs);
    size_t unmasked = 0;
    for (auto part : {all.subspan(0, half), all.subspan(half)}) {
      if (part.empty()) continue;
      const auto s = pack(part, seq);
      if (s.tokens.size() % static_cast<size_t>(seq) != 0) {
        o.require(false, "ragged rows");
        return o;
      }
      for (uint8_t m : s.mask) unmasked += m;
    }
    if (unmasked != expected) {
      o.require(false, fmt::format("trial {}: {} vs {}", trial, unmasked, expected));
      return o;
    }
  }
  o.detail = "1000 trials conserve tokens";
  return o;
}

Outcome carbon() {
  Outcome o;
  o.require(estimate_carbon({1, 1, 1, 1, 1}) == 1.0, "unit case");
  const CarbonQuery run{8, 16 * 24, 0.4, 1.0, 0.0};
  const double kwh = energy_kwh(run);
  o.require(std::abs(kwh - 1228.8) < 1e-9, fmt::format("energy {}", kwh));
  const double intensity = implied_grid_intensity(run, 53.76);
  o.require(std::abs(intensity - 0.04375) < 1e-12, fmt::format("intensity {}", intensity));
  auto with = run;
  with.grid_intensity = intensity;
  o.require(std::abs(estimate_carbon(with) - 53.76) < 1e-9, "round trip to 53.76 kg");
  if (o.pass) o.detail = fmt::format("{:.6g} kWh, {:.6g} kg/kWh -> 53.76 kg", kwh, intensity);
  return o;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  criterion(1, "parameter count of the 0.4B config", 1, parameter_count);
  criterion(2, "tokenizer hits vocabulary targets exactly", 60, vocabulary);
  criterion(3, "streaming attention matches naive; causal", 120, attention);
  criterion(4, "finite-difference gradients and init loss", 300, gradients);
  criterion(5, "overfit, determinism and exact resume", 600, overfit);
  criterion(6, "tokenizer roundtrip fuzz and merge fixture", 60, tokenizer_properties);
  criterion(7, "instruction builder goldens", 10, instruct_goldens);
  criterion(8, "metric oracles and AVG invariant", 10, metrics);
  criterion(9, "packing conserves tokens", 60, packing);
  criterion(10, "carbon estimator", 1, carbon);
  fmt::print("{} of 10 criteria passed\n", 10 - failures);
  return failures;
}

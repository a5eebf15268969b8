#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "inkuba/error.hpp"
#include "inkuba/instruct.hpp"
#include "inkuba/text.hpp"
#include "test_util.hpp"

using namespace inkuba;

namespace {

std::filesystem::path fixture(const std::string& name) {
  return test_util::fixtures() / "instruct" / name;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an inkuba::Error");
  return ErrorKind::Io;
}

struct Env {
  TemplateSet templates = TemplateSet::bundled();
  LabelMaps labels = LabelMaps::bundled();
  std::vector<std::string> warnings;

  BuildContext ctx(std::string lang, PromptMode mode = PromptMode::Native, uint64_t seed = 0) {
    return {std::move(lang), mode, seed, &templates, &labels, &warnings};
  }
};

std::vector<InstructionRecord> mixed_records() {
  // 4 swa sentiment, 2 hau ner, 3 MT pairs for yor (6 records).
  std::vector<InstructionRecord> out;
  for (int i = 0; i < 4; ++i) out.push_back({"sentiment", "swa", "i", std::to_string(i), "Chanya", ""});
  for (int i = 0; i < 2; ++i) out.push_back({"ner", "hau", "i", std::to_string(i), "O", ""});
  for (int i = 0; i < 3; ++i) {
    out.push_back({"mt", "yor-eng", "i", std::to_string(i), "x", ""});
    out.push_back({"mt", "eng-yor", "i", std::to_string(i), "y", ""});
  }
  return out;
}

}  // namespace

TEST_CASE("bundled Swahili native templates carry the published wording") {
  Env env;
  const auto& to_eng =
      env.templates.get(Task::Mt, MtDirection::ToEnglish, "swa", PromptLanguage::Native, 1);
  CHECK(to_eng.text == "Tafsiri zifuatazo kutoka kwa Swahili hadi English. {inputs} Output:");
  CHECK(render(to_eng, "Habari") ==
        "Tafsiri zifuatazo kutoka kwa Swahili hadi English. Habari Output:");
  const auto& from_eng =
      env.templates.get(Task::Mt, MtDirection::FromEnglish, "swa", PromptLanguage::Native, 1);
  CHECK(from_eng.text == "Tafsiri zifuatazo kutoka kwa English hadi Swahili. {inputs} Output:");
  const auto& senti =
      env.templates.get(Task::Sentiment, MtDirection::None, "swa", PromptLanguage::Native, 1);
  CHECK(senti.text.find("Chanya: ---, Hasi: ---, Wastani: --- {inputs} Output:") !=
        std::string::npos);
  const auto& english =
      env.templates.get(Task::Sentiment, MtDirection::None, "swa", PromptLanguage::English, 1);
  CHECK(english.text.find("Positive: ---, Negative: ---, Neutral: ---") != std::string::npos);
  // English MT wording follows the direction.
  CHECK(env.templates.get(Task::Mt, MtDirection::FromEnglish, "swa", PromptLanguage::English, 1)
            .text.rfind("Translate the following from English into Swahili.", 0) == 0);
}

TEST_CASE("every Swahili task has four native variants that validate") {
  Env env;
  for (auto [task, dir] : {std::pair{Task::Sentiment, MtDirection::None},
                           {Task::Mt, MtDirection::ToEnglish},
                           {Task::Mt, MtDirection::FromEnglish},
                           {Task::Topic, MtDirection::None},
                           {Task::Ner, MtDirection::None},
                           {Task::Pos, MtDirection::None},
                           {Task::Qa, MtDirection::None}}) {
    for (int v = 1; v <= kVariantsPerTask; ++v) {
      CHECK_NOTHROW(env.templates.get(task, dir, "swa", PromptLanguage::Native, v).validate());
    }
  }
  for (const auto& lang : {"hau", "yor", "zul", "xho"}) {
    CHECK_NOTHROW(env.templates.get(Task::Sentiment, MtDirection::None, lang,
                                    PromptLanguage::English, 1));
    CHECK(kind_of([&] {
            env.templates.get(Task::Sentiment, MtDirection::None, lang, PromptLanguage::Native, 1);
          }) == ErrorKind::TemplateMissing);
  }
}

TEST_CASE("rendering preserves the template bytes around the input") {
  Env env;
  const auto& t =
      env.templates.get(Task::Sentiment, MtDirection::None, "swa", PromptLanguage::Native, 3);
  const std::string input = "Ọjọ́ dára \"sana\"\t{inputs}";
  const auto out = render(t, input);
  const auto at = t.text.find(kInputsPlaceholder);
  CHECK(out.substr(0, at) == t.text.substr(0, at));
  CHECK(out.substr(at, input.size()) == input);
  CHECK(out.substr(at + input.size()) == t.text.substr(at + kInputsPlaceholder.size()));
}

TEST_CASE("empty input renders and is flagged") {
  Env env;
  const auto& t = env.templates.get(Task::Mt, MtDirection::ToEnglish, "swa", PromptLanguage::Native, 1);
  std::vector<std::string> warnings;
  CHECK(render(t, "", &warnings) == "Tafsiri zifuatazo kutoka kwa Swahili hadi English.  Output:");
  CHECK(warnings.size() == 1);
}

TEST_CASE("template validation") {
  TaskTemplate t;
  t.task = Task::Sentiment;
  t.language = "swa";
  t.text = "no placeholder Output:";
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::TemplateInvalid);
  CHECK(kind_of([&] { render(t, "x"); }) == ErrorKind::TemplateInvalid);
  t.text = "{inputs} {inputs} Output:";
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::TemplateInvalid);
  t.text = "{inputs} and nothing after";
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::TemplateInvalid);
  t.text = "Tell me {inputs} Output:";
  CHECK_NOTHROW(t.validate());
  t.variant = 5;
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::TemplateInvalid);
  t.variant = 1;
  t.direction = MtDirection::ToEnglish;
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::TemplateInvalid);

  CHECK(kind_of([] { TemplateSet::parse_tsv("sentiment\t-\tswa\tnative\t1\tx\n"); }) ==
        ErrorKind::TemplateInvalid);
  TemplateSet set;
  t.direction = MtDirection::None;
  set.add(t);
  CHECK(kind_of([&] { set.add(t); }) == ErrorKind::TemplateInvalid);
}

TEST_CASE("multiple mode draws native variants deterministically") {
  Env env;
  std::mt19937_64 a(9), b(9);
  std::set<int> seen;
  for (int i = 0; i < 200; ++i) {
    const auto& x = env.templates.select(Task::Topic, MtDirection::None, "swa", PromptMode::Multiple, a);
    const auto& y = env.templates.select(Task::Topic, MtDirection::None, "swa", PromptMode::Multiple, b);
    CHECK(&x == &y);
    CHECK(x.prompt_language == PromptLanguage::Native);
    seen.insert(x.variant);
  }
  CHECK(seen == std::set<int>{1, 2, 3, 4});
}

TEST_CASE("label maps") {
  Env env;
  CHECK(env.labels.map_label(Task::Sentiment, "swa", "positive") == "Chanya");
  CHECK(env.labels.map_label(Task::Sentiment, "swa", "neutral") == "Wastani");
  CHECK(env.labels.map_label(Task::Ner, "yor", "B-PER") == "B-PER");
  CHECK(env.labels.map_label(Task::Pos, "hau", "NOUN") == "NOUN");
  CHECK(kind_of([&] { env.labels.map_label(Task::Sentiment, "swa", "bogus"); }) ==
        ErrorKind::LabelUnknown);
  CHECK(kind_of([&] { env.labels.map_label(Task::Sentiment, "hau", "positive"); }) ==
        ErrorKind::LabelUnknown);
  for (auto task : {Task::Sentiment, Task::Topic}) {
    for (const auto& label : env.labels.source_labels(task, "swa")) {
      CHECK(env.labels.inverse(task, "swa", env.labels.map_label(task, "swa", label)) == label);
    }
  }
  LabelMaps m;
  m.add(Task::Sentiment, "yor", "positive", "Rere");
  CHECK(kind_of([&] { m.add(Task::Sentiment, "yor", "negative", "Rere"); }) ==
        ErrorKind::DataInvalid);
  CHECK(kind_of([&] { m.add(Task::Sentiment, "yor", "positive", "Dara"); }) ==
        ErrorKind::DataInvalid);
}

TEST_CASE("three Swahili pairs match the hand-written golden file") {
  Env env;
  const auto pairs = read_mt_tsv(fixture("swa_mt.tsv"));
  REQUIRE(pairs.size() == 3);
  const auto records = build_mt(pairs, env.ctx("swa"));
  CHECK(to_jsonl(records) == read_file(fixture("swa_mt_native.golden.jsonl")));
  CHECK(parse_jsonl(to_jsonl(records)) == records);
}

TEST_CASE("translation builds both directions") {
  Env env;
  std::vector<MtPair> pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back({"sw" + std::to_string(i), "en" + std::to_string(i)});
  const auto records = build_mt(pairs, env.ctx("swa", PromptMode::Multiple, 3));
  REQUIRE(records.size() == 20);
  int to_eng = 0, from_eng = 0;
  for (const auto& r : records) {
    CHECK(r.task == "mt");
    CHECK(record_african_language(r) == "swa");
    if (record_direction(r) == MtDirection::ToEnglish) {
      ++to_eng;
      CHECK(r.targets.rfind("en", 0) == 0);
    } else {
      ++from_eng;
      CHECK(record_direction(r) == MtDirection::FromEnglish);
      CHECK(r.targets.rfind("sw", 0) == 0);
    }
  }
  CHECK(to_eng == 10);
  CHECK(from_eng == 10);

  const std::vector<MtPair> broken = {{"a", "b"}, {"", "c"}};
  CHECK(kind_of([&] { build_mt(broken, env.ctx("swa")); }) == ErrorKind::PairInvalid);
  const std::vector<MtPair> one = {{"a", "b"}};
  CHECK(kind_of([&] { build_mt(one, env.ctx("yor")); }) == ErrorKind::TemplateMissing);
  CHECK(build_mt(one, env.ctx("yor", PromptMode::English)).size() == 2);
  CHECK(kind_of([&] { build_mt(one, env.ctx("eng")); }) == ErrorKind::ConfigInvalid);
}

TEST_CASE("sentiment from CSV with translated labels") {
  Env env;
  const auto rows = read_labeled_csv(fixture("swa_sentiment.csv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[1].text == "Chakula kilikuwa baridi, sikupenda");
  CHECK(rows[3].text == "Alisema \"asante\" kwa furaha");
  const auto native = build_classification(Task::Sentiment, rows, env.ctx("swa"));
  REQUIRE(native.size() == 4);
  CHECK(native[0].targets == "Chanya");
  CHECK(native[1].targets == "Hasi");
  CHECK(native[2].targets == "Wastani");
  CHECK(native[0].language == "swa");
  CHECK(native[0].instruction.rfind("Tafadhali tambua", 0) == 0);
  const auto english = build_classification(Task::Sentiment, rows, env.ctx("swa", PromptMode::English));
  CHECK(english[0].targets == "positive");
  CHECK(english[0].instruction.rfind("Please identify", 0) == 0);

  const std::vector<LabeledText> bad = {{"text here", "ecstatic"}};
  CHECK(kind_of([&] { build_classification(Task::Sentiment, bad, env.ctx("swa")); }) ==
        ErrorKind::LabelUnknown);
}

TEST_CASE("CSV parsing follows RFC 4180 quoting") {
  const auto rows = parse_csv("a,\"b,c\",\"d\"\"e\"\r\n\"multi\nline\",x,\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"a", "b,c", "d\"e"});
  CHECK(rows[1] == std::vector<std::string>{"multi\nline", "x", ""});
  CHECK_THROWS_AS(parse_csv("\"unterminated"), Error);
}

TEST_CASE("NER from CoNLL keeps tags verbatim") {
  Env env;
  const auto sentences = read_conll(fixture("yor_ner.conll"));
  REQUIRE(sentences.size() == 2);
  CHECK(sentences[0].tokens.size() == 4);
  CHECK(sentences[1].tags == std::vector<std::string>{"B-DATE", "I-DATE"});
  const auto records = build_tagging(Task::Ner, sentences, env.ctx("yor", PromptMode::English));
  REQUIRE(records.size() == 2);
  CHECK(records[0].inputs == "Adé lọ sí Èkó");
  CHECK(records[0].targets == "B-PER O O B-LOC");
  CHECK(records[0].task == "ner");
}

TEST_CASE("QA records put the question before the context") {
  Env env;
  const auto examples = read_qa_jsonl(fixture("swa_qa.jsonl"));
  REQUIRE(examples.size() == 2);
  const auto records = build_qa(examples, env.ctx("swa"));
  CHECK(records[0].inputs == "Mji mkuu wa Kenya ni upi?\nNairobi ni mji mkuu wa Kenya.");
  CHECK(records[0].targets == "Nairobi");
  CHECK(records[0].instruction.find(records[0].inputs) != std::string::npos);
}

TEST_CASE("JSONL fields and validation") {
  const std::vector<InstructionRecord> recs = {{"qa", "swa", "ins \"q\"", "in\nput", "Ọ̀la", "dev"}};
  const auto text = to_jsonl(recs);
  CHECK(text.rfind("{\"task\":\"qa\",\"language\":\"swa\",\"instruction\":", 0) == 0);
  CHECK(parse_jsonl(text) == recs);
  CHECK(kind_of([] { parse_jsonl("{\"task\":\"qa\"}\n"); }) == ErrorKind::DataInvalid);
  CHECK(kind_of([] {
          parse_jsonl(
              "{\"task\":\"qa\",\"language\":\"swa\",\"instruction\":\"i\",\"inputs\":\"x\","
              "\"targets\":\"y\",\"split\":\"holdout\"}\n");
        }) == ErrorKind::DataInvalid);
}

TEST_CASE("100 records split 80/10/10, disjoint and complete") {
  std::vector<InstructionRecord> records;
  for (int i = 0; i < 100; ++i) records.push_back({"qa", "swa", "i", std::to_string(i), "t", ""});
  const auto r = merge_and_split(records, {}, 17);
  CHECK(r.train.size() == 80);
  CHECK(r.dev.size() == 10);
  CHECK(r.test.size() == 10);
  std::multiset<std::string> all;
  for (const auto* part : {&r.train, &r.dev, &r.test}) {
    for (const auto& rec : *part) {
      all.insert(rec.inputs);
      CHECK(rec.task == "qa");
    }
  }
  CHECK(all.size() == 100);
  CHECK(std::set<std::string>(all.begin(), all.end()).size() == 100);
  for (const auto& rec : r.dev) CHECK(rec.split == "dev");
  CHECK(std::is_sorted(r.train.begin(), r.train.end(), [](const auto& a, const auto& b) {
    return std::stoi(a.inputs) < std::stoi(b.inputs);
  }));

  const auto again = merge_and_split(records, {}, 17);
  CHECK(again.train == r.train);
  CHECK(again.test == r.test);
  const auto other = merge_and_split(records, {}, 18);
  CHECK(other.train != r.train);

  CHECK(kind_of([&] { merge_and_split(records, {0.5, 0.2, 0.2}, 1); }) == ErrorKind::ConfigInvalid);
}

TEST_CASE("largest-remainder split sizes and the released proportions") {
  std::vector<InstructionRecord> records(7, {"qa", "swa", "i", "x", "t", ""});
  const auto r = merge_and_split(records, {0.5, 0.25, 0.25}, 1);
  // 3.5 / 1.75 / 1.75: floors 3/1/1, the two spare records go to the
  // largest remainders (0.75, 0.75 beat 0.5).
  CHECK(r.train.size() == 3);
  CHECK(r.dev.size() == 2);
  CHECK(r.test.size() == 2);
  const auto p = published_split_ratios();
  CHECK(p.train == doctest::Approx(148.0 / 268.0));
  CHECK(p.dev == doctest::Approx(65.0 / 268.0));
  CHECK(p.test == doctest::Approx(55.0 / 268.0));
  CHECK(p.train + p.dev + p.test == doctest::Approx(1.0));
}

TEST_CASE("stats table counts by hand") {
  const auto records = mixed_records();
  const auto r = merge_and_split(records, {1.0, 0.0, 0.0}, 5);
  CHECK(r.stats.per_language.at("swa") == std::array<uint64_t, 3>{4, 0, 0});
  CHECK(r.stats.per_language.at("hau") == std::array<uint64_t, 3>{2, 0, 0});
  CHECK(r.stats.per_language.at("yor") == std::array<uint64_t, 3>{6, 0, 0});
  CHECK(r.stats.english_pivot == std::array<uint64_t, 3>{6, 0, 0});

  const auto table = r.stats.render_table();
  const std::vector<std::string> order = {"Hausa", "Yoruba", "Swahili", "isiZulu", "isiXhosa",
                                          "English"};
  size_t last = 0;
  for (const auto& name : order) {
    const auto at = table.find(name);
    REQUIRE(at != std::string::npos);
    CHECK(at > last);
    last = at;
  }
  CHECK(kind_of([&] { compute_instruct_stats(records); }) == ErrorKind::DataInvalid);
  auto split = r.train;
  split[0].split = "test";
  split[1].split = "dev";
  const auto stats = compute_instruct_stats(split);
  CHECK(stats.per_language.at("swa") == std::array<uint64_t, 3>{2, 1, 1});
}

#include <gtest/gtest.h>

#include "conflictqa/corpus.hpp"
#include "conflictqa/errors.hpp"
#include "test_util.hpp"

using namespace conflictqa;
using conflictqa::testing::read_file;
using conflictqa::testing::TempDir;
using conflictqa::testing::write_file;

namespace {

Document doc(int rank, std::string text = "body") {
  Document d;
  d.doc_id = "d" + std::to_string(rank);
  d.title = "T" + std::to_string(rank);
  d.text = std::move(text);
  d.rank = rank;
  return d;
}

RetrievedSet random_labeled_set(Rng& rng, std::size_t i) {
  RetrievedSet s{"q" + std::to_string(i), {}};
  const int m = 1 + static_cast<int>(rng.below(6));
  for (int r = 1; r <= m; ++r) {
    Document d = doc(r, conflictqa::testing::random_text(rng, 40));
    d.title = conflictqa::testing::random_text(rng, 6);
    if (rng.bernoulli(0.4)) {
      d.perturbed = true;
      PerturbationRecord rec;
      if (rng.bernoulli(0.5)) {
        rec.method = PerturbationMethod::Entity;
        rec.replacement = conflictqa::testing::random_text(rng, 6);
        rec.perturbation_type = PerturbationType::ER;
      } else {
        rec.method = PerturbationMethod::MacNoise;
        rec.generator_id = "gen-" + std::to_string(rng.below(3));
        if (rng.bernoulli(0.5)) rec.perturbation_type = static_cast<PerturbationType>(rng.below(4));
      }
      rec.original_answer = conflictqa::testing::random_text(rng, 6);
      d.record = rec;
    }
    s.documents.push_back(std::move(d));
  }
  return s;
}

}  // namespace

TEST(Corpus, LoadsSingleQaRecord) {
  TempDir dir;
  write_file(dir / "qa.jsonl", R"({"id":"q1","question":"who ...","answers":["1995"],"answer_type":"DATE"})" "\n");
  const auto qa = load_qa_dataset(dir / "qa.jsonl");
  ASSERT_EQ(qa.size(), 1u);
  EXPECT_EQ(qa[0].id, "q1");
  EXPECT_EQ(qa[0].answers, std::vector<std::string>{"1995"});
  EXPECT_EQ(qa[0].answer_type, AnswerType::DATE);
}

TEST(Corpus, NaAliasAccepted) {
  EXPECT_EQ(parse_answer_type("N/A"), AnswerType::NA);
  EXPECT_EQ(parse_answer_type("NA"), AnswerType::NA);
  EXPECT_THROW(parse_answer_type("PERSON"), ValidationError);
}

TEST(Corpus, QaRoundTripProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    TempDir dir;
    std::vector<QAInstance> qa;
    for (std::size_t i = 0; i < 50; ++i) qa.push_back(conflictqa::testing::random_instance(rng, i));
    write_qa_dataset(dir / "qa.jsonl", qa);
    EXPECT_EQ(load_qa_dataset(dir / "qa.jsonl"), qa);
  }
}

TEST(Corpus, LineCountMatchesRecordCount) {
  TempDir dir;
  std::string text;
  for (int i = 0; i < 3610; ++i)
    text += R"({"id":"nq)" + std::to_string(i) + R"(","question":"q","answers":["a"],"answer_type":"NA"})" "\n";
  write_file(dir / "nq.jsonl", text);
  EXPECT_EQ(load_qa_dataset(dir / "nq.jsonl").size(), 3610u);
}

TEST(Corpus, MalformedLineNamesLineNumber) {
  TempDir dir;
  write_file(dir / "qa.jsonl", R"({"id":"q1","question":"x","answers":["a"],"answer_type":"PER"})" "\n{oops\n");
  try {
    load_qa_dataset(dir / "qa.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Corpus, EmptyAnswersRejected) {
  TempDir dir;
  write_file(dir / "qa.jsonl", R"({"id":"q1","question":"x","answers":[],"answer_type":"PER"})" "\n");
  EXPECT_THROW(load_qa_dataset(dir / "qa.jsonl"), ValidationError);
  write_file(dir / "qa.jsonl", R"({"id":"q1","question":"x","answers":["  "],"answer_type":"PER"})" "\n");
  EXPECT_THROW(load_qa_dataset(dir / "qa.jsonl"), ValidationError);
}

TEST(Corpus, RetrievalTruncation) {
  TempDir dir;
  RetrievedSet s{"q1", {}};
  for (int r = 1; r <= 10; ++r) s.documents.push_back(doc(r));
  write_retrievals(dir / "r.jsonl", {s});
  for (std::size_t k : {1u, 5u, 10u, 25u}) {
    const auto m = load_retrievals(dir / "r.jsonl", k);
    const auto& docs = m.at("q1").documents;
    ASSERT_EQ(docs.size(), std::min<std::size_t>(k, 10));
    for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_EQ(docs[i].rank, static_cast<int>(i + 1));
  }
  EXPECT_THROW(load_retrievals(dir / "r.jsonl", 0), PreconditionError);
}

TEST(Corpus, RetrievalRanksSortedOnLoad) {
  TempDir dir;
  write_file(dir / "r.jsonl",
             R"({"question_id":"q","rank":2,"doc_id":"b","title":"","text":"y"})" "\n"
             R"({"question_id":"q","rank":1,"doc_id":"a","title":"","text":"x"})" "\n");
  const auto m = load_retrievals(dir / "r.jsonl", 5);
  EXPECT_EQ(m.at("q").documents[0].doc_id, "a");
  EXPECT_EQ(m.at("q").documents[1].doc_id, "b");
}

TEST(Corpus, DuplicateRankRejected) {
  TempDir dir;
  write_file(dir / "r.jsonl",
             R"({"question_id":"q","rank":1,"doc_id":"a","title":"","text":"x"})" "\n"
             R"({"question_id":"q","rank":1,"doc_id":"b","title":"","text":"y"})" "\n");
  EXPECT_THROW(load_retrievals(dir / "r.jsonl", 5), ValidationError);
}

TEST(Corpus, LabeledSplitRoundTripAndDeterminism) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    TempDir dir;
    std::vector<RetrievedSet> sets;
    for (std::size_t i = 0; i < 30; ++i) sets.push_back(random_labeled_set(rng, i));
    write_labeled_split(dir / "a.jsonl", sets, 42, {{"method", "entity"}});
    write_labeled_split(dir / "b.jsonl", sets, 42, {{"method", "entity"}});
    EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
    const auto split = load_labeled_split(dir / "a.jsonl");
    EXPECT_EQ(split.sets, sets);
    EXPECT_EQ(split.meta.seed, 42);
    EXPECT_EQ(split.meta.generators.at("method"), "entity");
  }
}

TEST(Corpus, HeaderCarriesSeed) {
  TempDir dir;
  RetrievedSet s{"q1", {doc(1)}};
  write_labeled_split(dir / "s.jsonl", {s}, 42);
  const auto text = read_file(dir / "s.jsonl");
  const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(first.at("type"), "meta");
  EXPECT_EQ(first.at("seed"), 42);
}

TEST(Corpus, LabelConsistencyEnforced) {
  Document d = doc(1);
  d.perturbed = true;
  EXPECT_THROW(validate(d), ValidationError);
  d.perturbed = false;
  d.record = PerturbationRecord{PerturbationMethod::Entity, "a", "b", PerturbationType::ER, std::nullopt};
  EXPECT_THROW(validate(d), ValidationError);
  d.perturbed = true;
  EXPECT_NO_THROW(validate(d));

  PerturbationRecord entity{PerturbationMethod::Entity, "a", std::nullopt, PerturbationType::ER, std::nullopt};
  EXPECT_THROW(validate(entity), ValidationError);
  entity.replacement = "b";
  entity.perturbation_type = PerturbationType::AC;
  EXPECT_THROW(validate(entity), ValidationError);
  PerturbationRecord mac{PerturbationMethod::MacNoise, "a", std::nullopt, std::nullopt, std::nullopt};
  EXPECT_THROW(validate(mac), ValidationError);
  mac.generator_id = "gpt";
  EXPECT_NO_THROW(validate(mac));

  TempDir dir;
  write_file(dir / "s.jsonl", R"({"question_id":"q","rank":1,"doc_id":"a","title":"","text":"x","perturbed":true})" "\n");
  EXPECT_THROW(load_labeled_split(dir / "s.jsonl"), ValidationError);
}

TEST(Corpus, RankContiguityEnforced) {
  RetrievedSet s{"q", {doc(1), doc(3)}};
  EXPECT_THROW(validate(s), ValidationError);
  RetrievedSet ok{"q", {doc(1), doc(2)}};
  EXPECT_NO_THROW(validate(ok, 2));
  EXPECT_THROW(validate(ok, 1), ValidationError);
  TempDir dir;
  EXPECT_THROW(write_retrievals(dir / "r.jsonl", {s}), ValidationError);
}

TEST(Corpus, MetaMustComeFirst) {
  TempDir dir;
  write_file(dir / "s.jsonl",
             R"({"question_id":"q","rank":1,"doc_id":"a","title":"","text":"x"})" "\n"
             R"({"type":"meta","seed":1})" "\n");
  EXPECT_THROW(load_labeled_split(dir / "s.jsonl"), ValidationError);
}

TEST(Corpus, UnwritablePathIsIoError) {
  TempDir dir;
  write_file(dir / "file", "x");
  EXPECT_THROW(write_labeled_split(dir / "file" / "s.jsonl", {}, 1), IoError);
  EXPECT_THROW(load_qa_dataset(dir / "missing.jsonl"), IoError);
}

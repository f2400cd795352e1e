#include <gtest/gtest.h>

#include <set>

#include "conflictqa/entity_perturber.hpp"
#include "conflictqa/synthetic.hpp"

using namespace conflictqa;

namespace {

std::size_t perturbable_docs(const SyntheticCorpus& c, std::size_t* total = nullptr) {
  std::size_t n = 0, all = 0;
  for (std::size_t i = 0; i < c.sets.size(); ++i)
    for (const auto& d : c.sets[i].documents) {
      ++all;
      n += is_perturbable(c.instances[i], d) ? 1 : 0;
    }
  if (total) *total = all;
  return n;
}

}  // namespace

TEST(Synthetic, ShapesAndIds) {
  SyntheticOptions o;
  o.num_subjects = 10;
  const auto c = make_synthetic_corpus(o);
  ASSERT_EQ(c.instances.size(), 50u);
  ASSERT_EQ(c.sets.size(), 50u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < c.sets.size(); ++i) {
    EXPECT_EQ(c.sets[i].question_id, c.instances[i].id);
    EXPECT_EQ(c.sets[i].documents.size(), 5u);
    EXPECT_EQ(c.instances[i].answers.size(), 1u);
    ids.insert(c.instances[i].id);
    for (std::size_t m = 0; m < 5; ++m) {
      EXPECT_EQ(c.sets[i].documents[m].rank, static_cast<int>(m + 1));
      EXPECT_FALSE(c.sets[i].documents[m].perturbed);
    }
  }
  EXPECT_EQ(ids.size(), 50u);
  EXPECT_EQ(c.instances[0].id, "syn-0-0");
}

TEST(Synthetic, AnswerDocumentsBetweenOneAndFour) {
  SyntheticOptions o;
  o.num_subjects = 40;
  const auto c = make_synthetic_corpus(o);
  for (std::size_t i = 0; i < c.sets.size(); ++i) {
    std::size_t n = 0;
    for (const auto& d : c.sets[i].documents) n += is_perturbable(c.instances[i], d) ? 1 : 0;
    EXPECT_GE(n, 1u);
    EXPECT_LE(n, 4u);
  }
}

TEST(Synthetic, AboutHalfTheDocumentsArePerturbable) {
  // Expected answer documents per question: 0.2*1 + 0.35*2 + 0.3*3 + 0.15*4 = 2.4 of 5.
  SyntheticOptions o;
  o.num_subjects = synthetic_max_subjects();
  std::size_t total = 0;
  const auto n = perturbable_docs(make_synthetic_corpus(o), &total);
  EXPECT_EQ(total, 5625u);
  EXPECT_NEAR(static_cast<double>(n) / static_cast<double>(total), 0.48, 0.02);
}

TEST(Synthetic, DeterministicForSeed) {
  SyntheticOptions o;
  o.num_subjects = 12;
  const auto a = make_synthetic_corpus(o);
  const auto b = make_synthetic_corpus(o);
  o.seed = 2;
  const auto c = make_synthetic_corpus(o);
  ASSERT_EQ(a.sets.size(), b.sets.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.sets.size(); ++i) {
    EXPECT_EQ(a.instances[i].answers, b.instances[i].answers);
    for (std::size_t m = 0; m < 5; ++m) {
      EXPECT_EQ(a.sets[i].documents[m].text, b.sets[i].documents[m].text);
      differs |= a.sets[i].documents[m].text != c.sets[i].documents[m].text;
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Synthetic, DisjointOffsetsShareNoSubjects) {
  SyntheticOptions a, b;
  a.num_subjects = 50;
  b.num_subjects = 50;
  b.subject_offset = 50;
  std::set<std::string> titles;
  for (const auto& s : make_synthetic_corpus(a).sets) titles.insert(s.documents[0].title);
  EXPECT_EQ(titles.size(), 50u);
  for (const auto& s : make_synthetic_corpus(b).sets) EXPECT_EQ(titles.count(s.documents[0].title), 0u);
}

TEST(Synthetic, WorldsRepeatQuestionsWithFreshFacts) {
  SyntheticOptions o;
  o.num_subjects = 20;
  o.worlds = 3;
  const auto c = make_synthetic_corpus(o);
  ASSERT_EQ(c.instances.size(), 300u);
  EXPECT_EQ(c.instances[0].id, "syn-w0-0-0");
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(c.instances[i].question, c.instances[i + 100].question);
    changed += c.instances[i].answers != c.instances[i + 100].answers ? 1 : 0;
  }
  EXPECT_GT(changed, 70u);
}

TEST(Synthetic, StatementsCarryTheClassWordOfTheAnswer) {
  SyntheticOptions o;
  o.num_subjects = 15;
  const auto c = make_synthetic_corpus(o);
  for (std::size_t i = 0; i < c.sets.size(); ++i) {
    const auto& answer = c.instances[i].answers[0];
    for (const auto& d : c.sets[i].documents)
      if (is_perturbable(c.instances[i], d))
        EXPECT_NE(d.text.find(synthetic_class_word(answer)), std::string::npos) << d.text;
  }
}

TEST(Synthetic, Preconditions) {
  SyntheticOptions o;
  o.num_subjects = synthetic_max_subjects() + 1;
  EXPECT_THROW(make_synthetic_corpus(o), PreconditionError);
  o = {};
  o.docs_per_question = 3;
  EXPECT_THROW(make_synthetic_corpus(o), PreconditionError);
  o = {};
  o.answer_doc_probs = {0.0, 0.0};
  EXPECT_THROW(make_synthetic_corpus(o), PreconditionError);
  o = {};
  o.worlds = 0;
  EXPECT_THROW(make_synthetic_corpus(o), PreconditionError);
  EXPECT_THROW(synthetic_class_word("nobody"), PreconditionError);
  EXPECT_EQ(synthetic_entities(AnswerType::DATE).size(), 12u);
}

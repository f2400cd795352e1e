#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "conflictqa/corpus.hpp"

namespace conflictqa {

// Small closed-vocabulary conflict task. Each question asks for one typed attribute of a
// subject; 1-4 of the M retrieved documents state the fact and the rest are distractors about
// the subject's other attributes. Every entity belongs to one of three classes, and documents
// stating a fact also carry the class word of the true entity, so a substituted entity of a
// different class leaves a detectable context mismatch.
struct SyntheticOptions {
  std::size_t num_subjects = 60;
  std::size_t docs_per_question = 5;
  // P(number of answer-bearing documents = 1, 2, 3, 4).
  std::vector<double> answer_doc_probs{0.20, 0.35, 0.30, 0.15};
  std::uint64_t seed = 1;
  // Subject names start at this index of the subject grid, so corpora with disjoint ranges
  // share no facts.
  std::size_t subject_offset = 0;
  // Independent fact draws per subject. With several worlds the same question has different
  // answers, so a reader cannot succeed by memorizing subjects.
  std::size_t worlds = 1;
  std::string id_prefix = "syn";
};

struct SyntheticCorpus {
  std::vector<QAInstance> instances;
  std::vector<RetrievedSet> sets;
};

// Entities of one type, in a fixed order.
const std::vector<std::string>& synthetic_entities(AnswerType type);
// Class word carried by documents that state `entity`.
const std::string& synthetic_class_word(const std::string& entity);
std::size_t synthetic_max_subjects();

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options);

}  // namespace conflictqa

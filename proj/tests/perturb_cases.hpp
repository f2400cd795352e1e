#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "conflictqa/entity_perturber.hpp"
#include "conflictqa/rng.hpp"

// Random QA corpora with overlapping aliases for entity-perturbation property checks.
namespace conflictqa::testing::perturb_cases {

inline QAInstance make_q(std::string id, std::vector<std::string> answers, AnswerType t) {
  QAInstance q;
  q.id = std::move(id);
  q.question = "q?";
  q.answers = std::move(answers);
  q.answer_type = t;
  return q;
}

inline Document make_doc(std::string title, std::string text, int rank = 1) {
  Document d;
  d.doc_id = "d" + std::to_string(rank);
  d.title = std::move(title);
  d.text = std::move(text);
  d.rank = rank;
  return d;
}

// Naive oracle: is `alias` present anywhere with non-alphanumeric (or no) neighbours?
inline bool naive_contains(const std::string& text, const std::string& alias) {
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (std::size_t i = 0; i + alias.size() <= text.size(); ++i) {
    if (text.compare(i, alias.size(), alias) != 0) continue;
    const bool left_ok = i == 0 || !alnum(text[i - 1]) || !alnum(alias.front());
    const bool right_ok = i + alias.size() == text.size() || !alnum(text[i + alias.size()]) || !alnum(alias.back());
    if (left_ok && right_ok) return true;
  }
  return false;
}

inline const std::map<AnswerType, std::vector<std::string>> kEntities{
    {AnswerType::PER, {"Michael Jordan", "Kobe Bryant", "Jordan", "Roy Raymond", "John Thompson"}},
    {AnswerType::LOC, {"New York", "York", "Middle Island", "Paris", "Lyon"}},
    {AnswerType::DATE, {"1995", "21995", "1888", "2001"}},
    {AnswerType::NUM, {"12", "7", "120"}},
    {AnswerType::ORG, {"Acme", "Acme Corp", "Globex"}},
};

struct Case {
  std::vector<QAInstance> instances;
  std::vector<RetrievedSet> sets;
};

inline Case random_case(Rng& rng, std::size_t questions) {
  static const std::vector<std::string> filler{"the", "report", "said", "in", ",", ".", "x1995", "of", "and"};
  Case c;
  for (std::size_t i = 0; i < questions; ++i) {
    const auto type = rng.bernoulli(0.15) ? AnswerType::NA : kEntityTypes[rng.below(5)];
    const auto& ents = kEntities.at(type == AnswerType::NA ? AnswerType::PER : type);
    std::vector<std::string> answers{ents[rng.below(ents.size())]};
    if (rng.bernoulli(0.3)) {
      const auto& extra = ents[rng.below(ents.size())];
      if (extra != answers[0]) answers.push_back(extra);
    }
    c.instances.push_back(make_q("q" + std::to_string(i), answers, type));
    RetrievedSet set{c.instances.back().id, {}};
    const int m = 1 + static_cast<int>(rng.below(5));
    for (int r = 1; r <= m; ++r) {
      std::string text;
      const std::size_t words = 3 + rng.below(10);
      for (std::size_t w = 0; w < words; ++w) {
        if (w > 0) text += ' ';
        if (rng.bernoulli(0.2))
          text += answers[rng.below(answers.size())];
        else if (rng.bernoulli(0.1))
          text += ents[rng.below(ents.size())];
        else
          text += filler[rng.below(filler.size())];
      }
      const std::string title = rng.bernoulli(0.3) ? answers[0] + " (film)" : "Title";
      set.documents.push_back(make_doc(title, text, r));
    }
    c.sets.push_back(std::move(set));
  }
  return c;
}

struct InvariantTally {
  std::size_t cases = 0;
  std::size_t perturbed_docs = 0;
  std::size_t violations = 0;
};

// Perturbs `cases` random corpora at random rates and checks type preservation, answer absence,
// same-replacement consistency, immutability of untouched documents and seeded determinism
// (including across thread counts) on every document.
inline InvariantTally run_invariant_suite(std::size_t cases, std::uint64_t base_seed) {
  InvariantTally tally;
  for (std::uint64_t trial = 0; trial < cases; ++trial) {
    Rng gen(base_seed + trial);
    const auto c = random_case(gen, 8);
    const auto pools = build_entity_pools(c.instances);
    const double p = gen.uniform();
    const auto a = perturb_split(c.sets, c.instances, pools, p, trial);
    const auto b = perturb_split(c.sets, c.instances, pools, p, trial, 3);
    ++tally.cases;
    if (a.sets != b.sets) ++tally.violations;
    for (std::size_t i = 0; i < c.sets.size(); ++i) {
      const auto& q = c.instances[i];
      for (std::size_t m = 0; m < c.sets[i].documents.size(); ++m) {
        const auto& before = c.sets[i].documents[m];
        const auto& after = a.sets[i].documents[m];
        if (!is_perturbable(q, before) || !after.perturbed) {
          if (after != before) ++tally.violations;
          continue;
        }
        ++tally.perturbed_docs;
        const auto& rep = *after.record->replacement;
        const auto& pool = pools.of(q.answer_type);
        if (std::find(pool.begin(), pool.end(), rep) == pool.end()) ++tally.violations;
        for (const auto& alias : q.answers)
          if (naive_contains(after.text, alias) || naive_contains(after.title, alias)) ++tally.violations;
        // Rebuilding from the original spans with the one replacement reproduces the output.
        std::string rebuilt = before.text;
        const auto spans = alias_spans(before.text, q.answers);
        for (auto it = spans.rbegin(); it != spans.rend(); ++it) rebuilt.replace(it->begin, it->end - it->begin, rep);
        if (rebuilt != after.text) ++tally.violations;
      }
    }
  }
  return tally;
}

}  // namespace conflictqa::testing::perturb_cases

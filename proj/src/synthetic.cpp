#include "conflictqa/synthetic.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "conflictqa/errors.hpp"
#include "conflictqa/rng.hpp"

namespace conflictqa {

namespace {

const std::array<std::string, 15> kSubjectHeads{"amber", "birch", "cobalt", "dune",  "ember", "frost", "granite", "harbor",
                                                "ivory", "jade",  "kestrel", "linden", "marble", "nettle", "onyx"};
const std::array<std::string, 15> kSubjectTails{"tower", "bridge", "hall", "mill",   "abbey", "arena", "castle", "depot",
                                                "forum", "gate",   "lodge", "manor", "plaza", "quay",  "keep"};

const std::array<std::string, 3> kClassWords{"northern", "central", "southern"};

const std::map<AnswerType, std::vector<std::string>>& entity_table() {
  static const std::map<AnswerType, std::vector<std::string>> table{
      {AnswerType::PER,
       {"alvarez", "brennan", "castillo", "dawson", "eriksen", "fontaine", "garrido", "holloway", "ibarra", "jansen",
        "kowalski", "lindqvist"}},
      {AnswerType::ORG,
       {"acmecorp", "boltworks", "cranfield", "deltaline", "everstone", "fairmont", "globex", "hightide", "ironclad",
        "junction", "keystone", "lumenix"}},
      {AnswerType::LOC,
       {"arlington", "belmont", "carrow", "dunmore", "elmhurst", "fenwick", "glenrock", "hartwell", "ivybridge",
        "kingsley", "lakeport", "millbrook"}},
      {AnswerType::DATE,
       {"1821", "1834", "1847", "1859", "1866", "1872", "1888", "1893", "1905", "1917", "1926", "1938"}},
      {AnswerType::NUM, {"12", "15", "18", "21", "24", "27", "30", "33", "36", "39", "42", "45"}},
  };
  return table;
}

struct Relation {
  AnswerType type;
  std::string question;                // {s} = subject
  std::array<std::string, 2> statements;  // {s} subject, {e} entity, {c} class word
};

const std::array<Relation, 5>& relations() {
  static const std::array<Relation, 5> rel{{
      {AnswerType::PER,
       "who designed {s} ?",
       {"{s} , a {c} landmark , was designed by {e} .", "{e} designed the {c} landmark {s} ."}},
      {AnswerType::ORG,
       "which company owns {s} ?",
       {"{s} , a {c} site , is owned by {e} .", "{e} owns the {c} site {s} ."}},
      {AnswerType::LOC,
       "where is {s} located ?",
       {"{s} is located in {e} , a {c} town .", "the {c} town of {e} is home to {s} ."}},
      {AnswerType::DATE,
       "when was {s} opened ?",
       {"{s} was opened in {e} during the {c} expansion .", "in {e} , the {c} expansion saw {s} open ."}},
      {AnswerType::NUM,
       "how many rooms does {s} have ?",
       {"{s} has {e} rooms in its {c} wing .", "the {c} wing of {s} holds {e} rooms ."}},
  }};
  return rel;
}

const std::array<std::string, 4> kFiller{
    "{s} is a popular stop for visitors .",
    "records about {s} are kept in the archive .",
    "{s} appears in several travel guides .",
    "tours of {s} run every weekend .",
};

std::string fill(std::string tmpl, const std::string& s, const std::string& e, const std::string& c) {
  auto replace = [&](const std::string& key, const std::string& value) {
    for (auto pos = tmpl.find(key); pos != std::string::npos; pos = tmpl.find(key, pos + value.size()))
      tmpl.replace(pos, key.size(), value);
  };
  replace("{s}", s);
  replace("{e}", e);
  replace("{c}", c);
  return tmpl;
}

}  // namespace

const std::vector<std::string>& synthetic_entities(AnswerType type) { return entity_table().at(type); }

const std::string& synthetic_class_word(const std::string& entity) {
  for (const auto& [type, list] : entity_table()) {
    auto it = std::find(list.begin(), list.end(), entity);
    if (it != list.end()) return kClassWords[static_cast<std::size_t>(it - list.begin()) % kClassWords.size()];
  }
  throw PreconditionError("not a synthetic entity: " + entity);
}

std::size_t synthetic_max_subjects() { return kSubjectHeads.size() * kSubjectTails.size(); }

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options) {
  if (options.subject_offset + options.num_subjects > synthetic_max_subjects())
    throw PreconditionError(fmt::format("at most {} synthetic subjects", synthetic_max_subjects()));
  if (options.docs_per_question < options.answer_doc_probs.size() || options.answer_doc_probs.empty())
    throw PreconditionError("docs_per_question must cover the largest answer-document count");
  const double total = std::accumulate(options.answer_doc_probs.begin(), options.answer_doc_probs.end(), 0.0);
  if (!(total > 0.0)) throw PreconditionError("answer_doc_probs must have positive mass");

  Rng rng(options.seed);
  if (options.worlds == 0) throw PreconditionError("worlds must be positive");
  SyntheticCorpus out;
  for (std::size_t world = 0; world < options.worlds; ++world) {
    for (std::size_t si = 0; si < options.num_subjects; ++si) {
      // Walk the grid diagonally so neighbouring subjects share neither word.
      const std::size_t g = options.subject_offset + si;
      const std::size_t head = g % kSubjectHeads.size();
      const std::size_t tail = (g / kSubjectHeads.size() + g) % kSubjectTails.size();
      const std::string subject = kSubjectHeads[head] + " " + kSubjectTails[tail];

      std::array<std::string, 5> facts;
      for (std::size_t r = 0; r < relations().size(); ++r) {
        const auto& ents = synthetic_entities(relations()[r].type);
        facts[r] = ents[rng.below(ents.size())];
      }
      auto statement = [&](std::size_t r) {
        const auto& rel = relations()[r];
        const std::string& cls = synthetic_class_word(facts[r]);
        return fill(rel.statements[rng.below(2)], subject, facts[r], cls);
      };

      for (std::size_t r = 0; r < relations().size(); ++r) {
        QAInstance q;
        q.id = options.worlds == 1 ? fmt::format("{}-{}-{}", options.id_prefix, g, r)
                                   : fmt::format("{}-w{}-{}-{}", options.id_prefix, world, g, r);
        q.question = fill(relations()[r].question, subject, "", "");
        q.answers = {facts[r]};
        q.answer_type = relations()[r].type;

        double u = rng.uniform() * total;
        std::size_t n = 0;
        while (n + 1 < options.answer_doc_probs.size() && u >= options.answer_doc_probs[n])
          u -= options.answer_doc_probs[n++];
        const std::size_t answer_docs = n + 1;

        std::vector<std::string> texts;
        for (std::size_t i = 0; i < answer_docs; ++i) texts.push_back(statement(r));
        std::vector<std::size_t> others;
        for (std::size_t o = 0; o < relations().size(); ++o)
          if (o != r) others.push_back(o);
        while (texts.size() < options.docs_per_question) {
          // Distractors: the subject's other attributes, or filler.
          if (rng.uniform() < 0.75)
            texts.push_back(statement(others[rng.below(others.size())]));
          else
            texts.push_back(fill(kFiller[rng.below(kFiller.size())], subject, "", ""));
        }
        rng.shuffle(texts);

        RetrievedSet set{q.id, {}};
        for (std::size_t i = 0; i < texts.size(); ++i) {
          Document d;
          d.doc_id = fmt::format("{}-d{}", q.id, i);
          d.title = subject;
          d.text = texts[i];
          d.rank = static_cast<int>(i + 1);
          set.documents.push_back(std::move(d));
        }
        out.instances.push_back(std::move(q));
        out.sets.push_back(std::move(set));
      }
    }
  }
  return out;
}

}  // namespace conflictqa

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "conflictqa/corpus.hpp"
#include "conflictqa/errors.hpp"
#include "conflictqa/rng.hpp"

namespace conflictqa {

class PoolExhaustedError : public Error {
 public:
  using Error::Error;
};

// Same-type substitution sources. Each pool keeps first-appearance order and is
// deduplicated case-sensitively.
struct EntityPools {
  std::map<AnswerType, std::vector<std::string>> pools;

  const std::vector<std::string>& of(AnswerType type) const;
  void add(AnswerType type, const std::string& entity);
};

EntityPools build_entity_pools(const std::vector<QAInstance>& instances);

// A half-open byte span [begin, end) of an alias occurrence.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

// Exact, case-sensitive occurrences of `alias` that do not sit strictly inside a longer
// alphanumeric token ("1995" does not match inside "21995").
std::vector<Span> find_occurrences(std::string_view text, std::string_view alias);
bool contains_alias(std::string_view text, std::string_view alias);
bool contains_any_alias(std::string_view text, const std::vector<std::string>& aliases);

// Left-to-right scan that takes the longest alias matching at each position.
std::vector<Span> alias_spans(std::string_view text, const std::vector<std::string>& aliases);

bool is_perturbable(const QAInstance& instance, const Document& doc);

// First alias in list order present in the title or text, if any.
const std::string* matched_alias(const QAInstance& instance, const Document& doc);

// Replaces every alias span in title and text with one replacement sampled from
// pools[instance.answer_type]. Throws PreconditionError when the document is not
// perturbable and PoolExhaustedError when no admissible replacement exists.
std::pair<Document, PerturbationRecord> perturb_document(const QAInstance& instance, const Document& doc,
                                                         const EntityPools& pools, Rng& rng);

struct PerturbationReport {
  std::size_t total_documents = 0;
  std::size_t perturbable = 0;
  std::size_t perturbed = 0;
  std::size_t skipped_pool_exhausted = 0;
  std::map<AnswerType, std::size_t> perturbed_by_type;

  double perturbed_fraction() const {
    return total_documents == 0 ? 0.0 : static_cast<double>(perturbed) / static_cast<double>(total_documents);
  }
  nlohmann::json to_json() const;
  PerturbationReport& operator+=(const PerturbationReport& other);
};

struct PerturbedSplit {
  std::vector<RetrievedSet> sets;
  PerturbationReport report;
};

// Each perturbable, not-yet-perturbed document is independently perturbed with probability p.
// Randomness for a set is derived from (seed, question_id), so the result does not depend on
// `threads` or on the order of `sets`.
PerturbedSplit perturb_split(const std::vector<RetrievedSet>& sets, const std::vector<QAInstance>& instances,
                             const EntityPools& pools, double p, std::uint64_t seed, unsigned threads = 1);

// Fresh perturbation draw for one training epoch.
std::vector<RetrievedSet> resample_for_training(const std::vector<RetrievedSet>& sets,
                                                const std::vector<QAInstance>& instances,
                                                const EntityPools& pools, double p, std::uint64_t epoch_seed);

}  // namespace conflictqa
